// Core value types shared across the library.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ocds {

using ParamVector = std::vector<double>;

// Invalid or inconsistent configuration / input files. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure (divergence, non-finite values, singular systems).
// CLI maps this to exit code 3 and prints the failing stage.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

enum class DatasetRole { kFullCorpus, kProxy, kDownstream };

// One training instance. Token-sequence payload for language models,
// dense vector payload for the quadratic toy model; the model decides
// which field it reads.
struct Instance {
  std::int64_t id = 0;
  std::vector<std::uint32_t> tokens;
  std::vector<double> values;
};

struct Dataset {
  std::vector<Instance> instances;
  DatasetRole role = DatasetRole::kFullCorpus;

  std::size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }
  const Instance& operator[](std::size_t i) const { return instances[i]; }

  // Instances must be stored in id order 0..n-1 so that per-instance
  // weight vectors (gamma, scores) index by position.
  void validate_ids() const {
    for (std::size_t i = 0; i < instances.size(); ++i) {
      if (instances[i].id != static_cast<std::int64_t>(i)) {
        throw ConfigError("dataset ids must be 0..n-1 in order; found id " +
                          std::to_string(instances[i].id) + " at position " +
                          std::to_string(i));
      }
    }
  }

  void renumber() {
    for (std::size_t i = 0; i < instances.size(); ++i) {
      instances[i].id = static_cast<std::int64_t>(i);
    }
  }
};

}  // namespace ocds
