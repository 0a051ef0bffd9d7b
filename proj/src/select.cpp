#include "ocds/select.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "ocds/io.hpp"
#include "ocds/rng.hpp"

namespace ocds {

void SelectionConfig::validate() const {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw ConfigError("selection: ratio must be in [0, 1]");
  }
  if (!(tau >= 0.0)) throw ConfigError("selection: tau must be >= 0");
}

SelectionResult gumbel_topk(std::span<const double> scores,
                            const SelectionConfig& config) {
  config.validate();
  const std::size_t n = scores.size();
  if (n == 0) throw ConfigError("selection: no scores");
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericalError("selection: non-finite score");
  }

  std::size_t k = static_cast<std::size_t>(
      std::floor(config.ratio * static_cast<double>(n)));
  k = std::max<std::size_t>(1, std::min(k, n));

  std::vector<double> keys(n);
  if (config.tau == 0.0) {
    std::copy(scores.begin(), scores.end(), keys.begin());
  } else {
    Rng rng(config.seed);
    for (std::size_t i = 0; i < n; ++i) {
      double u = rng.next_unit_open();
      keys[i] = scores[i] - config.tau * std::log(-std::log(u));
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&keys](std::size_t a, std::size_t b) {
                     if (keys[a] != keys[b]) return keys[a] > keys[b];
                     return a < b;
                   });
  order.resize(k);
  std::sort(order.begin(), order.end());

  SelectionResult result;
  result.k = k;
  result.config = config;
  result.ids.reserve(k);
  result.keys.reserve(k);
  for (std::size_t idx : order) {
    result.ids.push_back(static_cast<std::int64_t>(idx));
    result.keys.push_back(keys[idx]);
  }
  return result;
}

void write_selection_tsv(const std::filesystem::path& path,
                         const SelectionResult& result, bool with_keys) {
  std::string buf = with_keys ? "instance_id\tkey\n" : "instance_id\n";
  char num[64];
  for (std::size_t i = 0; i < result.ids.size(); ++i) {
    buf += std::to_string(result.ids[i]);
    if (with_keys) {
      std::snprintf(num, sizeof(num), "%.17g", result.keys[i]);
      buf += '\t';
      buf += num;
    }
    buf += '\n';
  }
  write_text_file(path, buf);
}

std::vector<std::int64_t> read_selection_ids(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
  std::vector<std::int64_t> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      ids.push_back(std::stoll(line.substr(0, line.find('\t'))));
    } catch (const std::exception&) {
      throw ConfigError(path.string() + ": cannot parse id row '" + line + "'");
    }
  }
  return ids;
}

void write_selection_manifest(const std::filesystem::path& path,
                              const SelectionResult& result,
                              std::size_t corpus_size) {
  nlohmann::json j;
  j["ratio"] = result.config.ratio;
  j["tau"] = result.config.tau;
  j["seed"] = result.config.seed;
  j["k"] = result.k;
  j["corpus_size"] = corpus_size;
  write_text_file(path, j.dump(2) + "\n");
}

Dataset materialize_selection(const Dataset& corpus,
                              std::span<const std::int64_t> ids,
                              std::vector<std::int64_t>* original_ids) {
  Dataset out;
  out.role = corpus.role;
  if (original_ids) original_ids->clear();
  for (std::int64_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= corpus.size()) {
      throw ConfigError("selection id " + std::to_string(id) +
                        " out of corpus range");
    }
    Instance inst = corpus[static_cast<std::size_t>(id)];
    if (original_ids) original_ids->push_back(inst.id);
    inst.id = static_cast<std::int64_t>(out.size());
    out.instances.push_back(std::move(inst));
  }
  return out;
}

}  // namespace ocds
