// Data scorer: lifts solved per-instance weights from a small proxy set to
// arbitrary corpora. Features are hashed n-gram bags; the regressor is ridge
// with an intercept, selected over a small regularization grid by validation
// Spearman correlation.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ocds/types.hpp"

namespace ocds {

struct ExtractorConfig {
  std::uint32_t dim = 256;   // hashed feature dimension
  int max_order = 2;         // n-gram orders 1..max_order
  std::uint64_t hash_salt = 0x9e3779b97f4a7c15ull;

  void validate() const;
  std::uint64_t config_digest() const;
};

// Raw hashed counts for one n-gram order (before normalization).
std::vector<double> hashed_ngram_counts(const ExtractorConfig& config,
                                        const Instance& x, int order);

// Per-order count vectors, each L2-normalized, averaged over orders.
// An instance with no n-grams at any order maps to the zero vector.
std::vector<double> extract_features(const ExtractorConfig& config,
                                     const Instance& x);

// Spearman rank correlation with average ranks on ties. Empty when either
// side has zero rank variance.
std::optional<double> spearman(std::span<const double> a,
                               std::span<const double> b);

struct RidgeResult {
  std::vector<double> w;
  double b = 0.0;
};

// Minimizes (1/n) * ||X w + b - y||^2 + lambda * ||w||^2. The data term is
// normalized by n so duplicating every row leaves the solution unchanged.
RidgeResult ridge_fit(const std::vector<std::vector<double>>& rows,
                      std::span<const double> y, double lambda);

struct ScorerModel {
  ExtractorConfig extractor;
  std::vector<double> w;
  double b = 0.0;
  // Targets are standardized on the training split; inference inverts this.
  double target_mean = 0.0;
  double target_std = 1.0;
  double lambda = 0.0;
  std::optional<double> val_spearman;
  bool degenerate = false;       // constant training targets
  bool low_correlation = false;  // |val Spearman| below the report threshold
};

struct ScorerFitConfig {
  std::vector<double> lambda_grid{1e-6, 1e-4, 1e-2, 1.0};
  double val_fraction = 0.1;
  std::uint64_t split_seed = 0;
  // When set, overrides the seeded split (positions into the proxy set).
  std::vector<std::size_t> val_indices;
  double low_correlation_threshold = 0.2;

  void validate() const;
};

ScorerModel fit_scorer(const Dataset& proxy, std::span<const double> targets,
                       const ExtractorConfig& extractor,
                       const ScorerFitConfig& fit = {});

// Mini-batch gradient variant of the same objective (kept for parity with
// iterative training setups; the closed form is the default path).
struct IterativeFitConfig {
  int epochs = 5;
  double learning_rate = 1e-4;
  std::size_t batch_size = 512;
  double lambda = 1e-4;
  std::uint64_t seed = 0;
};
ScorerModel fit_scorer_iterative(const Dataset& proxy,
                                 std::span<const double> targets,
                                 const ExtractorConfig& extractor,
                                 const IterativeFitConfig& fit,
                                 const ScorerFitConfig& split = {});

std::vector<double> infer_scores(const ScorerModel& model, const Dataset& corpus);

void save_scorer(const std::filesystem::path& path, const ScorerModel& model);
ScorerModel load_scorer(const std::filesystem::path& path);

}  // namespace ocds
