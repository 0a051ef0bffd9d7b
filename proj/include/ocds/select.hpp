// Final subset selection: perturbed top-K (Gumbel keys) over scores.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ocds/types.hpp"

namespace ocds {

struct SelectionConfig {
  double ratio = 0.4;  // selected fraction of the corpus
  double tau = 0.1;    // perturbation temperature; 0 = deterministic top-K
  std::uint64_t seed = 0;

  void validate() const;
};

struct SelectionResult {
  std::vector<std::int64_t> ids;  // ascending
  std::vector<double> keys;       // perturbed keys, aligned with ids
  std::size_t k = 0;
  SelectionConfig config;
};

// key_n = score_n - tau * log(-log u_n) with u_n drawn per index in id order;
// the K = max(1, floor(ratio * n)) largest keys win, ties broken by smaller
// id. tau = 0 uses the scores themselves as keys.
SelectionResult gumbel_topk(std::span<const double> scores,
                            const SelectionConfig& config);

void write_selection_tsv(const std::filesystem::path& path,
                         const SelectionResult& result, bool with_keys);
std::vector<std::int64_t> read_selection_ids(const std::filesystem::path& path);
void write_selection_manifest(const std::filesystem::path& path,
                              const SelectionResult& result,
                              std::size_t corpus_size);

// Subset corpus with instances renumbered 0..K-1; original_ids receives the
// source id of each kept instance when non-null.
Dataset materialize_selection(const Dataset& corpus,
                              std::span<const std::int64_t> ids,
                              std::vector<std::int64_t>* original_ids = nullptr);

}  // namespace ocds
