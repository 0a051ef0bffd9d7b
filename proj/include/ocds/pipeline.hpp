// End-to-end orchestration: corpus ingest, proxy sampling, pretraining
// checkpoints, weight solving, scorer fit, corpus scoring, selection, and
// materialization, with a manifest that lets unchanged stages be skipped.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ocds/io.hpp"
#include "ocds/optim.hpp"
#include "ocds/pmp.hpp"
#include "ocds/scorer.hpp"
#include "ocds/select.hpp"
#include "ocds/types.hpp"

namespace ocds {

// Flat "key = value" file with '#' comments. Dotted keys namespace the
// sections. Unknown keys are rejected by the consumers to catch typos.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::filesystem::path& path);
  static KeyValueConfig parse_string(const std::string& text,
                                     const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Keys never read by any accessor; used to reject typos.
  std::vector<std::string> unread_keys() const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
  mutable std::map<std::string, bool> read_;
  std::string origin_;
};

struct PipelineConfig {
  std::filesystem::path corpus;
  std::filesystem::path downstream;
  std::optional<std::filesystem::path> vocab;  // set => text corpora
  TokenizerMode tokenizer = TokenizerMode::kWhitespace;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  bool force = false;

  std::size_t proxy_size = 64;
  int pretrain_steps = 500;
  std::size_t pretrain_batch = 0;

  OptimizerKind optimizer = OptimizerKind::kGd;
  AdamConfig adam;
  SolverConfig solver;

  ExtractorConfig extractor;
  ScorerFitConfig scorer_fit;
  SelectionConfig selection;

  static PipelineConfig from_file(const std::filesystem::path& path);
  static PipelineConfig from_config(const KeyValueConfig& kv,
                                    const std::filesystem::path& base_dir);
  void validate() const;
};

struct StageRecord {
  std::string name;
  std::string input_digest;
  std::vector<std::string> artifacts;  // paths relative to out_dir
  std::vector<std::string> artifact_digests;
  bool skipped = false;
  double millis = 0.0;
};

struct RunManifest {
  std::string config_digest;
  std::vector<StageRecord> stages;
};

void save_manifest(const std::filesystem::path& path, const RunManifest& manifest);
std::optional<RunManifest> load_manifest(const std::filesystem::path& path);

// Runs every stage in order, skipping those whose inputs and recorded
// artifacts are unchanged (unless force is set). Artifacts land in out_dir;
// the manifest is written to out_dir / "manifest.json". Per-stage seeds are
// derived from config.seed. A non-empty stop_after halts after the named
// stage ("ingest", "sample_proxy", "pretrain", "solve", "train_scorer",
// "score", "select", "materialize").
RunManifest run_pipeline(const PipelineConfig& config,
                         const std::string& stop_after = "");

// Seeded sample without replacement, preserving corpus order; ids are
// renumbered 0..size-1 and original ids reported via original_ids.
Dataset sample_proxy(const Dataset& corpus, std::size_t size, std::uint64_t seed,
                     std::vector<std::int64_t>* original_ids = nullptr);

// Synthetic corpus with a planted quality signal: clean sequences follow a
// peaked Markov chain over a small vocabulary, corrupted ones have a suffix
// shuffled (severity = fraction shuffled). The downstream set is held-out
// clean data.
struct PlantedFixtureConfig {
  std::uint32_t vocab = 8;
  std::size_t corpus_size = 64;
  std::size_t seq_len = 48;
  std::size_t downstream_size = 16;
  double corrupt_fraction = 0.5;  // fraction of instances corrupted
  double next_prob = 0.9;         // P(next token = current + 1 mod V)
  bool graded = false;            // severity graded per instance instead of all-or-nothing
  std::uint64_t seed = 0;
};

struct PlantedFixture {
  Dataset corpus;
  Dataset downstream;
  std::vector<int> is_clean;    // 1 for uncorrupted instances
  std::vector<double> quality;  // planted quality in [0, 1]
  std::uint32_t vocab = 0;
};

PlantedFixture make_planted_fixture(const PlantedFixtureConfig& config);

// Head-to-head of the direct solver against the multi-checkpoint variant on
// a planted fixture: both produce weights, each weight vector is evaluated
// by retraining from scratch and integrating the downstream loss curve.
struct SimulationConfig {
  PlantedFixtureConfig fixture;
  double eta = 0.05;
  double alpha = 1.0;
  int inner_steps = 40;
  int exact_outer_epochs = 3;
  int pretrain_steps = 200;
  int checkpoint_count = 5;  // M
  int eval_steps = 60;
  HvpPath hvp_path = HvpPath::kAuto;
  std::uint64_t seed = 0;
};

struct SimulationReport {
  std::vector<double> exact_gamma;
  std::vector<double> efficient_gamma;
  double auc_exact = 0.0;
  double auc_efficient = 0.0;
  double auc_uniform = 0.0;
  double clean_mass_exact = 0.0;      // weight mass on clean instances
  double clean_mass_efficient = 0.0;
  double flops_exact = 0.0;
  double flops_efficient = 0.0;
};

SimulationReport simulate_exact_vs_efficient(const SimulationConfig& config);
void save_simulation_report(const std::filesystem::path& path,
                            const SimulationReport& report);

}  // namespace ocds
