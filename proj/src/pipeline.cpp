#include "ocds/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "ocds/rng.hpp"
#include "ocds/scaling.hpp"
#include "ocds/vec.hpp"

namespace ocds {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_string(const std::string& text,
                                            const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + t + "'");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    }
    if (!cfg.entries_.emplace(key, value).second) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
    }
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_file(const std::filesystem::path& path) {
  return parse_string(read_text_file(path), path.string());
}

bool KeyValueConfig::has(const std::string& key) const {
  auto it = entries_.find(key);
  if (it != entries_.end()) read_[key] = true;
  return it != entries_.end();
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
  }
  read_[key] = true;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  read_[key] = true;
  return it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  read_[key] = true;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" +
                      it->second + "'");
  }
}

std::int64_t KeyValueConfig::get_int(const std::string& key,
                                     std::int64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  read_[key] = true;
  try {
    std::size_t pos = 0;
    std::int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not an integer: '" +
                      it->second + "'");
  }
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key,
                                       std::uint64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  read_[key] = true;
  try {
    std::size_t pos = 0;
    std::uint64_t v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key +
                      "' is not an unsigned integer: '" + it->second + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  read_[key] = true;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError(origin_ + ": key '" + key + "' is not a boolean: '" +
                    it->second + "'");
}

std::vector<std::string> KeyValueConfig::unread_keys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : entries_) {
    if (!read_.count(key)) out.push_back(key);
  }
  return out;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  return base / path;
}

}  // namespace

PipelineConfig PipelineConfig::from_config(const KeyValueConfig& kv,
                                           const std::filesystem::path& base_dir) {
  PipelineConfig cfg;
  cfg.corpus = resolve(base_dir, kv.get_string("corpus"));
  cfg.downstream = resolve(base_dir, kv.get_string("downstream"));
  cfg.out_dir = resolve(base_dir, kv.get_string("out"));
  if (kv.has("vocab")) cfg.vocab = resolve(base_dir, kv.get_string("vocab"));
  std::string tok = kv.get_string("tokenizer", "whitespace");
  if (tok == "whitespace") {
    cfg.tokenizer = TokenizerMode::kWhitespace;
  } else if (tok == "character") {
    cfg.tokenizer = TokenizerMode::kCharacter;
  } else {
    throw ConfigError("tokenizer must be 'whitespace' or 'character', got '" +
                      tok + "'");
  }
  cfg.seed = kv.get_uint("seed", 0);
  cfg.force = kv.get_bool("force", false);

  cfg.proxy_size = static_cast<std::size_t>(kv.get_int("proxy.size", 64));
  cfg.pretrain_steps = static_cast<int>(kv.get_int("pretrain.steps", 500));
  cfg.pretrain_batch = static_cast<std::size_t>(kv.get_int("pretrain.batch", 0));

  std::string opt = kv.get_string("solver.optimizer", "gd");
  if (opt == "gd") {
    cfg.optimizer = OptimizerKind::kGd;
  } else if (opt == "adam") {
    cfg.optimizer = OptimizerKind::kAdam;
  } else {
    throw ConfigError("solver.optimizer must be 'gd' or 'adam', got '" + opt + "'");
  }
  cfg.adam.beta1 = kv.get_double("adam.beta1", cfg.adam.beta1);
  cfg.adam.beta2 = kv.get_double("adam.beta2", cfg.adam.beta2);
  cfg.adam.eps = kv.get_double("adam.eps", cfg.adam.eps);

  cfg.solver.eta = kv.get_double("solver.eta", 0.008);
  cfg.solver.alpha = kv.get_double("solver.alpha", 1.0);
  cfg.solver.inner_steps = static_cast<int>(kv.get_int("solver.steps", 100));
  cfg.solver.outer_epochs = static_cast<int>(kv.get_int("solver.outer_epochs", 1));
  cfg.solver.checkpoint_count = static_cast<int>(kv.get_int("solver.checkpoints", 5));
  cfg.solver.batch_size = static_cast<std::size_t>(kv.get_int("solver.batch", 256));
  cfg.solver.step_stride = static_cast<int>(kv.get_int("solver.stride", 1));
  std::string hvp = kv.get_string("solver.hvp", "auto");
  if (hvp == "auto") {
    cfg.solver.hvp_path = HvpPath::kAuto;
  } else if (hvp == "exact") {
    cfg.solver.hvp_path = HvpPath::kExact;
  } else if (hvp == "fd") {
    cfg.solver.hvp_path = HvpPath::kFiniteDifference;
  } else {
    throw ConfigError("solver.hvp must be 'auto', 'exact' or 'fd', got '" + hvp + "'");
  }

  cfg.extractor.dim = static_cast<std::uint32_t>(kv.get_int("scorer.dim", 256));
  cfg.extractor.max_order = static_cast<int>(kv.get_int("scorer.max_order", 2));
  cfg.scorer_fit.val_fraction = kv.get_double("scorer.val_fraction", 0.1);
  cfg.scorer_fit.low_correlation_threshold =
      kv.get_double("scorer.low_correlation_threshold", 0.2);
  if (kv.has("scorer.lambda_grid")) {
    std::string grid = kv.get_string("scorer.lambda_grid");
    cfg.scorer_fit.lambda_grid.clear();
    std::istringstream gs(grid);
    std::string item;
    while (std::getline(gs, item, ',')) {
      try {
        cfg.scorer_fit.lambda_grid.push_back(std::stod(trim(item)));
      } catch (const std::exception&) {
        throw ConfigError("scorer.lambda_grid: cannot parse '" + item + "'");
      }
    }
  }

  cfg.selection.ratio = kv.get_double("select.ratio", 0.4);
  bool has_tau = kv.has("select.tau");
  bool has_delta = kv.has("select.delta");
  double tau = kv.get_double("select.tau", 0.1);
  double delta = kv.get_double("select.delta", 0.1);
  if (has_tau && has_delta && tau != delta) {
    throw ConfigError(
        "select.tau and select.delta are the same knob; set only one");
  }
  cfg.selection.tau = has_delta && !has_tau ? delta : tau;

  auto unread = kv.unread_keys();
  if (!unread.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unread) msg += " '" + k + "'";
    throw ConfigError(msg);
  }
  cfg.validate();
  return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
  KeyValueConfig kv = KeyValueConfig::parse_file(path);
  return from_config(kv, path.parent_path());
}

void PipelineConfig::validate() const {
  if (corpus.empty()) throw ConfigError("pipeline: corpus path is required");
  if (downstream.empty()) throw ConfigError("pipeline: downstream path is required");
  if (out_dir.empty()) throw ConfigError("pipeline: out dir is required");
  if (proxy_size < 1) throw ConfigError("pipeline: proxy.size must be >= 1");
  if (pretrain_steps < 1) throw ConfigError("pipeline: pretrain.steps must be >= 1");
  if (pretrain_steps < solver.checkpoint_count) {
    throw ConfigError("pipeline: pretrain.steps must be >= solver.checkpoints");
  }
  solver.validate();
  extractor.validate();
  scorer_fit.validate();
  selection.validate();
}

void save_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  nlohmann::json j;
  j["config_digest"] = manifest.config_digest;
  j["stages"] = nlohmann::json::array();
  for (const auto& s : manifest.stages) {
    nlohmann::json js;
    js["name"] = s.name;
    js["input_digest"] = s.input_digest;
    js["artifacts"] = s.artifacts;
    js["artifact_digests"] = s.artifact_digests;
    js["skipped"] = s.skipped;
    js["millis"] = s.millis;
    j["stages"].push_back(js);
  }
  write_text_file(path, j.dump(2) + "\n");
}

std::optional<RunManifest> load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
    RunManifest m;
    m.config_digest = j.at("config_digest").get<std::string>();
    for (const auto& js : j.at("stages")) {
      StageRecord s;
      s.name = js.at("name").get<std::string>();
      s.input_digest = js.at("input_digest").get<std::string>();
      s.artifacts = js.at("artifacts").get<std::vector<std::string>>();
      s.artifact_digests = js.at("artifact_digests").get<std::vector<std::string>>();
      s.skipped = js.at("skipped").get<bool>();
      s.millis = js.at("millis").get<double>();
      m.stages.push_back(std::move(s));
    }
    return m;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;  // stale or foreign manifest; rebuild everything
  }
}

Dataset sample_proxy(const Dataset& corpus, std::size_t size, std::uint64_t seed,
                     std::vector<std::int64_t>* original_ids) {
  if (size < 1) throw ConfigError("sample_proxy: size must be >= 1");
  if (size > corpus.size()) {
    throw ConfigError("sample_proxy: requested " + std::to_string(size) +
                      " of " + std::to_string(corpus.size()) + " instances");
  }
  std::vector<std::int64_t> ids(corpus.size());
  std::iota(ids.begin(), ids.end(), std::int64_t{0});
  Rng rng(seed);
  rng.shuffle(ids);
  ids.resize(size);
  std::sort(ids.begin(), ids.end());

  Dataset proxy;
  proxy.role = DatasetRole::kProxy;
  if (original_ids) original_ids->clear();
  for (std::int64_t id : ids) {
    Instance inst = corpus[static_cast<std::size_t>(id)];
    if (original_ids) original_ids->push_back(inst.id);
    inst.id = static_cast<std::int64_t>(proxy.size());
    proxy.instances.push_back(std::move(inst));
  }
  return proxy;
}

namespace {

struct StageRunner {
  const PipelineConfig& cfg;
  std::optional<RunManifest> previous;
  RunManifest manifest;
  std::string stop_after;
  bool stopped = false;

  bool can_skip(const std::string& name, const std::string& input_digest,
                const std::vector<std::string>& artifacts) const {
    if (cfg.force || !previous) return false;
    for (const auto& rec : previous->stages) {
      if (rec.name != name) continue;
      if (rec.input_digest != input_digest) return false;
      if (rec.artifacts != artifacts) return false;
      for (std::size_t i = 0; i < rec.artifacts.size(); ++i) {
        std::filesystem::path p = cfg.out_dir / rec.artifacts[i];
        if (!std::filesystem::exists(p)) return false;
        if (file_digest(p) != rec.artifact_digests[i]) return false;
      }
      return true;
    }
    return false;
  }

  template <typename Fn>
  void stage(const std::string& name, const std::string& input_digest,
             const std::vector<std::string>& artifacts, Fn&& fn) {
    if (stopped) return;
    StageRecord rec;
    rec.name = name;
    rec.input_digest = input_digest;
    rec.artifacts = artifacts;
    if (can_skip(name, input_digest, artifacts)) {
      rec.skipped = true;
      for (const auto& a : artifacts) {
        rec.artifact_digests.push_back(file_digest(cfg.out_dir / a));
      }
      manifest.stages.push_back(std::move(rec));
      if (name == stop_after) stopped = true;
      return;
    }
    auto start = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const NumericalError& e) {
      throw NumericalError("stage " + name + ": " + e.what());
    }
    auto end = std::chrono::steady_clock::now();
    rec.millis = std::chrono::duration<double, std::milli>(end - start).count();
    for (const auto& a : artifacts) {
      std::filesystem::path p = cfg.out_dir / a;
      if (!std::filesystem::exists(p)) {
        throw NumericalError("stage " + name + " did not produce artifact " + a);
      }
      rec.artifact_digests.push_back(file_digest(p));
    }
    manifest.stages.push_back(std::move(rec));
    if (name == stop_after) stopped = true;
  }
};

std::string fingerprint(std::initializer_list<std::string> parts) {
  std::string buf;
  for (const auto& p : parts) {
    buf += p;
    buf += '\x1f';
  }
  return hex64(fnv1a64(buf.data(), buf.size()));
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunManifest run_pipeline(const PipelineConfig& cfg, const std::string& stop_after) {
  cfg.validate();
  if (!std::filesystem::exists(cfg.corpus)) {
    throw ConfigError("corpus file not found: " + cfg.corpus.string());
  }
  if (!std::filesystem::exists(cfg.downstream)) {
    throw ConfigError("downstream file not found: " + cfg.downstream.string());
  }
  std::filesystem::create_directories(cfg.out_dir);

  StageRunner runner{cfg, load_manifest(cfg.out_dir / "manifest.json"), {},
                     stop_after, false};

  const std::uint64_t proxy_seed = stage_seed(cfg.seed, "sample_proxy");
  const std::uint64_t pretrain_seed = stage_seed(cfg.seed, "pretrain");
  const std::uint64_t solve_seed = stage_seed(cfg.seed, "solve");
  const std::uint64_t split_seed = stage_seed(cfg.seed, "scorer_split");
  const std::uint64_t select_seed = stage_seed(cfg.seed, "select");

  // Stage: ingest. Canonical binary corpora in the output directory.
  std::string ingest_inputs = fingerprint(
      {file_digest(cfg.corpus), file_digest(cfg.downstream),
       cfg.vocab ? file_digest(*cfg.vocab) : "none",
       cfg.tokenizer == TokenizerMode::kWhitespace ? "ws" : "char"});
  runner.stage("ingest", ingest_inputs, {"corpus.bin", "downstream.bin"}, [&] {
    TokenCorpus corpus, downstream;
    if (cfg.vocab) {
      Vocab vocab = read_vocab(*cfg.vocab);
      corpus = read_text_corpus(cfg.corpus, vocab, cfg.tokenizer);
      downstream = read_text_corpus(cfg.downstream, vocab, cfg.tokenizer,
                                    DatasetRole::kDownstream);
    } else {
      corpus = read_binary_corpus(cfg.corpus);
      downstream = read_binary_corpus(cfg.downstream, DatasetRole::kDownstream);
    }
    if (corpus.vocab_size != downstream.vocab_size) {
      throw ConfigError("corpus and downstream vocab sizes differ (" +
                        std::to_string(corpus.vocab_size) + " vs " +
                        std::to_string(downstream.vocab_size) + ")");
    }
    if (corpus.data.empty()) throw ConfigError("corpus is empty");
    if (downstream.data.empty()) throw ConfigError("downstream set is empty");
    write_binary_corpus(cfg.out_dir / "corpus.bin", corpus.data,
                        corpus.vocab_size);
    write_binary_corpus(cfg.out_dir / "downstream.bin", downstream.data,
                        downstream.vocab_size);
  });

  // Stage: proxy sample.
  std::string proxy_inputs =
      runner.stopped ? ""
                     : fingerprint({file_digest(cfg.out_dir / "corpus.bin"),
                                    std::to_string(cfg.proxy_size),
                                    std::to_string(proxy_seed)});
  runner.stage("sample_proxy", proxy_inputs, {"proxy.bin", "proxy_ids.tsv"}, [&] {
    TokenCorpus corpus = read_binary_corpus(cfg.out_dir / "corpus.bin");
    std::vector<std::int64_t> original_ids;
    Dataset proxy =
        sample_proxy(corpus.data, cfg.proxy_size, proxy_seed, &original_ids);
    write_binary_corpus(cfg.out_dir / "proxy.bin", proxy, corpus.vocab_size);
    std::vector<std::int64_t> local(original_ids.size());
    std::iota(local.begin(), local.end(), std::int64_t{0});
    std::vector<double> as_double(original_ids.begin(), original_ids.end());
    write_id_value_tsv(cfg.out_dir / "proxy_ids.tsv", "original_id", local,
                       as_double);
  });

  // Stage: pretrain proxy model, keeping evenly spaced checkpoints.
  const int m_count = cfg.solver.checkpoint_count;
  std::vector<std::string> ckpt_names;
  const int spacing = cfg.pretrain_steps / m_count;
  for (int k = 1; k <= m_count; ++k) {
    ckpt_names.push_back(checkpoint_filename(
        static_cast<std::size_t>(k) * static_cast<std::size_t>(spacing)));
  }
  std::string pretrain_inputs =
      runner.stopped
          ? ""
          : fingerprint({file_digest(cfg.out_dir / "proxy.bin"),
                         std::to_string(cfg.pretrain_steps),
                         std::to_string(cfg.pretrain_batch),
                         std::to_string(m_count), num(cfg.solver.eta),
                         cfg.optimizer == OptimizerKind::kAdam ? "adam" : "gd",
                         num(cfg.adam.beta1), num(cfg.adam.beta2),
                         num(cfg.adam.eps), std::to_string(pretrain_seed)});
  runner.stage("pretrain", pretrain_inputs, ckpt_names, [&] {
    TokenCorpus proxy = read_binary_corpus(cfg.out_dir / "proxy.bin",
                                           DatasetRole::kProxy);
    BigramModel model(proxy.vocab_size);
    std::vector<double> gamma = uniform_weights(proxy.data.size());
    ParamVector theta0(model.param_count(), 0.0);
    OptimizerConfig opt;
    opt.kind = cfg.optimizer;
    opt.eta = cfg.solver.eta;
    opt.adam = cfg.adam;
    BatchConfig batch{cfg.pretrain_batch, pretrain_seed};
    Trajectory traj = train(model, proxy.data, gamma, theta0,
                            cfg.pretrain_steps, opt, batch);
    for (int k = 1; k <= m_count; ++k) {
      std::size_t step = static_cast<std::size_t>(k) *
                         static_cast<std::size_t>(spacing);
      write_checkpoint(cfg.out_dir / checkpoint_filename(step),
                       traj.checkpoint(step));
    }
  });

  // Stage: solve data weights from every checkpoint and average.
  std::string solve_inputs;
  if (!runner.stopped) {
    std::string ckpt_digests;
    for (const auto& name : ckpt_names) {
      ckpt_digests += file_digest(cfg.out_dir / name);
    }
    solve_inputs = fingerprint(
        {file_digest(cfg.out_dir / "proxy.bin"),
         file_digest(cfg.out_dir / "downstream.bin"), ckpt_digests,
         num(cfg.solver.eta), num(cfg.solver.alpha),
         std::to_string(cfg.solver.inner_steps),
         std::to_string(cfg.solver.outer_epochs),
         std::to_string(cfg.solver.batch_size),
         std::to_string(cfg.solver.step_stride),
         std::to_string(static_cast<int>(cfg.solver.hvp_path)),
         cfg.optimizer == OptimizerKind::kAdam ? "adam" : "gd",
         std::to_string(solve_seed)});
  }
  runner.stage("solve", solve_inputs, {"gamma.tsv"}, [&] {
    TokenCorpus proxy = read_binary_corpus(cfg.out_dir / "proxy.bin",
                                           DatasetRole::kProxy);
    TokenCorpus downstream = read_binary_corpus(cfg.out_dir / "downstream.bin",
                                                DatasetRole::kDownstream);
    BigramModel model(proxy.vocab_size);
    SolverConfig solver = cfg.solver;
    solver.seed = solve_seed;
    std::vector<ParamVector> checkpoints;
    for (const auto& name : ckpt_names) {
      checkpoints.push_back(read_checkpoint(cfg.out_dir / name));
    }
    std::vector<double> gamma;
    if (cfg.optimizer == OptimizerKind::kAdam) {
      gamma.assign(proxy.data.size(), 0.0);
      double inv = 1.0 / static_cast<double>(checkpoints.size());
      for (const auto& theta0 : checkpoints) {
        std::vector<double> g = pmp_solve_adam(model, proxy.data,
                                               downstream.data, theta0, solver,
                                               cfg.adam);
        for (std::size_t i = 0; i < gamma.size(); ++i) gamma[i] += inv * g[i];
      }
    } else {
      gamma = multi_checkpoint_scores(model, proxy.data, downstream.data,
                                      checkpoints, solver);
    }
    std::vector<std::int64_t> ids(gamma.size());
    std::iota(ids.begin(), ids.end(), std::int64_t{0});
    write_id_value_tsv(cfg.out_dir / "gamma.tsv", "gamma", ids, gamma);
  });

  // Stage: fit the scorer on (proxy features, solved weights).
  std::string scorer_inputs =
      runner.stopped
          ? ""
          : fingerprint({file_digest(cfg.out_dir / "proxy.bin"),
                         file_digest(cfg.out_dir / "gamma.tsv"),
                         std::to_string(cfg.extractor.dim),
                         std::to_string(cfg.extractor.max_order),
                         std::to_string(cfg.extractor.hash_salt),
                         num(cfg.scorer_fit.val_fraction),
                         num(cfg.scorer_fit.low_correlation_threshold),
                         std::to_string(split_seed)});
  runner.stage("train_scorer", scorer_inputs, {"scorer.json"}, [&] {
    TokenCorpus proxy = read_binary_corpus(cfg.out_dir / "proxy.bin",
                                           DatasetRole::kProxy);
    IdValueTable gamma = read_id_value_tsv(cfg.out_dir / "gamma.tsv");
    if (gamma.values.size() != proxy.data.size()) {
      throw ConfigError("gamma.tsv row count does not match proxy size");
    }
    ScorerFitConfig fit = cfg.scorer_fit;
    fit.split_seed = split_seed;
    ScorerModel model = fit_scorer(proxy.data, gamma.values, cfg.extractor, fit);
    save_scorer(cfg.out_dir / "scorer.json", model);
  });

  // Stage: score the full corpus.
  std::string score_inputs =
      runner.stopped
          ? ""
          : fingerprint({file_digest(cfg.out_dir / "corpus.bin"),
                         file_digest(cfg.out_dir / "scorer.json")});
  runner.stage("score", score_inputs, {"scores.tsv"}, [&] {
    TokenCorpus corpus = read_binary_corpus(cfg.out_dir / "corpus.bin");
    ScorerModel model = load_scorer(cfg.out_dir / "scorer.json");
    std::vector<double> scores = infer_scores(model, corpus.data);
    std::vector<std::int64_t> ids(scores.size());
    std::iota(ids.begin(), ids.end(), std::int64_t{0});
    write_id_value_tsv(cfg.out_dir / "scores.tsv", "score", ids, scores);
  });

  // Stage: perturbed top-K selection.
  std::string select_inputs =
      runner.stopped
          ? ""
          : fingerprint({file_digest(cfg.out_dir / "scores.tsv"),
                         num(cfg.selection.ratio), num(cfg.selection.tau),
                         std::to_string(select_seed)});
  runner.stage("select", select_inputs, {"selection.tsv", "selection.json"}, [&] {
    IdValueTable scores = read_id_value_tsv(cfg.out_dir / "scores.tsv");
    SelectionConfig sel = cfg.selection;
    sel.seed = select_seed;
    SelectionResult result = gumbel_topk(scores.values, sel);
    write_selection_tsv(cfg.out_dir / "selection.tsv", result, true);
    write_selection_manifest(cfg.out_dir / "selection.json", result,
                             scores.values.size());
  });

  // Stage: materialize the selected corpus.
  std::string materialize_inputs =
      runner.stopped
          ? ""
          : fingerprint({file_digest(cfg.out_dir / "corpus.bin"),
                         file_digest(cfg.out_dir / "selection.tsv")});
  runner.stage("materialize", materialize_inputs, {"selected.bin"}, [&] {
    TokenCorpus corpus = read_binary_corpus(cfg.out_dir / "corpus.bin");
    std::vector<std::int64_t> ids =
        read_selection_ids(cfg.out_dir / "selection.tsv");
    Dataset selected = materialize_selection(corpus.data, ids);
    write_binary_corpus(cfg.out_dir / "selected.bin", selected,
                        corpus.vocab_size);
  });

  // A partial run keeps the previous records of stages it never reached, so
  // a later full run can still skip them when their inputs are unchanged.
  if (runner.stopped && runner.previous) {
    for (const auto& rec : runner.previous->stages) {
      bool present = false;
      for (const auto& cur : runner.manifest.stages) {
        if (cur.name == rec.name) {
          present = true;
          break;
        }
      }
      if (!present) runner.manifest.stages.push_back(rec);
    }
  }

  runner.manifest.config_digest = fingerprint(
      {ingest_inputs, proxy_inputs, pretrain_inputs, solve_inputs, scorer_inputs,
       score_inputs, select_inputs, materialize_inputs});
  save_manifest(cfg.out_dir / "manifest.json", runner.manifest);
  return runner.manifest;
}

PlantedFixture make_planted_fixture(const PlantedFixtureConfig& config) {
  if (config.vocab < 2) throw ConfigError("planted fixture: vocab must be >= 2");
  if (config.corpus_size < 2 || config.seq_len < 2) {
    throw ConfigError("planted fixture: corpus_size and seq_len must be >= 2");
  }
  if (!(config.corrupt_fraction >= 0.0 && config.corrupt_fraction <= 1.0)) {
    throw ConfigError("planted fixture: corrupt_fraction must be in [0, 1]");
  }
  if (!(config.next_prob >= 0.0 && config.next_prob <= 1.0)) {
    throw ConfigError("planted fixture: next_prob must be in [0, 1]");
  }
  Rng rng(config.seed);
  const std::uint32_t v = config.vocab;

  auto clean_sequence = [&rng, &config, v]() {
    std::vector<std::uint32_t> toks(config.seq_len);
    std::uint32_t cur = static_cast<std::uint32_t>(rng.next_below(v));
    for (std::size_t j = 0; j < config.seq_len; ++j) {
      toks[j] = cur;
      if (rng.next_unit_open() < config.next_prob) {
        cur = (cur + 1) % v;
      } else {
        cur = static_cast<std::uint32_t>(rng.next_below(v));
      }
    }
    return toks;
  };

  PlantedFixture fx;
  fx.vocab = v;
  const std::size_t n = config.corpus_size;
  const auto n_corrupt = static_cast<std::size_t>(
      std::llround(config.corrupt_fraction * static_cast<double>(n)));
  const std::size_t n_clean = n - n_corrupt;

  for (std::size_t i = 0; i < n; ++i) {
    Instance inst;
    inst.id = static_cast<std::int64_t>(i);
    inst.tokens = clean_sequence();
    double severity = 0.0;
    if (config.graded) {
      severity = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    } else if (i >= n_clean) {
      severity = 1.0;
    }
    if (severity > 0.0) {
      // Shuffle the suffix; unigram stats survive, transition structure dies.
      auto cut = config.seq_len -
                 static_cast<std::size_t>(std::llround(
                     severity * static_cast<double>(config.seq_len)));
      std::vector<std::uint32_t> tail(inst.tokens.begin() + cut,
                                      inst.tokens.end());
      rng.shuffle(tail);
      std::copy(tail.begin(), tail.end(), inst.tokens.begin() + cut);
    }
    fx.is_clean.push_back(severity == 0.0 ? 1 : 0);
    fx.quality.push_back(1.0 - severity);
    fx.corpus.instances.push_back(std::move(inst));
  }

  fx.downstream.role = DatasetRole::kDownstream;
  for (std::size_t i = 0; i < config.downstream_size; ++i) {
    Instance inst;
    inst.id = static_cast<std::int64_t>(i);
    inst.tokens = clean_sequence();
    fx.downstream.instances.push_back(std::move(inst));
  }
  return fx;
}

namespace {

double run_eval_auc(const BigramModel& model, const Dataset& corpus,
                    std::span<const double> gamma, const Dataset& downstream,
                    int steps, double eta) {
  ParamVector theta(model.param_count(), 0.0);
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    theta = gd_step(model, corpus, gamma, theta, eta);
    curve.push_back(downstream_loss(model, downstream, theta));
  }
  return compute_auc(curve);
}

}  // namespace

SimulationReport simulate_exact_vs_efficient(const SimulationConfig& config) {
  PlantedFixture fx = make_planted_fixture(config.fixture);
  BigramModel model(fx.vocab);
  ParamVector theta0(model.param_count(), 0.0);

  SolverConfig exact;
  exact.eta = config.eta;
  exact.alpha = config.alpha;
  exact.inner_steps = config.inner_steps;
  exact.outer_epochs = config.exact_outer_epochs;
  exact.batch_size = 0;
  exact.seed = stage_seed(config.seed, "exact");
  exact.hvp_path = config.hvp_path;

  SimulationReport report;
  report.exact_gamma =
      pmp_solve(model, fx.corpus, fx.downstream, theta0, exact);

  // Efficient path: pretrain once, solve once per checkpoint with one outer
  // epoch, and average.
  std::vector<double> uniform = uniform_weights(fx.corpus.size());
  OptimizerConfig opt;
  opt.kind = OptimizerKind::kGd;
  opt.eta = config.eta;
  Trajectory pretrain_traj = train(model, fx.corpus, uniform, theta0,
                                   config.pretrain_steps, opt);
  const int spacing = config.pretrain_steps / config.checkpoint_count;
  if (spacing < 1) {
    throw ConfigError("simulate: pretrain_steps must be >= checkpoint_count");
  }
  std::vector<ParamVector> checkpoints;
  for (int k = 1; k <= config.checkpoint_count; ++k) {
    checkpoints.push_back(pretrain_traj.checkpoint(
        static_cast<std::size_t>(k) * static_cast<std::size_t>(spacing)));
  }
  SolverConfig efficient = exact;
  efficient.outer_epochs = 1;
  efficient.seed = stage_seed(config.seed, "efficient");
  report.efficient_gamma = multi_checkpoint_scores(
      model, fx.corpus, fx.downstream, checkpoints, efficient);

  report.auc_exact = run_eval_auc(model, fx.corpus, report.exact_gamma,
                                  fx.downstream, config.eval_steps, config.eta);
  report.auc_efficient =
      run_eval_auc(model, fx.corpus, report.efficient_gamma, fx.downstream,
                   config.eval_steps, config.eta);
  report.auc_uniform = run_eval_auc(model, fx.corpus, uniform, fx.downstream,
                                    config.eval_steps, config.eta);

  for (std::size_t i = 0; i < fx.corpus.size(); ++i) {
    if (fx.is_clean[i]) {
      report.clean_mass_exact += report.exact_gamma[i];
      report.clean_mass_efficient += report.efficient_gamma[i];
    }
  }

  double corpus_tokens = 0.0;
  for (const auto& inst : fx.corpus.instances) {
    corpus_tokens += static_cast<double>(inst.tokens.size());
  }
  const double params = static_cast<double>(model.param_count());
  const double inner_tokens =
      corpus_tokens * static_cast<double>(config.inner_steps);
  report.flops_exact =
      24.0 * params * inner_tokens * static_cast<double>(config.exact_outer_epochs);
  report.flops_efficient =
      6.0 * params * corpus_tokens * static_cast<double>(config.pretrain_steps) +
      24.0 * params * inner_tokens * static_cast<double>(config.checkpoint_count);
  return report;
}

void save_simulation_report(const std::filesystem::path& path,
                            const SimulationReport& report) {
  nlohmann::json j;
  j["auc_exact"] = report.auc_exact;
  j["auc_efficient"] = report.auc_efficient;
  j["auc_uniform"] = report.auc_uniform;
  j["clean_mass_exact"] = report.clean_mass_exact;
  j["clean_mass_efficient"] = report.clean_mass_efficient;
  j["flops_exact"] = report.flops_exact;
  j["flops_efficient"] = report.flops_efficient;
  j["exact_gamma"] = report.exact_gamma;
  j["efficient_gamma"] = report.efficient_gamma;
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace ocds
