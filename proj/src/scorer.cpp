#include "ocds/scorer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "ocds/io.hpp"
#include "ocds/rng.hpp"
#include "ocds/vec.hpp"

namespace ocds {
namespace {

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ull;

  void absorb_byte(unsigned char b) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  void absorb_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) absorb_byte(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  }
  void absorb_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) absorb_byte(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  }
};

std::vector<std::size_t> rank_order(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&x](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  return order;
}

// Fractional ranks (1-based), ties share the average rank.
std::vector<double> fractional_ranks(std::span<const double> x) {
  auto order = rank_order(x);
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double da = a[i] - ma;
    double db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

std::vector<std::vector<double>> all_features(const ExtractorConfig& config,
                                              const Dataset& data) {
  std::vector<std::vector<double>> rows;
  rows.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    rows.push_back(extract_features(config, data[i]));
  }
  return rows;
}

double predict_one(const ScorerModel& model, std::span<const double> features) {
  double z = dot(model.w, features) + model.b;
  return z * model.target_std + model.target_mean;
}

// Validation positions: explicit when provided, otherwise a seeded sample.
std::vector<std::size_t> pick_val_positions(std::size_t n,
                                            const ScorerFitConfig& fit) {
  if (!fit.val_indices.empty()) {
    std::vector<std::size_t> val = fit.val_indices;
    std::sort(val.begin(), val.end());
    val.erase(std::unique(val.begin(), val.end()), val.end());
    if (val.back() >= n) {
      throw ConfigError("scorer: validation index out of range");
    }
    if (val.size() >= n) {
      throw ConfigError("scorer: validation split leaves no training data");
    }
    return val;
  }
  if (fit.val_fraction <= 0.0 || n < 2) return {};
  auto nval = static_cast<std::size_t>(
      std::llround(fit.val_fraction * static_cast<double>(n)));
  nval = std::clamp<std::size_t>(nval, 1, n - 1);
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  Rng rng(fit.split_seed);
  rng.shuffle(positions);
  positions.resize(nval);
  std::sort(positions.begin(), positions.end());
  return positions;
}

}  // namespace

void ExtractorConfig::validate() const {
  if (dim < 1) throw ConfigError("extractor: dim must be >= 1");
  if (max_order < 1 || max_order > 8) {
    throw ConfigError("extractor: max_order must be in 1..8");
  }
}

std::uint64_t ExtractorConfig::config_digest() const {
  Fnv f;
  f.absorb_u32(dim);
  f.absorb_u32(static_cast<std::uint32_t>(max_order));
  f.absorb_u64(hash_salt);
  return f.h;
}

std::vector<double> hashed_ngram_counts(const ExtractorConfig& config,
                                        const Instance& x, int order) {
  config.validate();
  if (order < 1) throw ConfigError("extractor: order must be >= 1");
  std::vector<double> counts(config.dim, 0.0);
  const auto& toks = x.tokens;
  if (toks.size() < static_cast<std::size_t>(order)) return counts;
  for (std::size_t start = 0; start + order <= toks.size(); ++start) {
    Fnv f;
    f.absorb_u64(config.hash_salt);
    f.absorb_u32(static_cast<std::uint32_t>(order));
    for (int j = 0; j < order; ++j) f.absorb_u32(toks[start + j]);
    counts[f.h % config.dim] += 1.0;
  }
  return counts;
}

std::vector<double> extract_features(const ExtractorConfig& config,
                                     const Instance& x) {
  config.validate();
  std::vector<double> features(config.dim, 0.0);
  const double inv_orders = 1.0 / static_cast<double>(config.max_order);
  for (int order = 1; order <= config.max_order; ++order) {
    std::vector<double> counts = hashed_ngram_counts(config, x, order);
    double n = norm2(counts);
    if (n == 0.0) continue;
    for (std::uint32_t j = 0; j < config.dim; ++j) {
      features[j] += inv_orders * counts[j] / n;
    }
  }
  return features;
}

std::optional<double> spearman(std::span<const double> a,
                               std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("spearman: length mismatch");
  if (a.size() < 2) return std::nullopt;
  std::vector<double> ra = fractional_ranks(a);
  std::vector<double> rb = fractional_ranks(b);
  return pearson(ra, rb);
}

RidgeResult ridge_fit(const std::vector<std::vector<double>>& rows,
                      std::span<const double> y, double lambda) {
  const std::size_t n = rows.size();
  if (n == 0) throw ConfigError("ridge: no rows");
  if (y.size() != n) throw ConfigError("ridge: target length mismatch");
  if (!(lambda >= 0.0)) throw ConfigError("ridge: lambda must be >= 0");
  const std::size_t d = rows[0].size();
  for (const auto& r : rows) {
    if (r.size() != d) throw ConfigError("ridge: ragged feature rows");
  }

  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd t(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rows[i][j];
    t(i) = y[i];
  }
  Eigen::RowVectorXd xmean = x.colwise().mean();
  double ymean = t.mean();
  x.rowwise() -= xmean;
  t.array() -= ymean;

  Eigen::MatrixXd a = (x.transpose() * x) / static_cast<double>(n);
  a.diagonal().array() += lambda;
  Eigen::VectorXd rhs = (x.transpose() * t) / static_cast<double>(n);
  Eigen::LDLT<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("ridge: normal equations are singular");
  }
  Eigen::VectorXd w = solver.solve(rhs);
  if (!w.allFinite()) throw NumericalError("ridge: non-finite solution");

  RidgeResult result;
  result.w.assign(w.data(), w.data() + d);
  result.b = ymean - xmean * w;
  return result;
}

void ScorerFitConfig::validate() const {
  if (lambda_grid.empty()) throw ConfigError("scorer: empty lambda grid");
  for (double l : lambda_grid) {
    if (!(l >= 0.0)) throw ConfigError("scorer: lambda must be >= 0");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("scorer: val_fraction must be in [0, 1)");
  }
  if (!(low_correlation_threshold >= 0.0)) {
    throw ConfigError("scorer: low_correlation_threshold must be >= 0");
  }
}

ScorerModel fit_scorer(const Dataset& proxy, std::span<const double> targets,
                       const ExtractorConfig& extractor,
                       const ScorerFitConfig& fit) {
  extractor.validate();
  fit.validate();
  const std::size_t n = proxy.size();
  if (n == 0) throw ConfigError("scorer: empty proxy set");
  if (targets.size() != n) throw ConfigError("scorer: target length mismatch");

  std::vector<std::vector<double>> rows = all_features(extractor, proxy);
  std::vector<std::size_t> val = pick_val_positions(n, fit);
  std::vector<bool> in_val(n, false);
  for (std::size_t p : val) in_val[p] = true;

  std::vector<std::vector<double>> train_rows;
  std::vector<double> train_y;
  for (std::size_t i = 0; i < n; ++i) {
    if (in_val[i]) continue;
    train_rows.push_back(rows[i]);
    train_y.push_back(targets[i]);
  }

  ScorerModel model;
  model.extractor = extractor;
  double mean = 0.0;
  for (double v : train_y) mean += v;
  mean /= static_cast<double>(train_y.size());
  double var = 0.0;
  for (double v : train_y) var += (v - mean) * (v - mean);
  double std_dev = std::sqrt(var / static_cast<double>(train_y.size()));
  model.target_mean = mean;
  model.target_std = std_dev;

  if (std_dev == 0.0) {
    // Constant targets carry no ranking signal; the model predicts the mean.
    model.degenerate = true;
    model.w.assign(extractor.dim, 0.0);
    model.b = 0.0;
    model.lambda = fit.lambda_grid.front();
    return model;
  }

  std::vector<double> train_z(train_y.size());
  for (std::size_t i = 0; i < train_y.size(); ++i) {
    train_z[i] = (train_y[i] - mean) / std_dev;
  }

  bool have_best = false;
  double best_rho = 0.0;
  for (double lambda : fit.lambda_grid) {
    RidgeResult r = ridge_fit(train_rows, train_z, lambda);
    std::optional<double> rho;
    if (!val.empty()) {
      std::vector<double> pred, truth;
      pred.reserve(val.size());
      truth.reserve(val.size());
      ScorerModel probe = model;
      probe.w = r.w;
      probe.b = r.b;
      for (std::size_t p : val) {
        pred.push_back(predict_one(probe, rows[p]));
        truth.push_back(targets[p]);
      }
      rho = spearman(pred, truth);
    }
    double rho_value = rho.value_or(-2.0);
    if (!have_best || rho_value > best_rho) {
      have_best = true;
      best_rho = rho_value;
      model.w = r.w;
      model.b = r.b;
      model.lambda = lambda;
      model.val_spearman = rho;
    }
    if (val.empty()) break;  // nothing to compare on; keep the first lambda
  }
  model.low_correlation =
      !val.empty() && (!model.val_spearman.has_value() ||
                       std::abs(*model.val_spearman) <
                           fit.low_correlation_threshold);
  return model;
}

ScorerModel fit_scorer_iterative(const Dataset& proxy,
                                 std::span<const double> targets,
                                 const ExtractorConfig& extractor,
                                 const IterativeFitConfig& fit,
                                 const ScorerFitConfig& split) {
  extractor.validate();
  split.validate();
  if (fit.epochs < 1) throw ConfigError("scorer: epochs must be >= 1");
  if (!(fit.learning_rate > 0.0)) throw ConfigError("scorer: learning rate must be > 0");
  const std::size_t n = proxy.size();
  if (n == 0) throw ConfigError("scorer: empty proxy set");
  if (targets.size() != n) throw ConfigError("scorer: target length mismatch");

  std::vector<std::vector<double>> rows = all_features(extractor, proxy);
  std::vector<std::size_t> val = pick_val_positions(n, split);
  std::vector<bool> in_val(n, false);
  for (std::size_t p : val) in_val[p] = true;
  std::vector<std::size_t> train_pos;
  for (std::size_t i = 0; i < n; ++i) {
    if (!in_val[i]) train_pos.push_back(i);
  }

  double mean = 0.0;
  for (std::size_t p : train_pos) mean += targets[p];
  mean /= static_cast<double>(train_pos.size());
  double var = 0.0;
  for (std::size_t p : train_pos) var += (targets[p] - mean) * (targets[p] - mean);
  double std_dev = std::sqrt(var / static_cast<double>(train_pos.size()));

  ScorerModel model;
  model.extractor = extractor;
  model.target_mean = mean;
  model.target_std = std_dev;
  model.lambda = fit.lambda;
  model.w.assign(extractor.dim, 0.0);
  model.b = 0.0;
  if (std_dev == 0.0) {
    model.degenerate = true;
    return model;
  }

  const std::size_t d = extractor.dim;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> mw(d, 0.0), vw(d, 0.0), gw(d);
  double mb = 0.0, vb = 0.0;
  std::int64_t step = 0;
  Rng rng(fit.seed);
  std::size_t batch = std::min<std::size_t>(
      fit.batch_size == 0 ? train_pos.size() : fit.batch_size, train_pos.size());

  for (int epoch = 0; epoch < fit.epochs; ++epoch) {
    rng.shuffle(train_pos);
    for (std::size_t lo = 0; lo < train_pos.size(); lo += batch) {
      std::size_t hi = std::min(lo + batch, train_pos.size());
      std::fill(gw.begin(), gw.end(), 0.0);
      double gb = 0.0;
      double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        std::size_t p = train_pos[i];
        double z = (targets[p] - mean) / std_dev;
        double err = dot(model.w, rows[p]) + model.b - z;
        axpy(2.0 * inv * err, rows[p], gw);
        gb += 2.0 * inv * err;
      }
      axpy(2.0 * fit.lambda, model.w, gw);
      ++step;
      double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
      double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (std::size_t j = 0; j < d; ++j) {
        mw[j] = b1 * mw[j] + (1.0 - b1) * gw[j];
        vw[j] = b2 * vw[j] + (1.0 - b2) * gw[j] * gw[j];
        model.w[j] -= fit.learning_rate * (mw[j] / bc1) /
                      (std::sqrt(vw[j] / bc2) + eps);
      }
      mb = b1 * mb + (1.0 - b1) * gb;
      vb = b2 * vb + (1.0 - b2) * gb * gb;
      model.b -= fit.learning_rate * (mb / bc1) / (std::sqrt(vb / bc2) + eps);
    }
  }

  if (!val.empty()) {
    std::vector<double> pred, truth;
    for (std::size_t p : val) {
      pred.push_back(predict_one(model, rows[p]));
      truth.push_back(targets[p]);
    }
    model.val_spearman = spearman(pred, truth);
  }
  model.low_correlation =
      !val.empty() && (!model.val_spearman.has_value() ||
                       std::abs(*model.val_spearman) <
                           split.low_correlation_threshold);
  return model;
}

std::vector<double> infer_scores(const ScorerModel& model, const Dataset& corpus) {
  if (model.w.size() != model.extractor.dim) {
    throw ConfigError("scorer: weight vector does not match extractor dim");
  }
  std::vector<double> scores(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::vector<double> features = extract_features(model.extractor, corpus[i]);
    scores[i] = predict_one(model, features);
  }
  return scores;
}

void save_scorer(const std::filesystem::path& path, const ScorerModel& model) {
  nlohmann::json j;
  j["extractor"]["dim"] = model.extractor.dim;
  j["extractor"]["max_order"] = model.extractor.max_order;
  j["extractor"]["hash_salt"] = model.extractor.hash_salt;
  j["w"] = model.w;
  j["b"] = model.b;
  j["target_mean"] = model.target_mean;
  j["target_std"] = model.target_std;
  j["lambda"] = model.lambda;
  if (model.val_spearman) {
    j["val_spearman"] = *model.val_spearman;
  } else {
    j["val_spearman"] = nullptr;
  }
  j["degenerate"] = model.degenerate;
  j["low_correlation"] = model.low_correlation;
  write_text_file(path, j.dump(2) + "\n");
}

ScorerModel load_scorer(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid scorer file: " + e.what());
  }
  ScorerModel model;
  try {
    model.extractor.dim = j.at("extractor").at("dim").get<std::uint32_t>();
    model.extractor.max_order = j.at("extractor").at("max_order").get<int>();
    model.extractor.hash_salt = j.at("extractor").at("hash_salt").get<std::uint64_t>();
    model.w = j.at("w").get<std::vector<double>>();
    model.b = j.at("b").get<double>();
    model.target_mean = j.at("target_mean").get<double>();
    model.target_std = j.at("target_std").get<double>();
    model.lambda = j.at("lambda").get<double>();
    if (!j.at("val_spearman").is_null()) {
      model.val_spearman = j.at("val_spearman").get<double>();
    }
    model.degenerate = j.at("degenerate").get<bool>();
    model.low_correlation = j.at("low_correlation").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid scorer file: " + e.what());
  }
  model.extractor.validate();
  if (model.w.size() != model.extractor.dim) {
    throw ConfigError(path.string() + ": weight vector does not match dim");
  }
  return model;
}

}  // namespace ocds
