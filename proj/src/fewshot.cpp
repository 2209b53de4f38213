#include "ancor/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <exception>

#include "ancor/kernels.hpp"
#include "ancor/numcore.hpp"

namespace ancor {

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::FiveWay: return "5-way";
    case EvalMode::AllWay: return "all-way";
    case EvalMode::IntraClass: return "intra-class";
    case EvalMode::CoarseAllWay: return "coarse-all-way";
  }
  return "?";
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "5-way" || s == "five-way") return EvalMode::FiveWay;
  if (s == "all-way") return EvalMode::AllWay;
  if (s == "intra-class") return EvalMode::IntraClass;
  if (s == "coarse" || s == "coarse-all-way") return EvalMode::CoarseAllWay;
  throw ConfigError("unknown eval mode '" + s + "'");
}

void EvalConfig::validate() const {
  if (episodes < 1) throw ConfigError("eval: episodes must be >= 1");
  if (shot < 1) throw ConfigError("eval: shot must be >= 1");
  if (queries < 1) throw ConfigError("eval: queries must be >= 1");
  if (mode == EvalMode::FiveWay && ways < 2) throw ConfigError("eval: need at least 2 ways");
  if (head.iterations < 1 || !(head.step > 0.0) || !(head.l2 >= 0.0)) throw ConfigError("eval: invalid LR head config");
  augment.validate();
}

Episode sample_episode(const Dataset& data, const Hierarchy& hierarchy, EvalMode mode, std::size_t ways,
                       std::size_t shot, std::size_t queries, Rng& rng) {
  Episode ep;
  ep.shot = shot;
  ep.coarse_labels = mode == EvalMode::CoarseAllWay;
  const std::size_t num_groups = ep.coarse_labels ? hierarchy.num_coarse : hierarchy.num_fine();
  std::vector<std::vector<std::size_t>> members(num_groups);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t g = ep.coarse_labels ? data.coarse[i] : data.fine[i];
    if (g >= num_groups) throw EpisodeError("sample_episode: label outside the hierarchy");
    members[g].push_back(i);
  }

  switch (mode) {
    case EvalMode::FiveWay: {
      if (ways > num_groups)
        throw EpisodeError("sample_episode: " + std::to_string(ways) + "-way needs that many fine classes, have " +
                           std::to_string(num_groups));
      std::vector<std::size_t> all(num_groups);
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      ep.classes.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(ways));
      break;
    }
    case EvalMode::AllWay:
    case EvalMode::CoarseAllWay:
      ep.classes.resize(num_groups);
      std::iota(ep.classes.begin(), ep.classes.end(), 0);
      break;
    case EvalMode::IntraClass: {
      const std::size_t c = std::uniform_int_distribution<std::size_t>(0, hierarchy.num_coarse - 1)(rng);
      ep.classes = hierarchy.subclasses_of(c);
      break;
    }
  }
  ep.way = ep.classes.size();

  for (std::size_t w = 0; w < ep.way; ++w) {
    auto pool = members[ep.classes[w]];
    if (pool.size() < shot + queries)
      throw EpisodeError("sample_episode: class " + std::to_string(ep.classes[w]) + " has " +
                         std::to_string(pool.size()) + " samples, need " + std::to_string(shot + queries));
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; i < shot; ++i) {
      ep.support.push_back(pool[i]);
      ep.support_labels.push_back(w);
    }
    for (std::size_t i = 0; i < queries; ++i) {
      ep.query.push_back(pool[shot + i]);
      ep.query_labels.push_back(w);
    }
  }
  return ep;
}

Matrix extract_features(const AncorModel& model, const Matrix& x) { return l2_normalize_rows(encode(model, x)); }

FeatureFn model_features(const AncorModel& model) {
  return [&model](const Matrix& x) { return extract_features(model, x); };
}

Matrix LrHead::probabilities(const Matrix& features) const {
  Matrix logits = matmul_nt(features, weight);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
    softmax(row, row);
  }
  return logits;
}

std::vector<std::size_t> LrHead::predict(const Matrix& features) const { return argmax_rows(probabilities(features)); }

namespace {

double cosine_step(const LrHeadConfig& cfg, std::size_t it) {
  return cfg.step * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(it) / static_cast<double>(cfg.iterations)));
}

// resid <- (softmax(logits + b) - onehot) / n, in place.
void softmax_residual(Matrix& logits, const std::vector<double>& bias, std::span<const std::size_t> labels) {
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
    softmax(row, row);
    row[labels[r]] -= 1.0;
    for (double& v : row) v *= inv_n;
  }
}

void bias_step(std::vector<double>& bias, const Matrix& resid, double step) {
  for (std::size_t k = 0; k < bias.size(); ++k) {
    double g = 0.0;
    for (std::size_t i = 0; i < resid.rows(); ++i) g += resid(i, k);
    bias[k] -= step * g;
  }
}

}  // namespace

LrHead fit_lr_head(const Matrix& features, std::span<const std::size_t> labels, std::size_t ways,
                   const LrHeadConfig& cfg) {
  const std::size_t n = features.rows(), dim = features.cols();
  if (labels.size() != n) throw DimensionError("fit_lr_head: label count mismatch");
  for (std::size_t y : labels)
    if (y >= ways) throw IndexError("fit_lr_head: label " + std::to_string(y) + " outside " + std::to_string(ways) + " ways");
  LrHead head{Matrix(ways, dim), std::vector<double>(ways, 0.0)};

  if (n < dim) {
    // From a zero start W stays in the row space of the features: W = A F.
    // Iterating on A with the Gram matrix is the same descent, cheaper.
    const Matrix gram = matmul_nt(features, features);
    Matrix coef(ways, n);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      const double step = cosine_step(cfg, it);
      Matrix resid = matmul_nt(gram, coef);
      softmax_residual(resid, head.bias, labels);
      coef *= 1.0 - step * cfg.l2;
      for (std::size_t k = 0; k < ways; ++k)
        for (std::size_t i = 0; i < n; ++i) coef(k, i) -= step * resid(i, k);
      bias_step(head.bias, resid, step);
    }
    head.weight = matmul(coef, features);
    return head;
  }

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double step = cosine_step(cfg, it);
    Matrix resid = matmul_nt(features, head.weight);
    softmax_residual(resid, head.bias, labels);
    const Matrix grad_w = matmul_tn(resid, features);
    for (std::size_t k = 0; k < ways; ++k) {
      auto w = head.weight.row(k);
      const auto g = grad_w.row(k);
      for (std::size_t c = 0; c < dim; ++c) w[c] -= step * (g[c] + cfg.l2 * w[c]);
    }
    bias_step(head.bias, resid, step);
  }
  return head;
}

SupportSet build_support(const FeatureFn& features, const Episode& ep, const Dataset& data, const EvalConfig& cfg,
                         Rng& rng) {
  const std::size_t views = cfg.support_augment_copies + (cfg.include_original_support ? 1 : 0);
  if (views == 0) throw ConfigError("eval: support needs at least one view");
  Matrix inputs(ep.support.size() * views, data.features.cols());
  SupportSet s;
  std::size_t r = 0;
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    const auto x = data.features.row(ep.support[i]);
    if (cfg.include_original_support) {
      std::copy(x.begin(), x.end(), inputs.row(r++).begin());
      s.labels.push_back(ep.support_labels[i]);
    }
    for (std::size_t c = 0; c < cfg.support_augment_copies; ++c) {
      const auto v = augment(x, rng, cfg.augment);
      std::copy(v.begin(), v.end(), inputs.row(r++).begin());
      s.labels.push_back(ep.support_labels[i]);
    }
  }
  s.features = features(inputs);
  return s;
}

Matrix lr_probabilities(const FeatureFn& features, const Episode& ep, const Dataset& data, const EvalConfig& cfg,
                        Rng& rng) {
  const SupportSet s = build_support(features, ep, data, cfg, rng);
  const LrHead head = fit_lr_head(s.features, s.labels, ep.way, cfg.head);
  return head.probabilities(features(gather_rows(data.features, ep.query)));
}

std::vector<std::size_t> lr_predict(const FeatureFn& features, const Episode& ep, const Dataset& data,
                                    const EvalConfig& cfg, Rng& rng) {
  return argmax_rows(lr_probabilities(features, ep, data, cfg, rng));
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size()) throw DimensionError("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

std::vector<std::size_t> argmax_rows(const Matrix& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

void summarize(EvalReport& report) {
  const auto& a = report.accuracies;
  const double n = static_cast<double>(a.size());
  report.mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double var = 0.0;
  for (double v : a) var += (v - report.mean) * (v - report.mean);
  var /= n;
  report.ci95 = 1.96 * std::sqrt(var) / std::sqrt(n);
}

EvalReport run_episodes(const Dataset& data, const Hierarchy& hierarchy, const EvalConfig& cfg,
                        const EpisodeClassifier& classify) {
  cfg.validate();
  EvalReport report;
  report.mode = cfg.mode;
  report.config = cfg;
  report.accuracies.assign(cfg.episodes, 0.0);
  std::vector<std::size_t> ways(cfg.episodes, 0);

  // Sample every episode up front so errors surface on the calling thread.
  std::vector<Episode> episodes(cfg.episodes);
  std::vector<Rng> rngs;
  rngs.reserve(cfg.episodes);
  for (std::size_t i = 0; i < cfg.episodes; ++i) {
    rngs.push_back(make_rng(cfg.seed, "episode", i));
    episodes[i] = sample_episode(data, hierarchy, cfg.mode, cfg.ways, cfg.shot, cfg.queries, rngs[i]);
  }

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cfg.episodes); ++i) {
    try {
      const auto pred = classify(episodes[i], rngs[i]);
      report.accuracies[i] = accuracy(pred, episodes[i].query_labels);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  report.way = episodes.front().way;
  summarize(report);
  return report;
}

EvalReport evaluate(const FeatureFn& features, const Dataset& data, const Hierarchy& hierarchy, const EvalConfig& cfg) {
  return run_episodes(data, hierarchy, cfg, [&](const Episode& ep, Rng& rng) {
    return lr_predict(features, ep, data, cfg, rng);
  });
}

EvalReport evaluate(const AncorModel& model, const Dataset& data, const Hierarchy& hierarchy, const EvalConfig& cfg) {
  return evaluate(model_features(model), data, hierarchy, cfg);
}

std::vector<std::size_t> ensemble_predictions(const Matrix& probs_a, const Matrix& probs_b) {
  if (!probs_a.same_shape(probs_b))
    throw DimensionError("ensemble: way mismatch " + probs_a.shape_string() + " vs " + probs_b.shape_string());
  Matrix mean = probs_a + probs_b;
  mean *= 0.5;
  return argmax_rows(mean);
}

std::vector<std::size_t> combine_ensemble(const FeatureFn& a, const FeatureFn& b, const Episode& ep,
                                          const Dataset& data, const EvalConfig& cfg, Rng& rng) {
  // Both heads see the same augmented support draws.
  Rng rng_b = rng;
  const Matrix pa = lr_probabilities(a, ep, data, cfg, rng);
  const Matrix pb = lr_probabilities(b, ep, data, cfg, rng_b);
  return ensemble_predictions(pa, pb);
}

CoarsePredictor model_coarse_predictor(const AncorModel& model) {
  return [&model](const Matrix& x) { return argmax_rows(coarse_logits(model, x)); };
}

std::vector<std::size_t> combine_cascade(const CoarsePredictor& coarse, const FeatureFn& fine, const Episode& ep,
                                         const Dataset& data, const Hierarchy& hierarchy, const EvalConfig& cfg,
                                         Rng& rng) {
  if (ep.coarse_labels) throw EpisodeError("cascade: episode must be over fine classes");
  const SupportSet support = build_support(fine, ep, data, cfg, rng);
  const Matrix query_x = gather_rows(data.features, ep.query);
  const auto coarse_pred = coarse(query_x);
  const Matrix query_f = fine(query_x);

  std::vector<std::size_t> pred(ep.query.size(), ep.way);
  for (std::size_t c = 0; c < hierarchy.num_coarse; ++c) {
    std::vector<std::size_t> local_ways;  // episode ways under coarse class c
    for (std::size_t w = 0; w < ep.way; ++w)
      if (hierarchy.fine_to_coarse[ep.classes[w]] == c) local_ways.push_back(w);
    std::vector<std::size_t> queries;
    for (std::size_t i = 0; i < ep.query.size(); ++i)
      if (coarse_pred[i] == c) queries.push_back(i);
    if (local_ways.empty() || queries.empty()) continue;
    if (local_ways.size() == 1) {
      for (std::size_t i : queries) pred[i] = local_ways[0];
      continue;
    }
    std::vector<std::size_t> rows, labels;
    for (std::size_t r = 0; r < support.labels.size(); ++r) {
      const auto it = std::find(local_ways.begin(), local_ways.end(), support.labels[r]);
      if (it == local_ways.end()) continue;
      rows.push_back(r);
      labels.push_back(static_cast<std::size_t>(it - local_ways.begin()));
    }
    const LrHead head = fit_lr_head(gather_rows(support.features, rows), labels, local_ways.size(), cfg.head);
    const auto local = head.predict(gather_rows(query_f, queries));
    for (std::size_t j = 0; j < queries.size(); ++j) pred[queries[j]] = local_ways[local[j]];
  }
  return pred;
}

FeatureFn concat_features(const FeatureFn& a, const FeatureFn& b) {
  return [a, b](const Matrix& x) { return l2_normalize_rows(hconcat(a(x), b(x))); };
}

std::vector<std::size_t> combine_concat(const FeatureFn& a, const FeatureFn& b, const Episode& ep, const Dataset& data,
                                        const EvalConfig& cfg, Rng& rng) {
  return lr_predict(concat_features(a, b), ep, data, cfg, rng);
}

}  // namespace ancor
