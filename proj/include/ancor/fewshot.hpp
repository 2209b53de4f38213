#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ancor/data.hpp"
#include "ancor/matrix.hpp"
#include "ancor/model.hpp"
#include "ancor/rng.hpp"

namespace ancor {

enum class EvalMode { FiveWay, AllWay, IntraClass, CoarseAllWay };

std::string to_string(EvalMode m);
EvalMode parse_eval_mode(const std::string& s);

// Full-batch gradient descent on L2-regularized multinomial cross-entropy;
// the step size follows a cosine decay to zero over the iteration budget.
struct LrHeadConfig {
  std::size_t iterations = 500;
  double step = 1.0;
  double l2 = 1e-3;
};

struct EvalConfig {
  std::size_t episodes = 200;
  EvalMode mode = EvalMode::AllWay;
  std::size_t shot = 1;
  std::size_t queries = 15;
  std::size_t ways = 5;  // FiveWay only
  LrHeadConfig head;
  std::size_t support_augment_copies = 5;
  bool include_original_support = true;
  AugmentStrength augment;
  std::uint64_t seed = 0;

  void validate() const;
};

// Indices refer to rows of the evaluation dataset. Labels are way indices;
// classes[w] is the fine (or coarse, in CoarseAllWay) id of way w.
struct Episode {
  std::size_t way = 0;
  std::size_t shot = 0;
  std::vector<std::size_t> classes;
  std::vector<std::size_t> support;
  std::vector<std::size_t> support_labels;
  std::vector<std::size_t> query;
  std::vector<std::size_t> query_labels;
  bool coarse_labels = false;
};

Episode sample_episode(const Dataset& test, const Hierarchy& hierarchy, EvalMode mode, std::size_t ways,
                       std::size_t shot, std::size_t queries, Rng& rng);

// Maps raw inputs (rows) to feature rows.
using FeatureFn = std::function<Matrix(const Matrix&)>;

// normalize(B(x)); the embedder and classifier are not used.
Matrix extract_features(const AncorModel& model, const Matrix& x);
FeatureFn model_features(const AncorModel& model);

struct LrHead {
  Matrix weight;  // ways x D
  std::vector<double> bias;

  Matrix probabilities(const Matrix& features) const;
  std::vector<std::size_t> predict(const Matrix& features) const;
};

LrHead fit_lr_head(const Matrix& features, std::span<const std::size_t> labels, std::size_t ways,
                   const LrHeadConfig& cfg);

// Support inputs expanded with augmented copies, then featurized.
struct SupportSet {
  Matrix features;
  std::vector<std::size_t> labels;
};
SupportSet build_support(const FeatureFn& features, const Episode& ep, const Dataset& data, const EvalConfig& cfg,
                         Rng& rng);

// Query-by-way probabilities from an LR head fit on the episode support.
Matrix lr_probabilities(const FeatureFn& features, const Episode& ep, const Dataset& data, const EvalConfig& cfg,
                        Rng& rng);
std::vector<std::size_t> lr_predict(const FeatureFn& features, const Episode& ep, const Dataset& data,
                                    const EvalConfig& cfg, Rng& rng);

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);
std::vector<std::size_t> argmax_rows(const Matrix& m);

struct EvalReport {
  EvalMode mode = EvalMode::AllWay;
  double mean = 0.0;
  double ci95 = 0.0;
  std::vector<double> accuracies;  // by episode index
  std::size_t way = 0;             // way of the first episode
  EvalConfig config;
  std::string label;
};

// Predicted way per query for one episode.
using EpisodeClassifier = std::function<std::vector<std::size_t>(const Episode&, Rng&)>;

// Runs cfg.episodes episodes (in parallel when threads are available); each
// episode i draws from its own stream derived from (cfg.seed, i).
EvalReport run_episodes(const Dataset& data, const Hierarchy& hierarchy, const EvalConfig& cfg,
                        const EpisodeClassifier& classify);

EvalReport evaluate(const AncorModel& model, const Dataset& data, const Hierarchy& hierarchy, const EvalConfig& cfg);
EvalReport evaluate(const FeatureFn& features, const Dataset& data, const Hierarchy& hierarchy, const EvalConfig& cfg);

// Mean and 1.96 * population std / sqrt(n).
void summarize(EvalReport& report);

// Argmax of the mean of two probability matrices.
std::vector<std::size_t> ensemble_predictions(const Matrix& probs_a, const Matrix& probs_b);

// Separate LR heads per model, probabilities averaged.
std::vector<std::size_t> combine_ensemble(const FeatureFn& a, const FeatureFn& b, const Episode& ep,
                                          const Dataset& data, const EvalConfig& cfg, Rng& rng);

// Predicts a coarse class per query row.
using CoarsePredictor = std::function<std::vector<std::size_t>(const Matrix&)>;
CoarsePredictor model_coarse_predictor(const AncorModel& model);

// Coarse prediction first, then an LR head over the predicted coarse class's
// sub-classes present in the episode. A query whose predicted coarse class
// has no sub-class in the episode is scored wrong (prediction = way count).
std::vector<std::size_t> combine_cascade(const CoarsePredictor& coarse, const FeatureFn& fine, const Episode& ep,
                                         const Dataset& data, const Hierarchy& hierarchy, const EvalConfig& cfg,
                                         Rng& rng);

// LR head on renormalized [a(x) | b(x)].
FeatureFn concat_features(const FeatureFn& a, const FeatureFn& b);
std::vector<std::size_t> combine_concat(const FeatureFn& a, const FeatureFn& b, const Episode& ep, const Dataset& data,
                                        const EvalConfig& cfg, Rng& rng);

}  // namespace ancor
