#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ancor/contrastive.hpp"
#include "ancor/data.hpp"
#include "ancor/model.hpp"

namespace ancor {

enum class Preset { Ancor, Coarse, CoarsePlus, ContrastiveOnly, SupCon, Fine, FinePlus, NaiveCombo };

std::string to_string(Preset p);
Preset parse_preset(const std::string& name);
const std::vector<Preset>& all_presets();

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double base_lr = 0.03;
  double min_lr = 0.0;
  std::size_t cycle_epochs = 20;
  double weight_decay = 1e-4;
  double sgd_momentum = 0.9;
  double moco_momentum = 0.99;
  ContrastiveConfig contrastive;
  ModelVariant variant = ModelVariant::Seq;
  bool fork_post_relu = true;
  Preset preset = Preset::Ancor;
  std::size_t feature_dim = 128;
  std::size_t embedding_dim = 32;
  std::size_t encoder_hidden_layers = 1;
  AugmentStrength augment;
  std::uint64_t seed = 0;

  void validate() const;
};

// What a preset switches on, resolved against the config.
struct PresetPlan {
  bool cross_entropy = false;
  bool contrastive = false;
  bool supcon = false;
  bool angular = false;
  QueueMode queue_mode = QueueMode::Multi;
  ModelVariant variant = ModelVariant::Seq;
  ClassifierTap tap = ClassifierTap::Embedding;
  bool fine_labels = false;
};

PresetPlan resolve_preset(const TrainConfig& cfg);

// Gradients for every online parameter; momentum twins have none.
struct ModelGrads {
  MlpParams encoder;
  MlpParams embedder;
  Matrix classifier;
};

ModelGrads zero_grads(const AncorModel& model);

// Online parameters in a fixed order (encoder, embedder, classifier).
std::vector<Matrix*> online_params(AncorModel& model);
std::vector<Matrix*> grad_params(ModelGrads& grads);

struct LossBreakdown {
  double ce = 0.0;    // batch mean of the supervised term (CE or SupCon)
  double cont = 0.0;  // batch mean of the contrastive term
  double total = 0.0;
  std::size_t correct = 0;
  ModelGrads grads;
};

// Loss and gradients for one batch with fixed views and keys.
//   view_q: online-path inputs (b x d_in)
//   view_k: second views, used only by SupCon
//   k_plus: momentum keys (b x e), used only by the contrastive term
LossBreakdown compute_loss(const AncorModel& model, const ClassQueueSet& queues, const Matrix& view_q,
                           const Matrix& view_k, const Matrix& k_plus, std::span<const std::size_t> labels,
                           const PresetPlan& plan, const ContrastiveConfig& cfg, bool want_grads = true);

// Cosine annealing with warm restarts every cycle_epochs.
double lr_at(const TrainConfig& cfg, std::size_t epoch, std::size_t step_in_epoch, std::size_t steps_per_epoch);

// g' = g + wd*theta; v <- mu*v + g'; theta <- theta - lr*v
void sgd_step(Matrix& param, const Matrix& grad, double lr, Matrix& velocity, double momentum, double wd);

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step count at the end of the epoch
  double lr = 0.0;
  double loss_ce = 0.0;
  double loss_cont = 0.0;
  double loss_total = 0.0;
  double coarse_acc = 0.0;
};

struct TrainState {
  AncorModel model;
  ClassQueueSet queues;
  std::vector<Matrix> velocity;  // matches online_params order
  std::size_t epoch = 0;         // epochs completed
  std::size_t global_step = 0;
};

TrainState init_train_state(const TrainingSet& data, const TrainConfig& cfg);

struct StepResult {
  double ce = 0.0;
  double cont = 0.0;
  double total = 0.0;
  std::size_t correct = 0;
};

// One optimization step: two views per sample, losses, SGD, momentum update,
// then enqueue of this batch's keys.
StepResult train_step(TrainState& state, const Matrix& x, std::span<const std::size_t> labels, const TrainConfig& cfg,
                      const PresetPlan& plan, double lr, Rng& rng);

struct TrainOptions {
  // Stop once this many epochs are complete (for split runs).
  std::optional<std::size_t> stop_after_epoch;
  std::function<void(const MetricsRow&)> on_epoch;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRow> history;
};

TrainResult train(const TrainingSet& data, const TrainConfig& cfg, const TrainOptions& opts = {});
TrainResult resume(TrainState state, const TrainingSet& data, const TrainConfig& cfg, const TrainOptions& opts = {});

// Full training state (model, optimizer velocity, queues, counters) in the
// checkpoint container. load_checkpoint() on such a file yields the model.
void save_train_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace ancor
