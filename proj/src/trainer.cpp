#include "ancor/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <numbers>
#include <numeric>

#include "ancor/angular.hpp"
#include "ancor/checkpoint.hpp"
#include "ancor/kernels.hpp"
#include "ancor/numcore.hpp"

namespace ancor {

namespace {

struct PresetName {
  Preset preset;
  const char* name;
};

constexpr PresetName kPresetNames[] = {
    {Preset::Ancor, "ancor"},           {Preset::Coarse, "coarse"},
    {Preset::CoarsePlus, "coarse+"},    {Preset::ContrastiveOnly, "contrastive"},
    {Preset::SupCon, "supcon"},         {Preset::Fine, "fine"},
    {Preset::FinePlus, "fine+"},        {Preset::NaiveCombo, "naive"},
};

}  // namespace

std::string to_string(Preset p) {
  for (const auto& pn : kPresetNames)
    if (pn.preset == p) return pn.name;
  return "?";
}

Preset parse_preset(const std::string& name) {
  for (const auto& pn : kPresetNames)
    if (name == pn.name) return pn.preset;
  if (name == "coarse-plus" || name == "coarseplus") return Preset::CoarsePlus;
  if (name == "fine-plus" || name == "fineplus") return Preset::FinePlus;
  if (name == "contrastive-only" || name == "moco") return Preset::ContrastiveOnly;
  if (name == "naive-combo") return Preset::NaiveCombo;
  throw ConfigError("unknown preset '" + name + "'");
}

const std::vector<Preset>& all_presets() {
  static const std::vector<Preset> all{Preset::Ancor,  Preset::Coarse, Preset::CoarsePlus, Preset::ContrastiveOnly,
                                       Preset::SupCon, Preset::Fine,   Preset::FinePlus,   Preset::NaiveCombo};
  return all;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(base_lr > min_lr && min_lr >= 0.0)) throw ConfigError("train: need base_lr > min_lr >= 0");
  if (cycle_epochs < 1) throw ConfigError("train: cycle_epochs must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw ConfigError("train: sgd_momentum must lie in [0, 1)");
  if (!(moco_momentum >= 0.0 && moco_momentum <= 1.0)) throw ConfigError("train: moco_momentum must lie in [0, 1]");
  if (feature_dim < 1 || embedding_dim < 1) throw ConfigError("train: model dimensions must be >= 1");
  contrastive.validate();
  augment.validate();
}

PresetPlan resolve_preset(const TrainConfig& cfg) {
  PresetPlan p;
  switch (cfg.preset) {
    case Preset::Ancor:
      p.cross_entropy = p.contrastive = true;
      p.angular = cfg.contrastive.angular_enabled;
      p.queue_mode = cfg.contrastive.queue_mode;
      p.variant = cfg.variant;
      p.tap = default_tap(cfg.variant);
      if (p.variant == ModelVariant::Fork && p.angular)
        throw ConfigError("Fork variant cannot use angular normalization: classifier width d differs from e");
      break;
    case Preset::NaiveCombo:
      p.cross_entropy = p.contrastive = true;
      p.queue_mode = cfg.contrastive.queue_mode;
      break;
    case Preset::Coarse:
    case Preset::Fine:
      p.cross_entropy = true;
      p.tap = ClassifierTap::Encoder;
      p.fine_labels = cfg.preset == Preset::Fine;
      break;
    case Preset::CoarsePlus:
    case Preset::FinePlus:
      p.cross_entropy = true;
      p.fine_labels = cfg.preset == Preset::FinePlus;
      break;
    case Preset::ContrastiveOnly:
      p.contrastive = true;
      p.queue_mode = QueueMode::Single;
      break;
    case Preset::SupCon:
      p.supcon = true;
      break;
  }
  return p;
}

ModelGrads zero_grads(const AncorModel& model) {
  return {zeros_like(model.encoder), zeros_like(model.embedder),
          Matrix(model.classifier.rows(), model.classifier.cols())};
}

namespace {

template <typename Mlp, typename Out>
void push_mlp(Mlp& mlp, Out& out) {
  for (auto& l : mlp.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

// Mean softmax cross-entropy over rows; writes dL/dlogits into grad.
double batch_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels, Matrix* grad,
                           std::size_t& correct) {
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  double total = 0.0;
  if (grad) *grad = Matrix(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const ScalarGrad ce = softmax_cross_entropy(row, labels[i]);
    total += ce.value;
    if (grad) {
      auto g = grad->row(i);
      for (std::size_t c = 0; c < g.size(); ++c) g[c] = ce.gradient[c] * inv_b;
    }
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[i]) ++correct;
  }
  return total * inv_b;
}

// Online forward pass with caches for one set of views.
struct OnlinePass {
  MlpCache enc_cache;
  MlpCache emb_cache;
  Matrix features;  // B(x)
  Matrix query;     // normalized E(B(x))
  std::vector<double> query_norms;
  bool has_embedding = false;
};

OnlinePass online_forward(const AncorModel& model, const Matrix& x, bool need_embedding) {
  OnlinePass p;
  p.features = mlp_forward(model.encoder, x, &p.enc_cache);
  if (need_embedding) {
    const Matrix u = mlp_forward(model.embedder, p.features, &p.emb_cache);
    p.query = l2_normalize_rows(u, &p.query_norms);
    p.has_embedding = true;
  }
  return p;
}

const Matrix& classifier_input(const AncorModel& model, const OnlinePass& p) {
  switch (model.tap) {
    case ClassifierTap::Encoder: return p.features;
    case ClassifierTap::Embedding: return p.query;
    case ClassifierTap::EmbedderHidden:
      return model.fork_post_relu ? p.emb_cache.inputs[1] : p.emb_cache.preacts[0];
  }
  return p.features;
}

// Backward through one online pass given gradients at q and at the
// classifier input.
void online_backward(const AncorModel& model, const OnlinePass& p, const Matrix* grad_query,
                     const Matrix* grad_cls_input, ModelGrads& grads) {
  Matrix grad_features(p.features.rows(), p.features.cols());
  bool any = false;
  const bool cls_on_embedder = grad_cls_input && model.tap != ClassifierTap::Encoder;
  if (p.has_embedding && (grad_query || cls_on_embedder)) {
    Matrix g = grad_query ? *grad_query : Matrix(p.query.rows(), p.query.cols());
    // Under the Embedding tap q feeds both the classifier and the contrastive term.
    if (grad_cls_input && model.tap == ClassifierTap::Embedding) g += *grad_cls_input;
    const Matrix grad_u = l2_normalize_rows_backward(p.query, p.query_norms, g);
    std::vector<HiddenGrad> hidden;
    if (grad_cls_input && model.tap == ClassifierTap::EmbedderHidden)
      hidden.push_back({0, grad_cls_input, !model.fork_post_relu});
    grad_features = mlp_backward(model.embedder, p.emb_cache, grad_u, grads.embedder, true, hidden);
    any = true;
  }
  if (grad_cls_input && model.tap == ClassifierTap::Encoder) {
    grad_features += *grad_cls_input;
    any = true;
  }
  if (any) mlp_backward(model.encoder, p.enc_cache, grad_features, grads.encoder, false);
}

}  // namespace

std::vector<Matrix*> online_params(AncorModel& model) {
  std::vector<Matrix*> out;
  push_mlp(model.encoder, out);
  push_mlp(model.embedder, out);
  out.push_back(&model.classifier);
  return out;
}

std::vector<Matrix*> grad_params(ModelGrads& grads) {
  std::vector<Matrix*> out;
  push_mlp(grads.encoder, out);
  push_mlp(grads.embedder, out);
  out.push_back(&grads.classifier);
  return out;
}

LossBreakdown compute_loss(const AncorModel& model, const ClassQueueSet& queues, const Matrix& view_q,
                           const Matrix& view_k, const Matrix& k_plus, std::span<const std::size_t> labels,
                           const PresetPlan& plan, const ContrastiveConfig& cfg, bool want_grads) {
  const std::size_t b = view_q.rows();
  if (labels.size() != b) throw DimensionError("compute_loss: label count mismatch");
  LossBreakdown out;
  if (want_grads) out.grads = zero_grads(model);
  const bool need_embedding = plan.contrastive || plan.supcon || model.tap != ClassifierTap::Encoder;
  const OnlinePass pass = online_forward(model, view_q, need_embedding);

  const Matrix& z = classifier_input(model, pass);
  const Matrix logits = classify_logits(model, z);
  Matrix grad_logits;
  std::size_t correct = 0;
  const double ce = batch_cross_entropy(logits, labels, plan.cross_entropy && want_grads ? &grad_logits : nullptr,
                                        correct);
  out.correct = correct;

  Matrix grad_query;
  Matrix grad_z;
  bool has_grad_query = false;
  if (plan.cross_entropy) {
    out.ce = ce;
    if (want_grads) {
      out.grads.classifier += matmul_tn(grad_logits, z);
      grad_z = matmul(grad_logits, model.classifier);
    }
  }
  if (plan.contrastive) {
    ContrastiveConfig c = cfg;
    c.angular_enabled = plan.angular;
    const auto res = contrastive_batch_loss(pass.query, k_plus, labels, queues, model.classifier, c,
                                            1.0 / static_cast<double>(b));
    out.cont = std::accumulate(res.losses.begin(), res.losses.end(), 0.0) / static_cast<double>(b);
    if (want_grads) {
      grad_query = res.grad_q;
      has_grad_query = true;
      if (plan.angular && c.anchor_gradient) out.grads.classifier += res.grad_W;
    }
  }

  OnlinePass second;
  Matrix grad_second;
  if (plan.supcon) {
    second = online_forward(model, view_k, true);
    Matrix both(2 * b, pass.query.cols());
    std::vector<std::size_t> both_labels(2 * b);
    for (std::size_t i = 0; i < b; ++i) {
      std::copy(pass.query.row(i).begin(), pass.query.row(i).end(), both.row(i).begin());
      std::copy(second.query.row(i).begin(), second.query.row(i).end(), both.row(b + i).begin());
      both_labels[i] = both_labels[b + i] = labels[i];
    }
    const ScalarGrad sc = supcon_loss(both, both_labels, cfg.temperature);
    out.ce = sc.value;
    if (want_grads) {
      grad_query = Matrix(b, both.cols());
      grad_second = Matrix(b, both.cols());
      for (std::size_t i = 0; i < b; ++i) {
        std::copy(sc.gradient.row(i).begin(), sc.gradient.row(i).end(), grad_query.row(i).begin());
        std::copy(sc.gradient.row(b + i).begin(), sc.gradient.row(b + i).end(), grad_second.row(i).begin());
      }
      has_grad_query = true;
    }
  }

  out.total = out.ce + out.cont;
  if (want_grads) {
    online_backward(model, pass, has_grad_query ? &grad_query : nullptr, plan.cross_entropy ? &grad_z : nullptr,
                    out.grads);
    if (plan.supcon) online_backward(model, second, &grad_second, nullptr, out.grads);
  }
  return out;
}

double lr_at(const TrainConfig& cfg, std::size_t epoch, std::size_t step_in_epoch, std::size_t steps_per_epoch) {
  const double T = static_cast<double>(cfg.cycle_epochs);
  const double t = static_cast<double>(epoch % cfg.cycle_epochs) +
                   (steps_per_epoch > 0 ? static_cast<double>(step_in_epoch) / static_cast<double>(steps_per_epoch) : 0.0);
  return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * t / T));
}

void sgd_step(Matrix& param, const Matrix& grad, double lr, Matrix& velocity, double momentum, double wd) {
  if (!param.same_shape(grad) || !param.same_shape(velocity))
    throw DimensionError("sgd_step: shape mismatch " + param.shape_string() + " / " + grad.shape_string() + " / " +
                         velocity.shape_string());
  auto th = param.values();
  auto g = grad.values();
  auto v = velocity.values();
  for (std::size_t i = 0; i < th.size(); ++i) {
    v[i] = momentum * v[i] + (g[i] + wd * th[i]);
    th[i] -= lr * v[i];
  }
}

TrainState init_train_state(const TrainingSet& data, const TrainConfig& cfg) {
  cfg.validate();
  const PresetPlan plan = resolve_preset(cfg);
  ModelDims dims;
  dims.input = data.features.cols();
  dims.feature = cfg.feature_dim;
  dims.embedding = cfg.embedding_dim;
  dims.classes = data.num_classes;
  dims.encoder_hidden_layers = cfg.encoder_hidden_layers;
  AncorModel model = init_model(dims, plan.variant, derive_seed(cfg.seed, "init"), plan.tap, cfg.fork_post_relu);
  ClassQueueSet queues(plan.queue_mode, data.num_classes, cfg.contrastive.capacity, cfg.embedding_dim);
  std::vector<Matrix> velocity;
  for (Matrix* p : online_params(model)) velocity.emplace_back(p->rows(), p->cols());
  return TrainState{std::move(model), std::move(queues), std::move(velocity), 0, 0};
}

StepResult train_step(TrainState& state, const Matrix& x, std::span<const std::size_t> labels, const TrainConfig& cfg,
                      const PresetPlan& plan, double lr, Rng& rng) {
  const Matrix view_q = augment_rows(x, rng, cfg.augment);
  const Matrix view_k = augment_rows(x, rng, cfg.augment);
  const Matrix k_plus = plan.contrastive ? embed_key(state.model, view_k) : Matrix(x.rows(), 0);

  LossBreakdown loss;
  try {
    loss = compute_loss(state.model, state.queues, view_q, view_k, k_plus, labels, plan, cfg.contrastive);
  } catch (const ParallelDegenerateError& e) {
    throw ParallelDegenerateError("epoch " + std::to_string(state.epoch) + " step " + std::to_string(state.global_step) +
                                  ": " + e.what());
  }

  auto params = online_params(state.model);
  auto grads = grad_params(loss.grads);
  for (std::size_t i = 0; i < params.size(); ++i)
    sgd_step(*params[i], *grads[i], lr, state.velocity[i], cfg.sgd_momentum, cfg.weight_decay);
  momentum_update(state.model, cfg.moco_momentum);
  if (plan.contrastive)
    for (std::size_t i = 0; i < labels.size(); ++i) state.queues.enqueue(labels[i], k_plus.row(i));
  ++state.global_step;
  return {loss.ce, loss.cont, loss.total, loss.correct};
}

TrainResult resume(TrainState state, const TrainingSet& data, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  const PresetPlan plan = resolve_preset(cfg);
  const std::size_t n = data.features.rows();
  if (n == 0) throw ConfigError("train: empty dataset");
  const std::size_t b = std::min(cfg.batch_size, n);
  const std::size_t steps = n / b;  // incomplete final batch is dropped
  TrainResult result{std::move(state), {}};
  TrainState& st = result.state;
  const std::size_t last = opts.stop_after_epoch ? std::min(*opts.stop_after_epoch, cfg.epochs) : cfg.epochs;

  std::vector<std::size_t> order(n);
  std::vector<std::size_t> batch_labels(b);
  for (; st.epoch < last;) {
    const std::size_t epoch = st.epoch;
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng aug_rng = make_rng(cfg.seed, "augment", epoch);

    MetricsRow row;
    row.epoch = epoch;
    row.lr = lr_at(cfg, epoch, 0, steps);
    std::size_t correct = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::span<const std::size_t> idx(order.data() + s * b, b);
      const Matrix x = gather_rows(data.features, idx);
      for (std::size_t i = 0; i < b; ++i) batch_labels[i] = data.labels[idx[i]];
      const StepResult r = train_step(st, x, batch_labels, cfg, plan, lr_at(cfg, epoch, s, steps), aug_rng);
      row.loss_ce += r.ce;
      row.loss_cont += r.cont;
      row.loss_total += r.total;
      correct += r.correct;
    }
    row.loss_ce /= static_cast<double>(steps);
    row.loss_cont /= static_cast<double>(steps);
    row.loss_total /= static_cast<double>(steps);
    row.coarse_acc = static_cast<double>(correct) / static_cast<double>(steps * b);
    ++st.epoch;
    row.step = st.global_step;
    result.history.push_back(row);
    if (opts.on_epoch) opts.on_epoch(row);
  }
  return result;
}

TrainResult train(const TrainingSet& data, const TrainConfig& cfg, const TrainOptions& opts) {
  if (data.features.rows() == 0) throw ConfigError("train: empty dataset");
  return resume(init_train_state(data, cfg), data, cfg, opts);
}

void save_train_state(const TrainState& state, const std::filesystem::path& path) {
  ArrayList arrays = model_arrays(state.model);
  for (std::size_t i = 0; i < state.velocity.size(); ++i)
    arrays.push_back({"optimizer." + std::to_string(i), state.velocity[i]});
  const ClassQueueSet& q = state.queues;
  for (std::size_t r = 0; r < q.num_rings(); ++r) arrays.push_back({"queue." + std::to_string(r), q.ring(r).snapshot()});
  arrays.push_back({"meta.train", Matrix{{static_cast<double>(state.epoch), static_cast<double>(state.global_step),
                                          static_cast<double>(q.mode()), static_cast<double>(q.num_classes()),
                                          static_cast<double>(q.capacity()), static_cast<double>(q.dim())}}});
  write_arrays(path, arrays);
}

TrainState load_train_state(const std::filesystem::path& path) {
  const ArrayList arrays = read_arrays(path);
  AncorModel model = model_from_arrays(arrays);
  const Matrix& meta = require_array(arrays, "meta.train");
  if (meta.size() != 6) throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "meta.train must hold 6 values");
  const auto mode = static_cast<QueueMode>(static_cast<int>(meta[2]));
  ClassQueueSet queues(mode, static_cast<std::size_t>(meta[3]), static_cast<std::size_t>(meta[4]),
                       static_cast<std::size_t>(meta[5]));
  for (std::size_t r = 0; r < queues.num_rings(); ++r) {
    const Matrix& keys = require_array(arrays, "queue." + std::to_string(r));
    for (std::size_t i = 0; i < keys.rows(); ++i) queues.enqueue(r, keys.row(i));
  }
  std::vector<Matrix> velocity;
  const auto params = online_params(model);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& v = require_array(arrays, "optimizer." + std::to_string(i));
    if (!v.same_shape(*params[i]))
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "optimizer." + std::to_string(i) + " shape mismatch");
    velocity.push_back(v);
  }
  return TrainState{std::move(model), std::move(queues), std::move(velocity), static_cast<std::size_t>(meta[0]),
                    static_cast<std::size_t>(meta[1])};
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,step,lr,loss_ce,loss_cont,loss_total,coarse_acc\n";
  out.precision(17);
  for (const MetricsRow& r : rows)
    out << r.epoch << ',' << r.step << ',' << r.lr << ',' << r.loss_ce << ',' << r.loss_cont << ',' << r.loss_total
        << ',' << r.coarse_acc << '\n';
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,step,lr,loss_ce,loss_cont,loss_total,coarse_acc")
    throw SchemaError(path.string() + ": not a metrics file");
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    MetricsRow r;
    char c1, c2, c3, c4, c5, c6;
    if (!(ss >> r.epoch >> c1 >> r.step >> c2 >> r.lr >> c3 >> r.loss_ce >> c4 >> r.loss_cont >> c5 >> r.loss_total >>
          c6 >> r.coarse_acc))
      throw ParseError(path.string() + ": bad metrics row at line " + std::to_string(line_no), line_no);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace ancor
