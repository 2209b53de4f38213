#include "ancor/model.hpp"

#include <algorithm>
#include <cmath>

#include "ancor/kernels.hpp"
#include "ancor/numcore.hpp"
#include "ancor/rng.hpp"

namespace ancor {

bool MlpParams::same_shape(const MlpParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].weight.same_shape(other.layers[i].weight) || !layers[i].bias.same_shape(other.layers[i].bias))
      return false;
  }
  return true;
}

namespace {

void add_bias(Matrix& y, const Matrix& bias) {
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t c = 0; c < y.cols(); ++c) row[c] += bias[c];
  }
}

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

MlpParams make_mlp(const std::vector<std::size_t>& widths, Rng& rng) {
  MlpParams mlp;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    Layer layer{Matrix(out, in), Matrix(1, out)};
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(in)));
    for (double& w : layer.weight.values()) w = he(rng);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

void blend(MlpParams& target, const MlpParams& source, double m) {
  for (std::size_t l = 0; l < target.layers.size(); ++l) {
    auto tw = target.layers[l].weight.values();
    auto sw = source.layers[l].weight.values();
    for (std::size_t i = 0; i < tw.size(); ++i) tw[i] = m * tw[i] + (1.0 - m) * sw[i];
    auto tb = target.layers[l].bias.values();
    auto sb = source.layers[l].bias.values();
    for (std::size_t i = 0; i < tb.size(); ++i) tb[i] = m * tb[i] + (1.0 - m) * sb[i];
  }
}

}  // namespace

Matrix mlp_forward(const MlpParams& mlp, const Matrix& x, MlpCache* cache) {
  if (x.cols() != mlp.input_dim()) {
    throw DimensionError("mlp_forward: input width " + std::to_string(x.cols()) + ", expected " +
                         std::to_string(mlp.input_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
  }
  Matrix h = x;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    Matrix y = matmul_nt(h, mlp.layers[l].weight);
    add_bias(y, mlp.layers[l].bias);
    if (cache) cache->inputs.push_back(std::move(h));
    if (l + 1 < mlp.layers.size()) {
      h = relu(y);
      if (cache) cache->preacts.push_back(std::move(y));
    } else {
      h = std::move(y);
    }
  }
  return h;
}

Matrix mlp_backward(const MlpParams& mlp, const MlpCache& cache, const Matrix& grad_out, MlpParams& grads,
                    bool want_input_grad, std::span<const HiddenGrad> hidden) {
  Matrix g = grad_out;
  for (std::size_t li = mlp.layers.size(); li-- > 0;) {
    const Layer& layer = mlp.layers[li];
    Layer& gl = grads.layers[li];
    // g is dL/d(pre-activation output of layer li) here.
    gl.weight += matmul_tn(g, cache.inputs[li]);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto row = g.row(r);
      for (std::size_t c = 0; c < g.cols(); ++c) gl.bias[c] += row[c];
    }
    if (li == 0 && !want_input_grad) return {};
    Matrix gin = matmul(g, layer.weight);
    if (li == 0) return gin;
    // gin is dL/d(post-ReLU output of layer li-1).
    const Matrix& pre = cache.preacts[li - 1];
    for (const HiddenGrad& hg : hidden) {
      if (hg.layer == li - 1 && !hg.pre_activation) gin += *hg.grad;
    }
    for (std::size_t i = 0; i < gin.size(); ++i)
      if (!(pre[i] > 0.0)) gin[i] = 0.0;
    for (const HiddenGrad& hg : hidden) {
      if (hg.layer == li - 1 && hg.pre_activation) gin += *hg.grad;
    }
    g = std::move(gin);
  }
  return g;
}

MlpParams zeros_like(const MlpParams& mlp) {
  MlpParams z;
  for (const Layer& l : mlp.layers)
    z.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()), Matrix(1, l.bias.cols())});
  return z;
}

std::string to_string(ModelVariant v) { return v == ModelVariant::Seq ? "seq" : "fork"; }

std::string to_string(ClassifierTap t) {
  switch (t) {
    case ClassifierTap::Embedding: return "embedding";
    case ClassifierTap::EmbedderHidden: return "embedder-hidden";
    case ClassifierTap::Encoder: return "encoder";
  }
  return "?";
}

ClassifierTap default_tap(ModelVariant v) {
  return v == ModelVariant::Seq ? ClassifierTap::Embedding : ClassifierTap::EmbedderHidden;
}

AncorModel init_model(const ModelDims& dims, ModelVariant variant, std::uint64_t seed, ClassifierTap tap,
                      bool fork_post_relu) {
  if (dims.input == 0 || dims.feature == 0 || dims.embedding == 0 || dims.classes == 0)
    throw ConfigError("init_model: all dimensions must be >= 1");
  if (dims.embedding >= dims.feature)
    throw ConfigError("init_model: embedding width e=" + std::to_string(dims.embedding) +
                      " must be smaller than feature width d=" + std::to_string(dims.feature));
  if (variant == ModelVariant::Fork && tap == ClassifierTap::Embedding)
    throw ConfigError("init_model: Fork variant cannot tap the embedding");
  if (variant == ModelVariant::Seq && tap == ClassifierTap::EmbedderHidden)
    throw ConfigError("init_model: Seq variant cannot tap the embedder hidden layer");
  Rng rng(seed);
  AncorModel m;
  std::vector<std::size_t> enc{dims.input};
  for (std::size_t i = 0; i < dims.encoder_hidden_layers; ++i) enc.push_back(dims.feature);
  enc.push_back(dims.feature);
  m.encoder = make_mlp(enc, rng);
  m.embedder = make_mlp({dims.feature, dims.feature, dims.embedding}, rng);
  const std::size_t cls_in = tap == ClassifierTap::Embedding ? dims.embedding : dims.feature;
  m.classifier = Matrix(dims.classes, cls_in);
  std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(cls_in)));
  for (double& w : m.classifier.values()) w = he(rng);
  m.variant = variant;
  m.tap = tap;
  m.fork_post_relu = fork_post_relu;
  m.momentum_encoder = m.encoder;
  m.momentum_embedder = m.embedder;
  return m;
}

AncorModel init_model(const ModelDims& dims, ModelVariant variant, std::uint64_t seed) {
  return init_model(dims, variant, seed, default_tap(variant));
}

Matrix encode(const AncorModel& model, const Matrix& x) { return mlp_forward(model.encoder, x); }

Matrix embed_query(const AncorModel& model, const Matrix& x) {
  return l2_normalize_rows(mlp_forward(model.embedder, mlp_forward(model.encoder, x)));
}

Matrix embed_key(const AncorModel& model, const Matrix& x) {
  return l2_normalize_rows(mlp_forward(model.momentum_embedder, mlp_forward(model.momentum_encoder, x)));
}

Matrix classify_logits(const AncorModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.classifier.cols()) {
    throw DimensionError("classify_logits: " + to_string(model.variant) + "/" + to_string(model.tap) +
                         " classifier expects width " + std::to_string(model.classifier.cols()) + ", got " +
                         std::to_string(inputs.cols()));
  }
  return matmul_nt(inputs, model.classifier);
}

Matrix coarse_logits(const AncorModel& model, const Matrix& x) {
  const Matrix f = mlp_forward(model.encoder, x);
  switch (model.tap) {
    case ClassifierTap::Encoder: return classify_logits(model, f);
    case ClassifierTap::Embedding: return classify_logits(model, l2_normalize_rows(mlp_forward(model.embedder, f)));
    case ClassifierTap::EmbedderHidden: {
      MlpCache cache;
      mlp_forward(model.embedder, f, &cache);
      const Matrix& pre = cache.preacts.front();
      return classify_logits(model, model.fork_post_relu ? cache.inputs[1] : pre);
    }
  }
  return {};
}

void momentum_update(AncorModel& model, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("momentum_update: coefficient must lie in [0, 1]");
  if (m == 1.0) return;
  blend(model.momentum_encoder, model.encoder, m);
  blend(model.momentum_embedder, model.embedder, m);
}

}  // namespace ancor
