#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ancor/matrix.hpp"

namespace ancor {

// Weight is (out x in) and bias is (1 x out): y = x W^T + b.
struct Layer {
  Matrix weight;
  Matrix bias;
};

// Fully connected stack with ReLU between layers and no activation after
// the last one.
struct MlpParams {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().weight.cols(); }
  std::size_t output_dim() const { return layers.back().weight.rows(); }
  bool same_shape(const MlpParams& other) const;
};

// Activations kept by a forward pass for the matching backward pass.
struct MlpCache {
  std::vector<Matrix> inputs;   // input to each layer
  std::vector<Matrix> preacts;  // pre-ReLU output of each hidden layer
};

// Extra upstream gradient entering at a hidden layer's output (the Fork
// classifier taps the first embedder layer).
struct HiddenGrad {
  std::size_t layer = 0;
  const Matrix* grad = nullptr;
  bool pre_activation = false;
};

Matrix mlp_forward(const MlpParams& mlp, const Matrix& x, MlpCache* cache = nullptr);

// Given dL/d(output), accumulates parameter gradients into `grads` (same
// shape as `mlp`) and returns dL/d(input) if `want_input_grad`.
Matrix mlp_backward(const MlpParams& mlp, const MlpCache& cache, const Matrix& grad_out, MlpParams& grads,
                    bool want_input_grad = true, std::span<const HiddenGrad> hidden = {});

MlpParams zeros_like(const MlpParams& mlp);

enum class ModelVariant { Seq, Fork };

// Where the coarse classifier reads its input.
//   Embedding:      q = E(B(x)) after L2 normalization (Seq, Coarse+, Fine+)
//   EmbedderHidden: output of the first embedder layer (Fork)
//   Encoder:        B(x) directly (Coarse, Fine)
enum class ClassifierTap { Embedding, EmbedderHidden, Encoder };

struct ModelDims {
  std::size_t input = 64;
  std::size_t feature = 128;  // d, encoder output
  std::size_t embedding = 32; // e
  std::size_t classes = 4;    // R
  std::size_t encoder_hidden_layers = 1;
};

struct AncorModel {
  MlpParams encoder;   // d_in -> d
  MlpParams embedder;  // d -> d -> e
  Matrix classifier;   // R x (e | d), no bias
  ModelVariant variant = ModelVariant::Seq;
  ClassifierTap tap = ClassifierTap::Embedding;
  // Fork only: classifier reads the first embedder layer after ReLU (true)
  // or before it (false).
  bool fork_post_relu = true;
  MlpParams momentum_encoder;
  MlpParams momentum_embedder;

  std::size_t feature_dim() const { return encoder.output_dim(); }
  std::size_t embedding_dim() const { return embedder.output_dim(); }
  std::size_t num_classes() const { return classifier.rows(); }
  std::size_t classifier_input_dim() const { return classifier.cols(); }
};

std::string to_string(ModelVariant v);
std::string to_string(ClassifierTap t);

ClassifierTap default_tap(ModelVariant v);

// He-normal weights, zero biases, momentum twins copied from the online nets.
AncorModel init_model(const ModelDims& dims, ModelVariant variant, std::uint64_t seed,
                      ClassifierTap tap, bool fork_post_relu = true);
AncorModel init_model(const ModelDims& dims, ModelVariant variant, std::uint64_t seed);

// Encoder output B(x) for a batch (rows are samples).
Matrix encode(const AncorModel& model, const Matrix& x);

// q = normalize(E(B(x))) and k = normalize(E_k(B_k(x))), batched.
Matrix embed_query(const AncorModel& model, const Matrix& x);
Matrix embed_key(const AncorModel& model, const Matrix& x);

// W z for each row z of `inputs`. Throws DimensionError if the width does not
// match the classifier tap.
Matrix classify_logits(const AncorModel& model, const Matrix& inputs);

// Full online path to the classifier logits for the model's tap.
Matrix coarse_logits(const AncorModel& model, const Matrix& x);

// theta_k <- m theta_k + (1 - m) theta_q over encoder and embedder.
void momentum_update(AncorModel& model, double m);

}  // namespace ancor
