#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ancor/matrix.hpp"
#include "ancor/numcore.hpp"

namespace ancor {

enum class QueueMode { Multi, Single };

std::string to_string(QueueMode m);

struct ContrastiveConfig {
  double temperature = 0.2;
  bool angular_enabled = true;
  QueueMode queue_mode = QueueMode::Multi;
  std::size_t capacity = 256;
  // Let the contrastive term reach the classifier row through the angular
  // anchor w_hat_y. Off means the anchor is treated as a constant.
  bool anchor_gradient = true;

  void validate() const;
};

// Fixed-capacity FIFO of unit vectors; evicts the oldest entry when full.
class KeyRing {
 public:
  KeyRing(std::size_t capacity, std::size_t dim) : storage_(capacity, dim), dim_(dim) {}

  void push(std::span<const double> key);
  std::size_t size() const noexcept { return size_; }
  std::size_t capacity() const noexcept { return storage_.rows(); }
  // Entries oldest-first.
  Matrix snapshot() const;
  void clear() noexcept { head_ = size_ = 0; }

 private:
  Matrix storage_;
  std::size_t dim_;
  std::size_t head_ = 0;  // slot of the oldest entry
  std::size_t size_ = 0;
};

// Per-class negative-key queues (Multi) or one shared queue (Single).
class ClassQueueSet {
 public:
  ClassQueueSet(QueueMode mode, std::size_t num_classes, std::size_t capacity, std::size_t dim);

  // Appends a unit-norm key to Q_y (or the shared queue). y is not consulted
  // in Single mode.
  void enqueue(std::size_t y, std::span<const double> key);

  // Snapshot of the negatives a class-y query sees.
  Matrix negatives_for(std::size_t y) const;

  QueueMode mode() const noexcept { return mode_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_rings() const noexcept { return rings_.size(); }
  const KeyRing& ring(std::size_t i) const { return rings_.at(i); }
  std::size_t total_size() const;

 private:
  QueueMode mode_;
  std::size_t num_classes_;
  std::size_t capacity_;
  std::size_t dim_;
  std::vector<KeyRing> rings_;
};

struct InfoNceResult {
  double loss = 0.0;
  std::vector<double> grad_q;
  std::vector<double> grad_positive;
  Matrix grad_negatives;
};

// -log( exp(q.k+/t) / (exp(q.k+/t) + sum_j exp(q.k-_j/t)) ), log-sum-exp stable.
InfoNceResult info_nce(std::span<const double> q, std::span<const double> k_plus, const Matrix& negatives,
                       double temperature);

struct ContrastiveBatchResult {
  std::vector<double> losses;  // per sample
  Matrix grad_q;               // d(scale * sum losses)/dq
  Matrix grad_W;               // same shape as W, zero unless anchor gradients flow
};

// Class-conditioned contrastive loss over a batch. Row i of q and k_plus has
// class labels[i]; its negatives are queues.negatives_for(labels[i]) taken
// before any of this batch's keys are enqueued. With cfg.angular_enabled all
// of q, k+ and k- go through angular normalization around W_y first.
ContrastiveBatchResult contrastive_batch_loss(const Matrix& q, const Matrix& k_plus, std::span<const std::size_t> labels,
                                              const ClassQueueSet& queues, const Matrix& W,
                                              const ContrastiveConfig& cfg, double scale);

// Single-sample form of the above.
struct ContrastiveTerm {
  double loss = 0.0;
  std::vector<double> grad_q;
  Matrix grad_W;
};
ContrastiveTerm ancor_contrastive_loss(const ClassQueueSet& queues, const ContrastiveConfig& cfg,
                                       std::span<const double> q, std::span<const double> k_plus, std::size_t y,
                                       const Matrix& W);

// Supervised contrastive loss averaged over anchors that have at least one
// positive; gradient is w.r.t. the embeddings.
ScalarGrad supcon_loss(const Matrix& embeddings, std::span<const std::size_t> labels, double temperature);

}  // namespace ancor
