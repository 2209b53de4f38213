#include "ancor/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ancor/angular.hpp"
#include "ancor/kernels.hpp"

namespace ancor {

std::string to_string(QueueMode m) { return m == QueueMode::Multi ? "multi" : "single"; }

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be > 0");
}

void KeyRing::push(std::span<const double> key) {
  if (capacity() == 0) return;
  std::size_t slot;
  if (size_ < capacity()) {
    slot = (head_ + size_) % capacity();
    ++size_;
  } else {
    slot = head_;
    head_ = (head_ + 1) % capacity();
  }
  std::copy(key.begin(), key.end(), storage_.row(slot).begin());
}

Matrix KeyRing::snapshot() const {
  Matrix out(size_, dim_);
  for (std::size_t i = 0; i < size_; ++i) {
    auto src = storage_.row((head_ + i) % capacity());
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

ClassQueueSet::ClassQueueSet(QueueMode mode, std::size_t num_classes, std::size_t capacity, std::size_t dim)
    : mode_(mode), num_classes_(num_classes), capacity_(capacity), dim_(dim) {
  if (num_classes == 0) throw ConfigError("ClassQueueSet: need at least one class");
  const std::size_t n = mode == QueueMode::Multi ? num_classes : 1;
  rings_.assign(n, KeyRing(capacity, dim));
}

void ClassQueueSet::enqueue(std::size_t y, std::span<const double> key) {
  if (key.size() != dim_) throw DimensionError("enqueue: key has wrong dimension");
  const double n = norm(key);
  if (std::abs(n - 1.0) > 1e-6)
    throw NormalizationContractError("enqueue: key norm " + std::to_string(n) + " is not 1");
  if (mode_ == QueueMode::Single) {
    rings_[0].push(key);
    return;
  }
  if (y >= num_classes_) throw IndexError("enqueue: class " + std::to_string(y) + " out of range");
  rings_[y].push(key);
}

Matrix ClassQueueSet::negatives_for(std::size_t y) const {
  if (y >= num_classes_) throw IndexError("negatives_for: class " + std::to_string(y) + " out of range");
  return rings_[mode_ == QueueMode::Multi ? y : 0].snapshot();
}

std::size_t ClassQueueSet::total_size() const {
  std::size_t n = 0;
  for (const KeyRing& r : rings_) n += r.size();
  return n;
}

InfoNceResult info_nce(std::span<const double> q, std::span<const double> k_plus, const Matrix& negatives,
                       double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("info_nce: temperature must be > 0");
  if (q.size() != k_plus.size() || (negatives.rows() > 0 && negatives.cols() != q.size()))
    throw DimensionError("info_nce: dimension mismatch");
  const std::size_t n = negatives.rows();
  std::vector<double> logits(n + 1);
  logits[0] = dot(q, k_plus) / temperature;
  for (std::size_t j = 0; j < n; ++j) logits[j + 1] = dot(q, negatives.row(j)) / temperature;

  InfoNceResult r;
  r.loss = n == 0 ? 0.0 : log_sum_exp_minus(logits, logits[0]);
  std::vector<double> p(n + 1);
  softmax(logits, p);
  p[0] -= 1.0;
  const std::size_t e = q.size();
  r.grad_q.assign(e, 0.0);
  r.grad_positive.assign(e, 0.0);
  r.grad_negatives = Matrix(n, e);
  for (std::size_t c = 0; c < e; ++c) {
    r.grad_q[c] = p[0] * k_plus[c] / temperature;
    r.grad_positive[c] = p[0] * q[c] / temperature;
  }
  for (std::size_t j = 0; j < n; ++j) {
    auto k = negatives.row(j);
    auto gk = r.grad_negatives.row(j);
    for (std::size_t c = 0; c < e; ++c) {
      r.grad_q[c] += p[j + 1] * k[c] / temperature;
      gk[c] = p[j + 1] * q[c] / temperature;
    }
  }
  return r;
}

ContrastiveBatchResult contrastive_batch_loss(const Matrix& q, const Matrix& k_plus, std::span<const std::size_t> labels,
                                              const ClassQueueSet& queues, const Matrix& W,
                                              const ContrastiveConfig& cfg, double scale) {
  cfg.validate();
  if (!q.same_shape(k_plus) || q.rows() != labels.size())
    throw DimensionError("contrastive_batch_loss: batch shapes disagree");
  const double tau = cfg.temperature;
  const std::size_t e = q.cols();
  ContrastiveBatchResult res{std::vector<double>(q.rows(), 0.0), Matrix(q.rows(), e), Matrix(W.rows(), W.cols())};

  // Group the batch by class: every member shares the negatives and frame.
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= W.rows()) throw IndexError("contrastive_batch_loss: label out of range");
    members[labels[i]].push_back(i);
  }

  for (const auto& [y, idx] : members) {
    const Matrix raw_neg = queues.negatives_for(y);
    const Matrix qy = gather_rows(q, idx);
    const Matrix ky = gather_rows(k_plus, idx);
    const std::size_t m = idx.size(), n = raw_neg.rows();

    AngularFrame frame;
    AngularRows qa, ka, na;
    const Matrix* qv = &qy;
    const Matrix* kv = &ky;
    const Matrix* nv = &raw_neg;
    if (cfg.angular_enabled) {
      frame = make_frame(W, y);
      qa = angular_rows(qy, frame, "query");
      ka = angular_rows(ky, frame, "positive key");
      na = angular_rows(raw_neg, frame, "negative key");
      qv = &qa.out;
      kv = &ka.out;
      nv = &na.out;
    }

    Matrix g_q(m, e), g_k(m, e);
    Matrix p_neg(m, n);
    std::vector<double> logits(n + 1), p(n + 1);
    for (std::size_t i = 0; i < m; ++i) {
      logits[0] = dot(qv->row(i), kv->row(i)) / tau;
      for (std::size_t j = 0; j < n; ++j) logits[j + 1] = dot(qv->row(i), nv->row(j)) / tau;
      res.losses[idx[i]] = n == 0 ? 0.0 : log_sum_exp_minus(logits, logits[0]);
      softmax(logits, p);
      const double a = (p[0] - 1.0) * scale / tau;
      auto gq = g_q.row(i);
      auto gk = g_k.row(i);
      auto kr = kv->row(i);
      auto qr = qv->row(i);
      for (std::size_t c = 0; c < e; ++c) {
        gq[c] = a * kr[c];
        gk[c] = a * qr[c];
      }
      for (std::size_t j = 0; j < n; ++j) p_neg(i, j) = p[j + 1] * scale / tau;
    }
    if (n > 0) g_q += matmul(p_neg, *nv);

    Matrix gq_in;
    if (cfg.angular_enabled) {
      std::vector<double> w_hat_grad(e, 0.0);
      std::span<double> wg = cfg.anchor_gradient ? std::span<double>(w_hat_grad) : std::span<double>();
      angular_rows_backward(qa, g_q, &gq_in, wg);
      if (cfg.anchor_gradient) {
        angular_rows_backward(ka, g_k, nullptr, wg);
        if (n > 0) angular_rows_backward(na, matmul_tn(p_neg, qa.out), nullptr, wg);
        const auto gw = frame_backward(frame, w_hat_grad);
        for (std::size_t c = 0; c < e; ++c) res.grad_W(y, c) += gw[c];
      }
    } else {
      gq_in = std::move(g_q);
    }
    for (std::size_t i = 0; i < m; ++i) {
      auto src = gq_in.row(i);
      std::copy(src.begin(), src.end(), res.grad_q.row(idx[i]).begin());
    }
  }
  return res;
}

ContrastiveTerm ancor_contrastive_loss(const ClassQueueSet& queues, const ContrastiveConfig& cfg,
                                       std::span<const double> q, std::span<const double> k_plus, std::size_t y,
                                       const Matrix& W) {
  const std::size_t label = y;
  auto r = contrastive_batch_loss(Matrix::row_vector(q), Matrix::row_vector(k_plus), std::span(&label, 1), queues, W,
                                  cfg, 1.0);
  return {r.losses[0], std::vector<double>(r.grad_q.values().begin(), r.grad_q.values().end()), std::move(r.grad_W)};
}

ScalarGrad supcon_loss(const Matrix& z, std::span<const std::size_t> labels, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("supcon_loss: temperature must be > 0");
  if (z.rows() != labels.size()) throw DimensionError("supcon_loss: label count mismatch");
  if (z.rows() < 2) throw ConfigError("supcon_loss: batch must hold at least 2 samples");
  const std::size_t n = z.rows();
  const Matrix sim = matmul_nt(z, z);

  std::vector<std::size_t> positives(n, 0);
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i]) ++positives[i];
    if (positives[i] > 0) ++anchors;
  }

  ScalarGrad out{0.0, Matrix(n, z.cols())};
  if (anchors == 0) return out;

  // coeff(i, j) = dL/d sim(i, j) treating sim as unsymmetrized.
  Matrix coeff(n, n);
  std::vector<double> logits;
  std::vector<double> p;
  for (std::size_t i = 0; i < n; ++i) {
    if (positives[i] == 0) continue;
    logits.clear();
    for (std::size_t a = 0; a < n; ++a)
      if (a != i) logits.push_back(sim(i, a) / temperature);
    const double lse = log_sum_exp(logits);
    p.resize(logits.size());
    softmax(logits, p);
    double loss_i = 0.0;
    const double inv_p = 1.0 / static_cast<double>(positives[i]);
    for (std::size_t a = 0, k = 0; a < n; ++a) {
      if (a == i) continue;
      const bool pos = labels[a] == labels[i];
      if (pos) loss_i -= inv_p * (sim(i, a) / temperature - lse);
      coeff(i, a) = (p[k] - (pos ? inv_p : 0.0)) / (temperature * static_cast<double>(anchors));
      ++k;
    }
    out.value += loss_i;
  }
  out.value /= static_cast<double>(anchors);
  // dL/dz_i = sum_j (coeff(i,j) + coeff(j,i)) z_j
  const Matrix sym = coeff + coeff.transposed();
  out.gradient = matmul(sym, z);
  return out;
}

}  // namespace ancor
