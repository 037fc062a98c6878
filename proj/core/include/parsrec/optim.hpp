// Adam for dense parameters, sparse-row Adam for embedding tables, and
// global L2 gradient clipping.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "parsrec/tensor.hpp"

namespace parsrec {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

// If the global L2 norm of all gradients exceeds max_norm, scale every
// gradient by max_norm / norm. Returns the applied scale (1 when a no-op).
template <class T>
double clip_global_norm(const std::vector<TensorPtr<T>>& params,
                        double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (const T g : p->grad) {
      const double gd = static_cast<double>(g);
      if (!std::isfinite(gd)) {
        throw std::runtime_error("clip_global_norm: non-finite gradient");
      }
      sq += gd * gd;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  const double s = max_norm / norm;
  for (const auto& p : params) {
    for (T& g : p->grad) g = static_cast<T>(static_cast<double>(g) * s);
  }
  return s;
}

// Standard bias-corrected Adam over a fixed set of dense parameters.
template <class T>
class Adam {
 public:
  Adam(std::vector<TensorPtr<T>> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    if (params_.empty()) throw std::invalid_argument("Adam: empty parameter set");
    for (const auto& p : params_) {
      m_.emplace_back(p->data.size(), T(0));
      v_.emplace_back(p->data.size(), T(0));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = *params_[pi];
      for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        const double m = cfg_.beta1 * static_cast<double>(m_[pi][i]) +
                         (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * static_cast<double>(v_[pi][i]) +
                         (1.0 - cfg_.beta2) * g * g;
        m_[pi][i] = static_cast<T>(m);
        v_[pi][i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) -
                                   cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  std::int64_t step_count() const { return t_; }
  std::vector<T>& moment1(std::size_t i) { return m_[i]; }
  std::vector<T>& moment2(std::size_t i) { return v_[i]; }
  void set_step_count(std::int64_t t) { t_ = t; }
  const std::vector<TensorPtr<T>>& params() const { return params_; }

 private:
  std::vector<TensorPtr<T>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::int64_t t_ = 0;
};

// Adam restricted to the embedding rows touched during the last backward
// pass. Untouched rows keep their moments, and each row advances its own
// step counter only when touched.
template <class T>
class SparseAdam {
 public:
  SparseAdam(TensorPtr<T> table, AdamConfig cfg = {})
      : table_(std::move(table)),
        cfg_(cfg),
        m_(table_->data.size(), T(0)),
        v_(table_->data.size(), T(0)),
        row_t_(static_cast<std::size_t>(table_->rows()), 0) {}

  void step(const std::vector<int>& touched_rows) {
    const int d = table_->cols();
    for (const int r : touched_rows) {
      if (r < 0 || r >= table_->rows()) {
        throw std::out_of_range("SparseAdam: row out of range");
      }
      const std::int64_t t = ++row_t_[static_cast<std::size_t>(r)];
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
      const std::size_t base = static_cast<std::size_t>(r) * d;
      for (int j = 0; j < d; ++j) {
        const double g = static_cast<double>(table_->grad[base + j]);
        const double m = cfg_.beta1 * static_cast<double>(m_[base + j]) +
                         (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * static_cast<double>(v_[base + j]) +
                         (1.0 - cfg_.beta2) * g * g;
        m_[base + j] = static_cast<T>(m);
        v_[base + j] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        table_->data[base + j] = static_cast<T>(
            static_cast<double>(table_->data[base + j]) -
            cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  std::vector<T>& moment1() { return m_; }
  std::vector<T>& moment2() { return v_; }
  std::vector<std::int64_t>& row_steps() { return row_t_; }
  const TensorPtr<T>& table() const { return table_; }

 private:
  TensorPtr<T> table_;
  AdamConfig cfg_;
  std::vector<T> m_, v_;
  std::vector<std::int64_t> row_t_;
};

}  // namespace parsrec
