// Dense row-major tensor with tape-based reverse-mode autodiff.
//
// The engine is templated on the scalar type: training and inference run in
// 32-bit floats; the 64-bit instantiation exists for gradient checking
// against finite differences. A Tape records every primitive executed during
// a forward pass; backward() replays the record in reverse order, which is a
// reverse topological order by construction.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "parsrec/rng.hpp"

namespace parsrec {

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // same size as data iff requires_grad
  bool requires_grad = false;

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? static_cast<int>(data.size()) / rows() : shape[1]; }

  T& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
  const T& at(int i, int j) const {
    return data[static_cast<std::size_t>(i) * cols() + j];
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  bool finite() const {
    for (const T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <class T>
TensorPtr<T> make_tensor(std::vector<int> shape, bool requires_grad = false) {
  auto t = std::make_shared<Tensor<T>>();
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  t->shape = std::move(shape);
  t->data.assign(static_cast<std::size_t>(n), T(0));
  t->requires_grad = requires_grad;
  if (requires_grad) t->grad.assign(static_cast<std::size_t>(n), T(0));
  return t;
}

template <class T>
TensorPtr<T> make_tensor(std::vector<int> shape, std::vector<T> values,
                         bool requires_grad = false) {
  auto t = make_tensor<T>(std::move(shape), requires_grad);
  if (t->data.size() != values.size()) {
    throw std::invalid_argument("make_tensor: value count does not match shape");
  }
  t->data = std::move(values);
  return t;
}

// Execution-ordered record of primitive ops. Also tracks which embedding
// rows were gathered during the pass so the sparse optimizer can update only
// those rows.
template <class T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  void note_touched(const Tensor<T>* table, const std::vector<int>& rows) {
    auto& dst = touched_[table];
    dst.insert(dst.end(), rows.begin(), rows.end());
  }

  // Sorted, de-duplicated rows gathered from `table` during this pass.
  std::vector<int> touched_rows(const Tensor<T>* table) const {
    auto it = touched_.find(table);
    if (it == touched_.end()) return {};
    std::vector<int> rows = it->second;
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    return rows;
  }

  bool empty() const { return nodes_.empty(); }

  // Seeds d(loss)/d(loss) = 1 and runs all recorded ops in reverse.
  void backward(const TensorPtr<T>& loss) {
    if (nodes_.empty()) {
      throw std::runtime_error("backward: no recorded graph");
    }
    if (loss->size() != 1 || !loss->requires_grad) {
      throw std::invalid_argument("backward: loss must be a scalar with grad");
    }
    loss->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() {
    nodes_.clear();
    touched_.clear();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::unordered_map<const Tensor<T>*, std::vector<int>> touched_;
};

namespace detail {

template <class T>
bool grad_needed(const TensorPtr<T>& t) {
  return t->requires_grad;
}

template <class T>
TensorPtr<T> make_output(Tape<T>* tape, std::vector<int> shape,
                         bool any_input_grad) {
  const bool rg = tape != nullptr && any_input_grad;
  return make_tensor<T>(std::move(shape), rg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations. Each op computes its output and, when a tape is
// given and gradients are needed, records a closure that scatters the output
// gradient back to its inputs (additive across fan-out).
// ---------------------------------------------------------------------------

// out[m x n] = a[m x k] * b[k x n]
template <class T>
TensorPtr<T> matmul(Tape<T>* tape, const TensorPtr<T>& a,
                    const TensorPtr<T>& b) {
  const int m = a->rows(), k = a->cols(), k2 = b->rows(), n = b->cols();
  if (k != k2) throw std::invalid_argument("matmul: inner dimensions differ");
  auto out = detail::make_output<T>(tape, {m, n},
                                    a->requires_grad || b->requires_grad);
  for (int i = 0; i < m; ++i) {
    T* orow = &out->data[static_cast<std::size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const T av = a->at(i, p);
      if (av == T(0)) continue;
      const T* brow = &b->data[static_cast<std::size_t>(p) * n];
#pragma omp simd
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (out->requires_grad) {
    tape->record([a, b, out, m, k, n]() {
      const T* gbase = out->grad.data();
      if (a->requires_grad) {
        const T* bdata = b->data.data();
        T* agrad = a->grad.data();
        for (int i = 0; i < m; ++i) {
          const T* grow = gbase + static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const T* brow = bdata + static_cast<std::size_t>(p) * n;
            T s = T(0);
#pragma omp simd reduction(+ : s)
            for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
            agrad[static_cast<std::size_t>(i) * k + p] += s;
          }
        }
      }
      if (b->requires_grad) {
        const T* adata = a->data.data();
        T* bgrad = b->grad.data();
        for (int i = 0; i < m; ++i) {
          const T* grow = gbase + static_cast<std::size_t>(i) * n;
          const T* arow = adata + static_cast<std::size_t>(i) * k;
          for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            T* brow = bgrad + static_cast<std::size_t>(p) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

// out[m x n] = a[m x k] * b[n x k]^T  (used for attention scores Q K^T)
template <class T>
TensorPtr<T> matmul_nt(Tape<T>* tape, const TensorPtr<T>& a,
                       const TensorPtr<T>& b) {
  const int m = a->rows(), k = a->cols(), n = b->rows();
  if (k != b->cols()) throw std::invalid_argument("matmul_nt: dim mismatch");
  auto out = detail::make_output<T>(tape, {m, n},
                                    a->requires_grad || b->requires_grad);
  for (int i = 0; i < m; ++i) {
    const T* arow = &a->data[static_cast<std::size_t>(i) * k];
    for (int j = 0; j < n; ++j) {
      const T* brow = &b->data[static_cast<std::size_t>(j) * k];
      T s = T(0);
#pragma omp simd reduction(+ : s)
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      out->at(i, j) = s;
    }
  }
  if (out->requires_grad) {
    tape->record([a, b, out, m, k, n]() {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          const T gv = out->grad[static_cast<std::size_t>(i) * n + j];
          if (gv == T(0)) continue;
          if (a->requires_grad) {
            T* arow = &a->grad[static_cast<std::size_t>(i) * k];
            const T* brow = &b->data[static_cast<std::size_t>(j) * k];
#pragma omp simd
            for (int p = 0; p < k; ++p) arow[p] += gv * brow[p];
          }
          if (b->requires_grad) {
            T* brow = &b->grad[static_cast<std::size_t>(j) * k];
            const T* arow = &a->data[static_cast<std::size_t>(i) * k];
#pragma omp simd
            for (int p = 0; p < k; ++p) brow[p] += gv * arow[p];
          }
        }
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape) throw std::invalid_argument("add: shape mismatch");
  auto out = detail::make_output<T>(tape, a->shape,
                                    a->requires_grad || b->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    out->data[i] = a->data[i] + b->data[i];
  }
  if (out->requires_grad) {
    tape->record([a, b, out]() {
      if (a->requires_grad) {
        for (std::size_t i = 0; i < out->grad.size(); ++i) {
          a->grad[i] += out->grad[i];
        }
      }
      if (b->requires_grad) {
        for (std::size_t i = 0; i < out->grad.size(); ++i) {
          b->grad[i] += out->grad[i];
        }
      }
    });
  }
  return out;
}

// a[m x d] + row vector b[d] broadcast over rows.
template <class T>
TensorPtr<T> add_rowvec(Tape<T>* tape, const TensorPtr<T>& a,
                        const TensorPtr<T>& b) {
  const int m = a->rows(), d = a->cols();
  if (b->size() != d) throw std::invalid_argument("add_rowvec: width mismatch");
  auto out = detail::make_output<T>(tape, a->shape,
                                    a->requires_grad || b->requires_grad);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < d; ++j) {
      out->at(i, j) = a->at(i, j) + b->data[static_cast<std::size_t>(j)];
    }
  }
  if (out->requires_grad) {
    tape->record([a, b, out, m, d]() {
      if (a->requires_grad) {
        for (std::size_t i = 0; i < out->grad.size(); ++i) {
          a->grad[i] += out->grad[i];
        }
      }
      if (b->requires_grad) {
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < d; ++j) {
            b->grad[static_cast<std::size_t>(j)] +=
                out->grad[static_cast<std::size_t>(i) * d + j];
          }
        }
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> scale(Tape<T>* tape, const TensorPtr<T>& a, T c) {
  auto out = detail::make_output<T>(tape, a->shape, a->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * c;
  if (out->requires_grad) {
    tape->record([a, out, c]() {
      if (a->requires_grad) {
        for (std::size_t i = 0; i < out->grad.size(); ++i) {
          a->grad[i] += c * out->grad[i];
        }
      }
    });
  }
  return out;
}

// Horizontal concatenation of parts with equal row counts.
template <class T>
TensorPtr<T> concat_cols(Tape<T>* tape, const std::vector<TensorPtr<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int m = parts[0]->rows();
  int total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p->rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
    total += p->cols();
    any_grad = any_grad || p->requires_grad;
  }
  auto out = detail::make_output<T>(tape, {m, total}, any_grad);
  int off = 0;
  for (const auto& p : parts) {
    const int d = p->cols();
    for (int i = 0; i < m; ++i) {
      std::copy_n(&p->data[static_cast<std::size_t>(i) * d], d,
                  &out->data[static_cast<std::size_t>(i) * total + off]);
    }
    off += d;
  }
  if (out->requires_grad) {
    tape->record([parts, out, m, total]() {
      int off2 = 0;
      for (const auto& p : parts) {
        const int d = p->cols();
        if (p->requires_grad) {
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < d; ++j) {
              p->grad[static_cast<std::size_t>(i) * d + j] +=
                  out->grad[static_cast<std::size_t>(i) * total + off2 + j];
            }
          }
        }
        off2 += d;
      }
    });
  }
  return out;
}

// Vertical stack of 1 x d rows into B x d.
template <class T>
TensorPtr<T> stack_rows(Tape<T>* tape, const std::vector<TensorPtr<T>>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const int d = rows[0]->cols();
  bool any_grad = false;
  for (const auto& r : rows) {
    if (r->rows() != 1 || r->cols() != d) {
      throw std::invalid_argument("stack_rows: rows must be 1 x d");
    }
    any_grad = any_grad || r->requires_grad;
  }
  const int b = static_cast<int>(rows.size());
  auto out = detail::make_output<T>(tape, {b, d}, any_grad);
  for (int i = 0; i < b; ++i) {
    std::copy_n(rows[static_cast<std::size_t>(i)]->data.data(), d,
                &out->data[static_cast<std::size_t>(i) * d]);
  }
  if (out->requires_grad) {
    tape->record([rows, out, d]() {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i]->requires_grad) continue;
        for (int j = 0; j < d; ++j) {
          rows[i]->grad[static_cast<std::size_t>(j)] +=
              out->grad[i * static_cast<std::size_t>(d) + j];
        }
      }
    });
  }
  return out;
}

// View of row i of x as a 1 x d tensor (copy, gradient scatters back).
template <class T>
TensorPtr<T> slice_row(Tape<T>* tape, const TensorPtr<T>& x, int i) {
  const int d = x->cols();
  if (i < 0 || i >= x->rows()) throw std::out_of_range("slice_row: bad row");
  auto out = detail::make_output<T>(tape, {1, d}, x->requires_grad);
  std::copy_n(&x->data[static_cast<std::size_t>(i) * d], d, out->data.data());
  if (out->requires_grad) {
    tape->record([x, out, i, d]() {
      for (int j = 0; j < d; ++j) {
        x->grad[static_cast<std::size_t>(i) * d + j] +=
            out->grad[static_cast<std::size_t>(j)];
      }
    });
  }
  return out;
}

// Numerically stabilized softmax along each row.
template <class T>
TensorPtr<T> row_softmax(Tape<T>* tape, const TensorPtr<T>& x) {
  const int m = x->rows(), n = x->cols();
  auto out = detail::make_output<T>(tape, x->shape, x->requires_grad);
  for (int i = 0; i < m; ++i) {
    const T* xr = &x->data[static_cast<std::size_t>(i) * n];
    T* yr = &out->data[static_cast<std::size_t>(i) * n];
    T mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (int j = 0; j < n; ++j) yr[j] /= sum;
  }
  if (out->requires_grad) {
    tape->record([x, out, m, n]() {
      for (int i = 0; i < m; ++i) {
        const T* yr = &out->data[static_cast<std::size_t>(i) * n];
        const T* gr = &out->grad[static_cast<std::size_t>(i) * n];
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += yr[j] * gr[j];
        T* xg = &x->grad[static_cast<std::size_t>(i) * n];
        for (int j = 0; j < n; ++j) xg[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise layer normalization with learned gain and bias (width d >= 2).
template <class T>
TensorPtr<T> layer_norm(Tape<T>* tape, const TensorPtr<T>& x,
                        const TensorPtr<T>& gain, const TensorPtr<T>& bias) {
  const int m = x->rows(), d = x->cols();
  if (d < 2) throw std::invalid_argument("layer_norm: width must be >= 2");
  if (gain->size() != d || bias->size() != d) {
    throw std::invalid_argument("layer_norm: gain/bias width mismatch");
  }
  const bool any_grad =
      x->requires_grad || gain->requires_grad || bias->requires_grad;
  auto out = detail::make_output<T>(tape, x->shape, any_grad);
  auto xhat = std::make_shared<std::vector<T>>(x->data.size());
  auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* xr = &x->data[static_cast<std::size_t>(i) * d];
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    (*inv_sigma)[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      const T xh = (xr[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(i) * d + j] = xh;
      out->at(i, j) = gain->data[static_cast<std::size_t>(j)] * xh +
                      bias->data[static_cast<std::size_t>(j)];
    }
  }
  if (out->requires_grad) {
    tape->record([x, gain, bias, out, xhat, inv_sigma, m, d]() {
      for (int i = 0; i < m; ++i) {
        const T* gr = &out->grad[static_cast<std::size_t>(i) * d];
        const T* xh = &(*xhat)[static_cast<std::size_t>(i) * d];
        if (gain->requires_grad) {
          for (int j = 0; j < d; ++j) {
            gain->grad[static_cast<std::size_t>(j)] += gr[j] * xh[j];
          }
        }
        if (bias->requires_grad) {
          for (int j = 0; j < d; ++j) {
            bias->grad[static_cast<std::size_t>(j)] += gr[j];
          }
        }
        if (x->requires_grad) {
          T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
          for (int j = 0; j < d; ++j) {
            const T dxh = gr[j] * gain->data[static_cast<std::size_t>(j)];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
          }
          const T is = (*inv_sigma)[static_cast<std::size_t>(i)];
          T* xg = &x->grad[static_cast<std::size_t>(i) * d];
          for (int j = 0; j < d; ++j) {
            const T dxh = gr[j] * gain->data[static_cast<std::size_t>(j)];
            xg[j] += is * (dxh - sum_dxhat / static_cast<T>(d) -
                           xh[j] * sum_dxhat_xhat / static_cast<T>(d));
          }
        }
      }
    });
  }
  return out;
}

// Elementwise max(0, x); subgradient at exactly 0 is 0.
template <class T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = detail::make_output<T>(tape, x->shape, x->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
  }
  if (out->requires_grad) {
    tape->record([x, out]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if (x->data[i] > T(0)) x->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

// Inverted dropout: each element zeroed with probability p at train time and
// survivors scaled by 1/(1-p); eval mode is the identity.
template <class T>
TensorPtr<T> dropout(Tape<T>* tape, const TensorPtr<T>& x, double p,
                     bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p out of range");
  if (!training || p == 0.0) return x;
  auto out = detail::make_output<T>(tape, x->shape, x->requires_grad);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<std::uint8_t>>(x->data.size());
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    const bool keep = rng.uniform() >= p;
    (*mask)[i] = keep ? 1 : 0;
    out->data[i] = keep ? x->data[i] * keep_scale : T(0);
  }
  if (out->requires_grad) {
    tape->record([x, out, mask, keep_scale]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if ((*mask)[i]) x->grad[i] += out->grad[i] * keep_scale;
      }
    });
  }
  return out;
}

// Gather rows of an embedding table. The backward pass scatters gradients
// only into the touched rows and records them on the tape for sparse Adam.
template <class T>
TensorPtr<T> embedding_lookup(Tape<T>* tape, const TensorPtr<T>& table,
                              const std::vector<int>& indices) {
  const int r = table->rows(), d = table->cols();
  for (int idx : indices) {
    if (idx < 0 || idx >= r) {
      throw std::out_of_range("embedding_lookup: index out of range");
    }
  }
  const int n = static_cast<int>(indices.size());
  auto out = detail::make_output<T>(tape, {n, d}, table->requires_grad);
  for (int i = 0; i < n; ++i) {
    std::copy_n(&table->data[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)]) * d],
                d, &out->data[static_cast<std::size_t>(i) * d]);
  }
  if (out->requires_grad) {
    tape->note_touched(table.get(), indices);
    auto idx_copy = std::make_shared<std::vector<int>>(indices);
    tape->record([table, out, idx_copy, d]() {
      for (std::size_t i = 0; i < idx_copy->size(); ++i) {
        T* trow = &table->grad[static_cast<std::size_t>((*idx_copy)[i]) * d];
        const T* grow = &out->grad[i * static_cast<std::size_t>(d)];
        for (int j = 0; j < d; ++j) trow[j] += grow[j];
      }
    });
  }
  return out;
}

// Mean of the rows of x as a 1 x d tensor; zero rows is an error.
template <class T>
TensorPtr<T> mean_rows(Tape<T>* tape, const TensorPtr<T>& x) {
  const int m = x->rows(), d = x->cols();
  if (m < 1) throw std::invalid_argument("mean_rows: empty input");
  auto out = detail::make_output<T>(tape, {1, d}, x->requires_grad);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < d; ++j) out->data[static_cast<std::size_t>(j)] += x->at(i, j);
  }
  const T inv = T(1) / static_cast<T>(m);
  for (int j = 0; j < d; ++j) out->data[static_cast<std::size_t>(j)] *= inv;
  if (out->requires_grad) {
    tape->record([x, out, m, d, inv]() {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < d; ++j) {
          x->grad[static_cast<std::size_t>(i) * d + j] +=
              out->grad[static_cast<std::size_t>(j)] * inv;
        }
      }
    });
  }
  return out;
}

// Sum of all elements (test helper and loss reductions).
template <class T>
TensorPtr<T> sum_all(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = detail::make_output<T>(tape, {1, 1}, x->requires_grad);
  T s = T(0);
  for (const T v : x->data) s += v;
  out->data[0] = s;
  if (out->requires_grad) {
    tape->record([x, out]() {
      for (std::size_t i = 0; i < x->grad.size(); ++i) {
        x->grad[i] += out->grad[0];
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> add_n(Tape<T>* tape, const std::vector<TensorPtr<T>>& terms) {
  if (terms.empty()) throw std::invalid_argument("add_n: no terms");
  TensorPtr<T> acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(tape, acc, terms[i]);
  return acc;
}

// Sum over non-ignored rows of -log softmax(logits)[target]. Returns the
// scalar sum; `out_count` reports how many rows contributed. Rows whose
// target equals ignore_id add nothing to the loss or the gradient.
template <class T>
TensorPtr<T> cross_entropy_sum(Tape<T>* tape, const TensorPtr<T>& logits,
                               const std::vector<int>& targets, int ignore_id,
                               int* out_count) {
  const int m = logits->rows(), c = logits->cols();
  if (static_cast<int>(targets.size()) != m) {
    throw std::invalid_argument("cross_entropy: target count mismatch");
  }
  int count = 0;
  T total = T(0);
  const bool needs_grad =
      tape != nullptr && logits->requires_grad;
  // Softmax rows are kept for the backward pass so exp is evaluated once.
  auto probs = needs_grad
                   ? std::make_shared<std::vector<T>>(logits->data.size())
                   : nullptr;
  for (int i = 0; i < m; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t == ignore_id) continue;
    if (t < 0 || t >= c) throw std::out_of_range("cross_entropy: bad target");
    const T* row = &logits->data[static_cast<std::size_t>(i) * c];
    T mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T lse = T(0);
    T* prow = probs ? &(*probs)[static_cast<std::size_t>(i) * c] : nullptr;
    for (int j = 0; j < c; ++j) {
      const T e = std::exp(row[j] - mx);
      if (prow != nullptr) prow[j] = e;
      lse += e;
    }
    if (prow != nullptr) {
      const T inv = T(1) / lse;
      for (int j = 0; j < c; ++j) prow[j] *= inv;
    }
    lse = mx + std::log(lse);
    total += lse - row[t];
    ++count;
  }
  if (out_count != nullptr) *out_count = count;
  auto out = detail::make_output<T>(tape, {1, 1}, logits->requires_grad);
  out->data[0] = total;
  if (out->requires_grad) {
    auto tgt = std::make_shared<std::vector<int>>(targets);
    tape->record([logits, out, tgt, probs, ignore_id, m, c]() {
      const T g = out->grad[0];
      if (g == T(0)) return;
      for (int i = 0; i < m; ++i) {
        const int t = (*tgt)[static_cast<std::size_t>(i)];
        if (t == ignore_id) continue;
        const T* prow = &(*probs)[static_cast<std::size_t>(i) * c];
        T* grow = &logits->grad[static_cast<std::size_t>(i) * c];
#pragma omp simd
        for (int j = 0; j < c; ++j) grow[j] += g * prow[j];
        grow[t] -= g;
      }
    });
  }
  return out;
}

// Mean over non-ignored rows; error when every row is ignored.
template <class T>
TensorPtr<T> cross_entropy_loss(Tape<T>* tape, const TensorPtr<T>& logits,
                                const std::vector<int>& targets,
                                int ignore_id) {
  int count = 0;
  auto total = cross_entropy_sum(tape, logits, targets, ignore_id, &count);
  if (count == 0) {
    throw std::invalid_argument("cross_entropy_loss: all rows ignored");
  }
  return scale(tape, total, static_cast<T>(1.0 / count));
}

}  // namespace parsrec
