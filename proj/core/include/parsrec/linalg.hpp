// Small dense double-precision helpers used by the data synthesizer:
// Cholesky factorization, vine-method random correlation matrices, and
// multivariate normal sampling. Matrices are square, row-major.

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "parsrec/rng.hpp"

namespace parsrec {

// Lower-triangular L with L*L^T = a. Throws if a pivot is not positive
// (matrix not positive definite).
inline std::vector<double> cholesky(const std::vector<double>& a, int d) {
  if (static_cast<std::size_t>(d) * d != a.size()) {
    throw std::invalid_argument("cholesky: size mismatch");
  }
  std::vector<double> l(a.size(), 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<std::size_t>(i) * d + j];
      for (int k = 0; k < j; ++k) {
        s -= l[static_cast<std::size_t>(i) * d + k] *
             l[static_cast<std::size_t>(j) * d + k];
      }
      if (i == j) {
        if (s <= 0.0) {
          throw std::runtime_error("cholesky: matrix not positive definite");
        }
        l[static_cast<std::size_t>(i) * d + j] = std::sqrt(s);
      } else {
        l[static_cast<std::size_t>(i) * d + j] =
            s / l[static_cast<std::size_t>(j) * d + j];
      }
    }
  }
  return l;
}

// Random correlation matrix from the vine construction: partial
// correlations drawn from Beta(beta_a, beta_b) on (0,1), mapped to (-1,1),
// then composed layer by layer into full correlations.
inline std::vector<double> vine_correlation(int d, double beta_a,
                                            double beta_b, Rng& rng) {
  if (d < 1) throw std::invalid_argument("vine_correlation: d < 1");
  // Beta(a, 1) has a closed-form inverse CDF; that is the only shape the
  // synthesizer needs (paper setting Beta(0.2, 1)).
  if (beta_b != 1.0) {
    throw std::invalid_argument("vine_correlation: only beta_b == 1 supported");
  }
  std::vector<std::vector<double>> partial(
      static_cast<std::size_t>(d), std::vector<double>(d, 0.0));
  std::vector<double> r(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) r[static_cast<std::size_t>(i) * d + i] = 1.0;
  for (int k = 0; k < d - 1; ++k) {
    for (int i = k + 1; i < d; ++i) {
      partial[k][i] = 2.0 * rng.beta_a1(beta_a) - 1.0;
      double p = partial[k][i];
      for (int l = k - 1; l >= 0; --l) {
        p = p * std::sqrt((1.0 - partial[l][i] * partial[l][i]) *
                          (1.0 - partial[l][k] * partial[l][k])) +
            partial[l][i] * partial[l][k];
      }
      r[static_cast<std::size_t>(k) * d + i] = p;
      r[static_cast<std::size_t>(i) * d + k] = p;
    }
  }
  return r;
}

// One draw from N(0, L*L^T) given the Cholesky factor L.
inline std::vector<double> sample_mvn(const std::vector<double>& chol, int d,
                                      Rng& rng) {
  std::vector<double> z(static_cast<std::size_t>(d));
  for (auto& v : z) v = rng.normal();
  std::vector<double> out(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < d; ++i) {
    double s = 0.0;
    for (int j = 0; j <= i; ++j) {
      s += chol[static_cast<std::size_t>(i) * d + j] * z[j];
    }
    out[static_cast<std::size_t>(i)] = s;
  }
  return out;
}

}  // namespace parsrec
