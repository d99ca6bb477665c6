// Copyright 2026 The DCCDI Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dccdi/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dccdi {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kEps = std::numeric_limits<double>::epsilon();

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void rotate(double* x, double* y, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

std::vector<std::size_t> descending_order(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return order;
}

// Fills the rows of `basis` flagged in `missing` with unit vectors orthogonal
// to every other row. Rows are length-m vectors.
void complete_orthonormal(Matrix& basis, const std::vector<bool>& missing) {
  const std::size_t m = basis.cols();
  std::size_t candidate = 0;
  for (std::size_t r = 0; r < basis.rows(); ++r) {
    if (!missing[r]) continue;
    for (; candidate < m; ++candidate) {
      std::vector<double> v(m, 0.0);
      v[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < basis.rows(); ++o) {
          if (o == r || (missing[o] && o > r)) continue;
          const double proj = dot(v.data(), basis.row(o).data(), m);
          for (std::size_t i = 0; i < m; ++i) v[i] -= proj * basis(o, i);
        }
      }
      const double norm = std::sqrt(dot(v.data(), v.data(), m));
      if (norm > 0.5) {
        for (std::size_t i = 0; i < m; ++i) basis(r, i) = v[i] / norm;
        ++candidate;
        break;
      }
    }
  }
}

// One-sided Jacobi for m >= n. Works on the transpose so each column of A is
// a contiguous row.
SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix w = a.transpose();           // n x m
  Matrix v = Matrix::identity(n);     // row j is column j of V

  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* wp = w.row(p).data();
        double* wq = w.row(q).data();
        const double alpha = dot(wp, wp, m);
        const double beta = dot(wq, wq, m);
        const double gamma = dot(wp, wq, m);
        if (gamma == 0.0 || std::abs(gamma) <= 4.0 * kEps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(wp, wq, m, c, s);
        rotate(v.row(p).data(), v.row(q).data(), n, c, s);
      }
    }
    if (!rotated) break;
  }
  if (sweep == kMaxSweeps) {
    throw ConvergenceError("svd: one-sided Jacobi did not converge", sweep);
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(dot(w.row(j).data(), w.row(j).data(), m));
  const auto order = descending_order(sigma);
  const double smax = sigma.empty() ? 0.0 : sigma[order.front()];
  const double zero_tol = std::max(smax, std::numeric_limits<double>::min()) * static_cast<double>(m) * kEps * 8.0;

  SvdResult out;
  out.s.resize(n);
  Matrix ut(n, m);
  out.vt = Matrix(n, n);
  std::vector<bool> missing(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.s[k] = sigma[j];
    std::copy(v.row(j).begin(), v.row(j).end(), out.vt.row(k).begin());
    if (sigma[j] <= zero_tol || smax == 0.0) {
      missing[k] = true;
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) ut(k, i) = w(j, i) / sigma[j];
  }
  if (std::any_of(missing.begin(), missing.end(), [](bool b) { return b; })) {
    complete_orthonormal(ut, missing);
  }
  out.u = ut.transpose();
  return out;
}

}  // namespace

NotPositiveDefinite::NotPositiveDefinite(std::size_t index, double eigenvalue)
    : LinalgError("inv_sqrt_sym: eigenvalue " + std::to_string(index) + " = " +
                  std::to_string(eigenvalue) +
                  " is not above the floor; increase the covariance regularizer"),
      index_(index),
      eigenvalue_(eigenvalue) {}

SvdResult svd(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) throw std::invalid_argument("svd: empty matrix");
  if (!a.all_finite()) throw std::invalid_argument("svd: non-finite input");
  if (a.rows() >= a.cols()) return svd_tall(a);
  SvdResult t = svd_tall(a.transpose());
  SvdResult out;
  out.s = std::move(t.s);
  out.u = t.vt.transpose();
  out.vt = t.u.transpose();
  return out;
}

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, max_abs(m));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > tol * scale) return false;
  return true;
}

EigResult sym_eig(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("sym_eig: matrix is not square (" + m.shape_string() + ")");
  }
  if (!m.all_finite()) throw std::invalid_argument("sym_eig: non-finite input");
  if (!is_symmetric(m, 1e-9)) throw std::invalid_argument("sym_eig: matrix is not symmetric");

  const std::size_t n = m.rows();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (m(i, j) + m(j, i));
  Matrix vt = Matrix::identity(n);  // row k is eigenvector k

  const double total = frobenius_norm(a);
  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) <= kEps * total || off == 0.0) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // A <- J' A J with J the (p, q) rotation.
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        rotate(vt.row(p).data(), vt.row(q).data(), n, c, s);
      }
    }
  }
  if (sweep == kMaxSweeps) throw ConvergenceError("sym_eig: Jacobi did not converge", sweep);

  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
  const auto order = descending_order(diag);
  EigResult out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = diag[order[k]];
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = vt(order[k], i);
  }
  return out;
}

Matrix inv_sqrt_sym(const Matrix& m, double eps) {
  const EigResult eig = sym_eig(m);
  const std::size_t n = m.rows();
  std::vector<double> scale(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (!(eig.values[k] > eps)) throw NotPositiveDefinite(k, eig.values[k]);
    scale[k] = 1.0 / std::sqrt(eig.values[k]);
  }
  Matrix r(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += eig.vectors(i, k) * scale[k] * eig.vectors(j, k);
      r(i, j) = acc;
      r(j, i) = acc;
    }
  }
  return r;
}

Matrix center_rows(const Matrix& z) {
  if (z.rows() < 2) throw std::invalid_argument("center_rows: need at least 2 rows, got " + std::to_string(z.rows()));
  Matrix out = z;
  const std::size_t n = z.rows();
  for (std::size_t c = 0; c < z.cols(); ++c) {
    // A column counts as centered once its compensated mean is at rounding
    // level. Large offsets leave a residual after one pass, so repeat; the
    // output then passes the same test and a second call is a no-op.
    for (int pass = 0; pass < 4; ++pass) {
      double s = 0.0;
      double comp = 0.0;
      double abs_sum = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double x = out(r, c);
        const double t = s + x;
        comp += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
        s = t;
        abs_sum += std::abs(x);
      }
      const double mean = (s + comp) / static_cast<double>(n);
      if (std::abs(mean) <= 4.0 * kEps * abs_sum / static_cast<double>(n)) break;
      for (std::size_t r = 0; r < n; ++r) out(r, c) -= mean;
    }
  }
  return out;
}

Matrix cholesky(const Matrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("cholesky: matrix is not square");
  const std::size_t n = m.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw NotPositiveDefinite(j, d);
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double acc = m(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      l(i, j) = acc / l(j, j);
    }
  }
  return l;
}

Matrix forward_substitute(const Matrix& lower, const Matrix& b) {
  if (lower.rows() != b.rows()) throw std::invalid_argument("forward_substitute: shape mismatch");
  Matrix x = b;
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < lower.rows(); ++i) {
      double acc = x(i, c);
      for (std::size_t k = 0; k < i; ++k) acc -= lower(i, k) * x(k, c);
      x(i, c) = acc / lower(i, i);
    }
  }
  return x;
}

Matrix backward_substitute_t(const Matrix& lower, const Matrix& b) {
  if (lower.rows() != b.rows()) throw std::invalid_argument("backward_substitute_t: shape mismatch");
  const std::size_t n = lower.rows();
  Matrix x = b;
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t ii = n; ii-- > 0;) {
      double acc = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) acc -= lower(k, ii) * x(k, c);
      x(ii, c) = acc / lower(ii, ii);
    }
  }
  return x;
}

}  // namespace dccdi
