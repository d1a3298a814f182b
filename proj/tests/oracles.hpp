#pragma once

// Test-only reference implementations. Nothing here calls into the library's
// numerical paths (or Eigen's solvers): plain loops over std::vector.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

using Dense = std::vector<std::vector<double>>;

inline Dense zeros(std::size_t rows, std::size_t cols) {
  return Dense(rows, std::vector<double>(cols, 0.0));
}

inline std::vector<double> matvec(const Dense& a, const std::vector<double>& x) {
  std::vector<double> y(a.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += a[i][j] * x[j];
  }
  return y;
}

inline Dense matmul(const Dense& a, const Dense& b) {
  Dense c = zeros(a.size(), b.front().size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b.front().size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> gauss_solve(Dense a, std::vector<double> b) {
  const std::size_t n = a.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (a[pivot][col] == 0.0) throw std::runtime_error("gauss_solve: singular system");
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

// argmin tr(D C D^T) subject to D k = r, via the full KKT system over the
// rows*cols unknowns of D plus one multiplier per row.
inline Dense constrained_min_norm_update(const Dense& cov, const std::vector<double>& k,
                                         const std::vector<double>& r) {
  const std::size_t rows = r.size();
  const std::size_t cols = k.size();
  const std::size_t nx = rows * cols;
  const std::size_t n = nx + rows;
  Dense kkt = zeros(n, n);
  std::vector<double> rhs(n, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t a = 0; a < cols; ++a) {
      for (std::size_t b = 0; b < cols; ++b) kkt[i * cols + a][i * cols + b] = 2.0 * cov[a][b];
      kkt[i * cols + a][nx + i] = k[a];
      kkt[nx + i][i * cols + a] = k[a];
    }
    rhs[nx + i] = r[i];
  }
  const auto x = gauss_solve(kkt, rhs);
  Dense d = zeros(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t a = 0; a < cols; ++a) d[i][a] = x[i * cols + a];
  return d;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
inline std::vector<double> symmetric_eigenvalues(Dense a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p];
          const double akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k];
          const double aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a[i][i];
  std::sort(eig.rbegin(), eig.rend());
  return eig;
}

// Singular values of an arbitrary matrix from the eigenvalues of M^T M.
inline std::vector<double> singular_values(const Dense& m) {
  const std::size_t rows = m.size();
  const std::size_t cols = m.front().size();
  Dense gram = zeros(cols, cols);
  for (std::size_t i = 0; i < cols; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t k = 0; k < rows; ++k) gram[i][j] += m[k][i] * m[k][j];
  auto eig = symmetric_eigenvalues(gram);
  for (auto& e : eig) e = std::sqrt(std::max(e, 0.0));
  return eig;
}

// Brute-force RECT: rank every entry by (delta desc, row-major index asc)
// with a full sort, keep the first `keep`.
inline Dense rect_by_full_sort(const Dense& w, const Dense& dw, double eps, std::size_t keep) {
  const std::size_t rows = dw.size();
  const std::size_t cols = dw.front().size();
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      ranked.emplace_back(std::abs(dw[i][j]) / std::max(std::abs(w[i][j]), eps), i * cols + j);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  Dense out = zeros(rows, cols);
  for (std::size_t n = 0; n < keep; ++n) {
    const auto idx = ranked[n].second;
    out[idx / cols][idx % cols] = dw[idx / cols][idx % cols];
  }
  return out;
}

// ceil(k * size / 100) for integral k, exact in integer arithmetic.
inline std::size_t keep_for_integral_k(std::size_t k, std::size_t size) {
  return (k * size + 99) / 100;
}

// Argmax of explicit cosine over a token->vector map; first (lexicographic)
// token wins ties.
inline std::string brute_force_decode(const std::vector<double>& out,
                                      const std::map<std::string, std::vector<double>>& vocab) {
  std::string best;
  double best_cos = -2.0;
  const double on = std::sqrt(std::inner_product(out.begin(), out.end(), out.begin(), 0.0));
  for (const auto& [tok, e] : vocab) {
    const double en = std::sqrt(std::inner_product(e.begin(), e.end(), e.begin(), 0.0));
    const double c = std::inner_product(out.begin(), out.end(), e.begin(), 0.0) / (on * en);
    if (c > best_cos) {
      best_cos = c;
      best = tok;
    }
  }
  return best;
}

}  // namespace oracle
