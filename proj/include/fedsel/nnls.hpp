#pragma once

// Non-negative least squares, Lawson-Hanson active-set method:
//   minimize ||A x - b||^2  subject to  x >= 0.
// Problem sizes here are tiny (columns = selected clients), so the passive-set
// least-squares subproblem is solved by normal equations with Gaussian
// elimination. The active-set method terminates at the exact optimum, which
// downstream bound checks with 1e-9 slack depend on.

#include <cmath>
#include <cstddef>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"

namespace fedsel {

namespace detail {

/// Solves the square SPD-ish system M y = r by Gaussian elimination with
/// partial pivoting. M is overwritten.
inline Vec solve_dense(std::vector<Vec> M, Vec r) {
  const size_t k = r.size();
  for (size_t col = 0; col < k; ++col) {
    size_t piv = col;
    for (size_t row = col + 1; row < k; ++row)
      if (std::fabs(M[row][col]) > std::fabs(M[piv][col])) piv = row;
    if (std::fabs(M[piv][col]) < 1e-300)
      throw NumericError("nnls: singular passive-set subproblem");
    std::swap(M[col], M[piv]);
    std::swap(r[col], r[piv]);
    for (size_t row = col + 1; row < k; ++row) {
      const double f = M[row][col] / M[col][col];
      if (f == 0.0) continue;
      for (size_t c = col; c < k; ++c) M[row][c] -= f * M[col][c];
      r[row] -= f * r[col];
    }
  }
  Vec y(k);
  for (size_t row = k; row-- > 0;) {
    double s = r[row];
    for (size_t c = row + 1; c < k; ++c) s -= M[row][c] * y[c];
    y[row] = s / M[row][row];
  }
  return y;
}

}  // namespace detail

/// columns: the k column vectors of A (each of length d). Returns x >= 0 with
/// the KKT residual max_i (A^T (b - A x))_i <= tol * scale outside the
/// support, at the exact constrained optimum.
inline Vec nnls(const std::vector<Vec>& columns, const Vec& b, double tol = 1e-8) {
  require_internal(!columns.empty(), "nnls: no columns");
  const size_t k = columns.size();
  const size_t d = b.size();
  for (const auto& c : columns)
    require_internal(c.size() == d, "nnls: column dimension mismatch");

  // Gram matrix and A^T b, computed once.
  std::vector<Vec> gram(k, Vec(k));
  Vec atb(k);
  for (size_t i = 0; i < k; ++i) {
    atb[i] = dot(columns[i], b);
    for (size_t j = i; j < k; ++j) {
      gram[i][j] = dot(columns[i], columns[j]);
      gram[j][i] = gram[i][j];
    }
  }
  double scale = 1.0;
  for (size_t i = 0; i < k; ++i) scale = std::max(scale, std::fabs(atb[i]));
  const double eps = tol * scale;

  Vec x(k, 0.0);
  std::vector<bool> passive(k, false);
  std::vector<size_t> pset;

  auto kkt_grad = [&](size_t i) {
    // (A^T (b - A x))_i using the cached Gram products
    double w = atb[i];
    for (size_t j : pset) w -= gram[i][j] * x[j];
    return w;
  };

  const size_t max_outer = 3 * k + 10;
  for (size_t outer = 0; outer < max_outer; ++outer) {
    // Pick the most violated KKT multiplier among free variables.
    double best_w = eps;
    size_t best_i = k;
    for (size_t i = 0; i < k; ++i) {
      if (passive[i]) continue;
      const double w = kkt_grad(i);
      if (w > best_w) {
        best_w = w;
        best_i = i;
      }
    }
    if (best_i == k) return x;  // KKT satisfied

    passive[best_i] = true;
    pset.push_back(best_i);

    for (size_t inner = 0; inner < max_outer; ++inner) {
      // Unconstrained LS on the passive set via normal equations.
      const size_t m = pset.size();
      std::vector<Vec> G(m, Vec(m));
      Vec r(m);
      for (size_t a = 0; a < m; ++a) {
        r[a] = atb[pset[a]];
        for (size_t c = 0; c < m; ++c) G[a][c] = gram[pset[a]][pset[c]];
      }
      const Vec z = detail::solve_dense(std::move(G), std::move(r));

      bool ok = true;
      for (size_t a = 0; a < m; ++a)
        if (z[a] <= 0.0) ok = false;
      if (ok) {
        for (size_t a = 0; a < m; ++a) x[pset[a]] = z[a];
        break;
      }

      // Step toward z until the first passive variable hits zero.
      double alpha = 1.0;
      for (size_t a = 0; a < m; ++a) {
        if (z[a] <= 0.0) {
          const double denom = x[pset[a]] - z[a];
          if (denom > 0.0) alpha = std::min(alpha, x[pset[a]] / denom);
        }
      }
      for (size_t a = 0; a < m; ++a)
        x[pset[a]] += alpha * (z[a] - x[pset[a]]);

      // Drop variables that reached the boundary.
      std::vector<size_t> keep;
      for (size_t a = 0; a < m; ++a) {
        if (x[pset[a]] > 1e-14 * scale) {
          keep.push_back(pset[a]);
        } else {
          x[pset[a]] = 0.0;
          passive[pset[a]] = false;
        }
      }
      pset = std::move(keep);
      if (pset.empty()) break;
    }
  }
  throw NumericError("nnls: did not converge within the iteration cap");
}

}  // namespace fedsel
