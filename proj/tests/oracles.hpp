#pragma once
// Independent reference implementations used only by the tests. These are
// deliberately written in the most naive way possible (triple loops, cyclic
// Jacobi sweeps) so that agreement with the library is evidence, not
// tautology. Nothing here may be called from library code.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "robnet/linalg.hpp"

namespace oracle {

using robnet::Mat;

// Plain triple-loop matrix product.
inline Mat matmul_naive(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw std::runtime_error("oracle matmul: shape");
  Mat c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> sym_eigenvalues(Mat a, int sweeps = 100, double tol = 1e-14) {
  if (a.rows != a.cols) throw std::runtime_error("oracle eig: not square");
  const int n = a.rows;
  for (int s = 0; s < sweeps; ++s) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(off) < tol) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double sn = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (int i = 0; i < n; ++i) ev[i] = a(i, i);
  return ev;
}

inline double min_eigenvalue(const Mat& a) {
  auto ev = sym_eigenvalues(a);
  double m = ev[0];
  for (double v : ev) m = std::min(m, v);
  return m;
}

inline double max_eigenvalue(const Mat& a) {
  auto ev = sym_eigenvalues(a);
  double m = ev[0];
  for (double v : ev) m = std::max(m, v);
  return m;
}

// Largest singular value via the eigenvalues of WᵀW.
inline double spectral_norm_naive(const Mat& w) {
  Mat wt(w.cols, w.rows);
  for (int i = 0; i < w.rows; ++i)
    for (int j = 0; j < w.cols; ++j) wt(j, i) = w(i, j);
  Mat g = matmul_naive(wt, w);
  double lam = max_eigenvalue(g);
  return std::sqrt(std::max(lam, 0.0));
}

// Gaussian-elimination solve with partial pivoting, fresh implementation.
inline Mat solve_naive(Mat a, Mat b) {
  if (a.rows != a.cols || a.rows != b.rows) throw std::runtime_error("oracle solve: shape");
  const int n = a.rows;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    for (int i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (a(piv, k) == 0.0) throw std::runtime_error("oracle solve: singular");
    if (piv != k) {
      for (int j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      for (int j = 0; j < b.cols; ++j) std::swap(b(k, j), b(piv, j));
    }
    for (int i = k + 1; i < n; ++i) {
      double f = a(i, k) / a(k, k);
      for (int j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      for (int j = 0; j < b.cols; ++j) b(i, j) -= f * b(k, j);
    }
  }
  Mat x(n, b.cols);
  for (int j = 0; j < b.cols; ++j)
    for (int i = n - 1; i >= 0; --i) {
      double s = b(i, j);
      for (int k = i + 1; k < n; ++k) s -= a(i, k) * x(k, j);
      x(i, j) = s / a(i, i);
    }
  return x;
}

}  // namespace oracle
