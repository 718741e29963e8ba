#pragma once
// Dense row-major double-precision matrices and the factorizations the rest
// of the library is built on. Everything here is single-threaded with a fixed
// accumulation order, so repeated calls on identical inputs are bit-identical.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace robnet {

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

struct SingularMatrixError : Error {
  explicit SingularMatrixError(const std::string& msg) : Error("singular matrix: " + msg) {}
};

struct NotPositiveDefiniteError : Error {
  int pivot_index;  // first row whose pivot failed
  explicit NotPositiveDefiniteError(int idx)
      : Error("matrix not positive definite (pivot " + std::to_string(idx) + ")"),
        pivot_index(idx) {}
};

struct BracketError : Error {
  explicit BracketError(const std::string& msg) : Error("invalid bisection bracket: " + msg) {}
};

struct SpecError : Error {
  explicit SpecError(const std::string& msg) : Error("invalid robustness spec: " + msg) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

struct DataError : Error {
  explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

struct TrainError : Error {
  explicit TrainError(const std::string& msg) : Error("training aborted: " + msg) {}
};

// ---------------------------------------------------------------------------
// Mat

struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;  // row-major, rows*cols entries

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw DimensionError("negative size");
    a.assign(static_cast<size_t>(r) * c, 0.0);
  }
  Mat(int r, int c, std::initializer_list<double> vals) : Mat(r, c) {
    if (static_cast<int>(vals.size()) != r * c)
      throw DimensionError("initializer size mismatch");
    size_t i = 0;
    for (double v : vals) a[i++] = v;
  }

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
  size_t size() const { return a.size(); }
  bool empty() const { return rows == 0 || cols == 0; }

  static Mat zeros(int r, int c) { return Mat(r, c); }
  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Mat filled(int r, int c, double v) {
    Mat m(r, c);
    for (auto& x : m.a) x = v;
    return m;
  }
};

inline void check_same_shape(const Mat& x, const Mat& y, const char* who) {
  if (x.rows != y.rows || x.cols != y.cols)
    throw DimensionError(std::string(who) + ": " + std::to_string(x.rows) + "x" +
                         std::to_string(x.cols) + " vs " + std::to_string(y.rows) + "x" +
                         std::to_string(y.cols));
}

inline bool all_finite(const Mat& x) {
  for (double v : x.a)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Elementwise and structural operations

inline Mat add(const Mat& x, const Mat& y) {
  check_same_shape(x, y, "add");
  Mat r(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) r.a[i] = x.a[i] + y.a[i];
  return r;
}

inline Mat sub(const Mat& x, const Mat& y) {
  check_same_shape(x, y, "sub");
  Mat r(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) r.a[i] = x.a[i] - y.a[i];
  return r;
}

inline Mat neg(const Mat& x) {
  Mat r(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) r.a[i] = -x.a[i];
  return r;
}

inline Mat scale(const Mat& x, double c) {
  Mat r(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) r.a[i] = c * x.a[i];
  return r;
}

inline Mat hadamard(const Mat& x, const Mat& y) {
  check_same_shape(x, y, "hadamard");
  Mat r(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) r.a[i] = x.a[i] * y.a[i];
  return r;
}

inline Mat transpose(const Mat& x) {
  Mat r(x.cols, x.rows);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) r(j, i) = x(i, j);
  return r;
}

// C = A*B with the fixed i-k-j accumulation order (each C(i,j) accumulates in
// ascending k); the inner j loop is what the compiler vectorizes.
inline void matmul_into(const Mat& A, const Mat& B, Mat& C) {
  if (A.cols != B.rows)
    throw DimensionError("matmul: " + std::to_string(A.rows) + "x" + std::to_string(A.cols) +
                         " * " + std::to_string(B.rows) + "x" + std::to_string(B.cols));
  const int m = A.rows, kk = A.cols, n = B.cols;
  C.rows = m;
  C.cols = n;
  C.a.assign(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* ar = A.a.data() + static_cast<size_t>(i) * kk;
    double* cr = C.a.data() + static_cast<size_t>(i) * n;
    for (int k = 0; k < kk; ++k) {
      const double aik = ar[k];
      if (aik == 0.0) continue;  // zero rows/cols stay exactly zero
      const double* br = B.a.data() + static_cast<size_t>(k) * n;
      for (int j = 0; j < n; ++j) cr[j] += aik * br[j];
    }
  }
}

inline Mat matmul(const Mat& A, const Mat& B) {
  Mat C;
  matmul_into(A, B, C);
  return C;
}

inline Mat hcat(const Mat& x, const Mat& y) {
  if (x.rows != y.rows) throw DimensionError("hcat: row mismatch");
  Mat r(x.rows, x.cols + y.cols);
  for (int i = 0; i < x.rows; ++i) {
    for (int j = 0; j < x.cols; ++j) r(i, j) = x(i, j);
    for (int j = 0; j < y.cols; ++j) r(i, x.cols + j) = y(i, j);
  }
  return r;
}

inline Mat vcat(const Mat& x, const Mat& y) {
  if (x.cols != y.cols) throw DimensionError("vcat: col mismatch");
  Mat r(x.rows + y.rows, x.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) r(i, j) = x(i, j);
  for (int i = 0; i < y.rows; ++i)
    for (int j = 0; j < y.cols; ++j) r(x.rows + i, j) = y(i, j);
  return r;
}

// Half-open block [r0,r1) x [c0,c1).
inline Mat slice(const Mat& x, int r0, int r1, int c0, int c1) {
  if (r0 < 0 || c0 < 0 || r1 > x.rows || c1 > x.cols || r0 > r1 || c0 > c1)
    throw DimensionError("slice out of range");
  Mat r(r1 - r0, c1 - c0);
  for (int i = r0; i < r1; ++i)
    for (int j = c0; j < c1; ++j) r(i - r0, j - c0) = x(i, j);
  return r;
}

inline Mat diag_extract(const Mat& x) {
  if (x.rows != x.cols) throw DimensionError("diag_extract: not square");
  Mat r(x.rows, 1);
  for (int i = 0; i < x.rows; ++i) r(i, 0) = x(i, i);
  return r;
}

inline Mat diag_build(const Mat& v) {
  if (v.cols != 1) throw DimensionError("diag_build: expected a column");
  Mat r(v.rows, v.rows);
  for (int i = 0; i < v.rows; ++i) r(i, i) = v(i, 0);
  return r;
}

// Strictly lower triangular part (zero diagonal and above).
inline Mat tril_strict(const Mat& x) {
  if (x.rows != x.cols) throw DimensionError("tril_strict: not square");
  Mat r(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < i; ++j) r(i, j) = x(i, j);
  return r;
}

// x - x^T in one pass.
inline Mat skew(const Mat& x) {
  if (x.rows != x.cols) throw DimensionError("skew: not square");
  Mat r(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) r(i, j) = x(i, j) - x(j, i);
  return r;
}

// alpha*x + beta*y without materializing the scaled copies.
inline Mat axpby(double alpha, const Mat& x, double beta, const Mat& y) {
  check_same_shape(x, y, "axpby");
  Mat r(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) r.a[i] = alpha * x.a[i] + beta * y.a[i];
  return r;
}

// Scales column j of x by r(0, j); equivalent to x * diag(r^T) without the
// dense diagonal.
inline Mat mul_row_broadcast(const Mat& x, const Mat& r) {
  if (r.rows != 1 || r.cols != x.cols)
    throw DimensionError("mul_row_broadcast: need a matching row");
  Mat out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out(i, j) = x(i, j) * r(0, j);
  return out;
}

// Scales row i of x by c(i, 0); equivalent to diag(c) * x without the dense
// diagonal.
inline Mat mul_col_broadcast(const Mat& x, const Mat& c) {
  if (c.cols != 1 || c.rows != x.rows)
    throw DimensionError("mul_col_broadcast: need a matching column");
  Mat out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out(i, j) = x(i, j) * c(i, 0);
  return out;
}

inline double norm_fro(const Mat& x) {
  double s = 0.0;
  for (double v : x.a) s += v * v;
  return std::sqrt(s);
}

inline double norm_inf(const Mat& x) {  // max absolute row sum
  double best = 0.0;
  for (int i = 0; i < x.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < x.cols; ++j) s += std::fabs(x(i, j));
    if (s > best) best = s;
  }
  return best;
}

inline double max_abs(const Mat& x) {
  double best = 0.0;
  for (double v : x.a) best = std::max(best, std::fabs(v));
  return best;
}

inline double dot(const Mat& x, const Mat& y) {
  check_same_shape(x, y, "dot");
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x.a[i] * y.a[i];
  return s;
}

inline Mat symmetrize(const Mat& x) {
  if (x.rows != x.cols) throw DimensionError("symmetrize: not square");
  Mat r(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) r(i, j) = 0.5 * (x(i, j) + x(j, i));
  return r;
}

// ---------------------------------------------------------------------------
// LU with partial pivoting

struct LuFactors {
  Mat lu;                // unit-lower L below diagonal, U on and above
  std::vector<int> piv;  // row swapped with i at step i
};

inline LuFactors lu_factor(const Mat& A) {
  if (A.rows != A.cols) throw DimensionError("lu_factor: not square");
  const int n = A.rows;
  LuFactors f;
  f.lu = A;
  f.piv.resize(n);
  const double tiny = 1e-13 * norm_inf(A);
  double* a = f.lu.a.data();
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = std::fabs(a[static_cast<size_t>(k) * n + k]);
    for (int i = k + 1; i < n; ++i) {
      double v = std::fabs(a[static_cast<size_t>(i) * n + k]);
      if (v > best) {
        best = v;
        p = i;
      }
    }
    f.piv[k] = p;
    if (p != k)
      for (int j = 0; j < n; ++j)
        std::swap(a[static_cast<size_t>(k) * n + j], a[static_cast<size_t>(p) * n + j]);
    const double pivot = a[static_cast<size_t>(k) * n + k];
    if (!(std::fabs(pivot) > tiny))
      throw SingularMatrixError("pivot " + std::to_string(k) + " below threshold");
    const double inv = 1.0 / pivot;
    for (int i = k + 1; i < n; ++i) {
      double* ri = a + static_cast<size_t>(i) * n;
      const double* rk = a + static_cast<size_t>(k) * n;
      const double lik = ri[k] * inv;
      ri[k] = lik;
      if (lik == 0.0) continue;
      for (int j = k + 1; j < n; ++j) ri[j] -= lik * rk[j];
    }
  }
  return f;
}

// Solve A X = B given A = P^{-1} L U (all right-hand sides at once; the inner
// loops run over the RHS columns so they vectorize).
inline Mat lu_solve(const LuFactors& f, const Mat& B) {
  const int n = f.lu.rows;
  if (B.rows != n) throw DimensionError("lu_solve: rhs rows");
  Mat X = B;
  const int m = X.cols;
  double* x = X.a.data();
  const double* a = f.lu.a.data();
  for (int k = 0; k < n; ++k) {
    int p = f.piv[k];
    if (p != k)
      for (int j = 0; j < m; ++j)
        std::swap(x[static_cast<size_t>(k) * m + j], x[static_cast<size_t>(p) * m + j]);
  }
  for (int k = 0; k < n; ++k) {  // L y = Pb
    const double* xk = x + static_cast<size_t>(k) * m;
    for (int i = k + 1; i < n; ++i) {
      const double lik = a[static_cast<size_t>(i) * n + k];
      if (lik == 0.0) continue;
      double* xi = x + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) xi[j] -= lik * xk[j];
    }
  }
  for (int k = n - 1; k >= 0; --k) {  // U x = y
    double* xk = x + static_cast<size_t>(k) * m;
    const double inv = 1.0 / a[static_cast<size_t>(k) * n + k];
    for (int j = 0; j < m; ++j) xk[j] *= inv;
    for (int i = 0; i < k; ++i) {
      const double uik = a[static_cast<size_t>(i) * n + k];
      if (uik == 0.0) continue;
      double* xi = x + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) xi[j] -= uik * xk[j];
    }
  }
  return X;
}

// Solve A^T X = B reusing the factorization of A: A^T = U^T L^T P.
inline Mat lu_solve_transposed(const LuFactors& f, const Mat& B) {
  const int n = f.lu.rows;
  if (B.rows != n) throw DimensionError("lu_solve_transposed: rhs rows");
  Mat X = B;
  const int m = X.cols;
  double* x = X.a.data();
  const double* a = f.lu.a.data();
  for (int k = 0; k < n; ++k) {  // U^T z = B (U^T is lower triangular)
    double* xk = x + static_cast<size_t>(k) * m;
    const double inv = 1.0 / a[static_cast<size_t>(k) * n + k];
    for (int j = 0; j < m; ++j) xk[j] *= inv;
    for (int i = k + 1; i < n; ++i) {
      const double uki = a[static_cast<size_t>(k) * n + i];
      if (uki == 0.0) continue;
      double* xi = x + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) xi[j] -= uki * xk[j];
    }
  }
  for (int k = n - 1; k >= 0; --k) {  // L^T w = z (L^T is unit upper triangular)
    double* xk = x + static_cast<size_t>(k) * m;
    for (int i = 0; i < k; ++i) {
      const double lki = a[static_cast<size_t>(k) * n + i];
      if (lki == 0.0) continue;
      double* xi = x + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) xi[j] -= lki * xk[j];
    }
  }
  for (int k = n - 1; k >= 0; --k) {  // undo pivoting: X = P^T w
    int p = f.piv[k];
    if (p != k)
      for (int j = 0; j < m; ++j)
        std::swap(x[static_cast<size_t>(k) * m + j], x[static_cast<size_t>(p) * m + j]);
  }
  return X;
}

inline Mat solve(const Mat& A, const Mat& B) {
  if (A.rows == 0) {
    if (B.rows != 0) throw DimensionError("solve: rhs rows");
    return Mat(0, B.cols);
  }
  return lu_solve(lu_factor(A), B);
}

// ---------------------------------------------------------------------------
// Cholesky and the positive-definiteness margin

// Lower-triangular L with L L^T = (a + a^T)/2. Throws NotPositiveDefiniteError
// with the failing pivot row if the symmetrized input is not PD.
inline Mat cholesky(const Mat& a) {
  Mat s = symmetrize(a);
  const int n = s.rows;
  Mat L(n, n);
  for (int j = 0; j < n; ++j) {
    double d = s(j, j);
    for (int k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
    if (!(d > 0.0)) throw NotPositiveDefiniteError(j);
    const double ljj = std::sqrt(d);
    L(j, j) = ljj;
    const double inv = 1.0 / ljj;
    for (int i = j + 1; i < n; ++i) {
      double v = s(i, j);
      for (int k = 0; k < j; ++k) v -= L(i, k) * L(j, k);
      L(i, j) = v * inv;
    }
  }
  return L;
}

inline bool is_positive_definite(const Mat& a) {
  try {
    cholesky(a);
    return true;
  } catch (const NotPositiveDefiniteError&) {
    return false;
  }
}

// Smallest eigenvalue of the symmetrized input, located by bisection on
// "cholesky(a - tau*I) succeeds". The caller supplies a bracket with the
// predicate true at lo and false at hi.
inline double pd_margin(const Mat& a, double lo, double hi, double tol = 1e-10) {
  if (a.rows != a.cols) throw DimensionError("pd_margin: not square");
  if (!(lo < hi)) throw BracketError("lo must be below hi");
  Mat s = symmetrize(a);
  auto shifted_pd = [&](double tau) {
    Mat m = s;
    for (int i = 0; i < m.rows; ++i) m(i, i) -= tau;
    return is_positive_definite(m);
  };
  if (!shifted_pd(lo)) throw BracketError("predicate false at lo");
  if (shifted_pd(hi)) throw BracketError("predicate true at hi");
  while (hi - lo > tol) {
    double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // bracket at floating-point resolution
    if (shifted_pd(mid))
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace robnet
