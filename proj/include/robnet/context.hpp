#pragma once
// Two interchangeable evaluation backends with the same surface: ValueCtx
// computes on plain Mat, TapeCtx records onto a Tape. Model constructions and
// rollouts are written once as templates over a context, which guarantees the
// differentiable path and the plain path share the exact same kernels (and so
// the same floating-point results).

#include "robnet/autodiff.hpp"
#include "robnet/linalg.hpp"

namespace robnet {

struct ValueCtx {
  using H = Mat;
  Mat constant(const Mat& m) const { return m; }
  Mat leaf(const Mat& m) const { return m; }
  const Mat& value(const Mat& m) const { return m; }
  Mat add(const Mat& a, const Mat& b) const { return robnet::add(a, b); }
  Mat sub(const Mat& a, const Mat& b) const { return robnet::sub(a, b); }
  Mat neg(const Mat& a) const { return robnet::neg(a); }
  Mat scale(const Mat& a, double c) const { return robnet::scale(a, c); }
  Mat smul(const Mat& s, const Mat& a) const { return robnet::scale(a, s(0, 0)); }
  Mat axpby(double alpha, const Mat& a, double beta, const Mat& b) const {
    return robnet::axpby(alpha, a, beta, b);
  }
  Mat matmul(const Mat& a, const Mat& b) const { return robnet::matmul(a, b); }
  Mat transpose(const Mat& a) const { return robnet::transpose(a); }
  Mat skew(const Mat& a) const { return robnet::skew(a); }
  Mat identity(int n) const { return Mat::identity(n); }
  Mat relu(const Mat& a) const {
    Mat r = a;
    for (auto& v : r.a) v = v > 0.0 ? v : 0.0;
    return r;
  }
  Mat tanh_(const Mat& a) const {
    Mat r = a;
    for (auto& v : r.a) v = std::tanh(v);
    return r;
  }
  Mat exp_(const Mat& a) const {
    Mat r = a;
    for (auto& v : r.a) v = std::exp(v);
    return r;
  }
  Mat square(const Mat& a) const {
    Mat r = a;
    for (auto& v : r.a) v = v * v;
    return r;
  }
  Mat reciprocal(const Mat& a) const {
    Mat r = a;
    for (auto& v : r.a) v = 1.0 / v;
    return r;
  }
  Mat slice(const Mat& a, int r0, int r1, int c0, int c1) const {
    return robnet::slice(a, r0, r1, c0, c1);
  }
  Mat vcat(const Mat& a, const Mat& b) const { return robnet::vcat(a, b); }
  Mat hcat(const Mat& a, const Mat& b) const { return robnet::hcat(a, b); }
  Mat diag_extract(const Mat& a) const { return robnet::diag_extract(a); }
  Mat diag_build(const Mat& a) const { return robnet::diag_build(a); }
  Mat tril_strict(const Mat& a) const { return robnet::tril_strict(a); }
  Mat mul_row_broadcast(const Mat& a, const Mat& r) const {
    return robnet::mul_row_broadcast(a, r);
  }
  Mat mul_col_broadcast(const Mat& a, const Mat& c) const {
    return robnet::mul_col_broadcast(a, c);
  }
  Mat solve(const Mat& a, const Mat& b) const { return robnet::solve(a, b); }
  Mat sum(const Mat& a) const {
    double s = 0.0;
    for (double v : a.a) s += v;
    return Mat::filled(1, 1, s);
  }
  Mat mean(const Mat& a) const {
    if (a.empty()) throw DimensionError("mean of empty matrix");
    double s = 0.0;
    for (double v : a.a) s += v;
    return Mat::filled(1, 1, s / static_cast<double>(a.size()));
  }
  Mat softmax_xent(const Mat& logits, const Mat& onehot) const {
    return Tape::softmax_xent_value(logits, onehot);
  }
  Mat add_col_broadcast(const Mat& a, const Mat& b) const {
    if (b.cols != 1 || b.rows != a.rows)
      throw DimensionError("add_col_broadcast: need matching column");
    Mat r = a;
    for (int i = 0; i < r.rows; ++i)
      for (int j = 0; j < r.cols; ++j) r(i, j) += b(i, 0);
    return r;
  }
};

struct TapeCtx {
  using H = Var;
  Tape* t;
  explicit TapeCtx(Tape& tape) : t(&tape) {}
  Var constant(const Mat& m) const { return t->constant(m); }
  Var leaf(const Mat& m) const { return t->leaf(m); }
  const Mat& value(Var v) const { return t->val(v); }
  Var add(Var a, Var b) const { return t->add(a, b); }
  Var sub(Var a, Var b) const { return t->sub(a, b); }
  Var neg(Var a) const { return t->neg(a); }
  Var scale(Var a, double c) const { return t->scale(a, c); }
  Var smul(Var s, Var a) const { return t->smul(s, a); }
  Var axpby(double alpha, Var a, double beta, Var b) const { return t->axpby(alpha, a, beta, b); }
  Var matmul(Var a, Var b) const { return t->matmul(a, b); }
  Var transpose(Var a) const { return t->transpose(a); }
  Var skew(Var a) const { return t->skew(a); }
  Var identity(int n) const { return t->identity(n); }
  Var relu(Var a) const { return t->relu(a); }
  Var tanh_(Var a) const { return t->tanh_(a); }
  Var exp_(Var a) const { return t->exp_(a); }
  Var square(Var a) const { return t->square(a); }
  Var reciprocal(Var a) const { return t->reciprocal(a); }
  Var slice(Var a, int r0, int r1, int c0, int c1) const { return t->slice(a, r0, r1, c0, c1); }
  Var vcat(Var a, Var b) const { return t->vcat(a, b); }
  Var hcat(Var a, Var b) const { return t->hcat(a, b); }
  Var diag_extract(Var a) const { return t->diag_extract(a); }
  Var diag_build(Var a) const { return t->diag_build(a); }
  Var tril_strict(Var a) const { return t->tril_strict(a); }
  Var mul_row_broadcast(Var a, Var r) const { return t->mul_row_broadcast(a, r); }
  Var mul_col_broadcast(Var a, Var c) const { return t->mul_col_broadcast(a, c); }
  Var solve(Var a, Var b) const { return t->solve(a, b); }
  Var sum(Var a) const { return t->sum(a); }
  Var mean(Var a) const { return t->mean(a); }
  Var softmax_xent(Var logits, Var onehot) const { return t->softmax_xent(logits, onehot); }
  Var add_col_broadcast(Var a, Var b) const { return t->add_col_broadcast(a, b); }
};

}  // namespace robnet
