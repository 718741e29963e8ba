#pragma once
// Tape-based reverse-mode differentiation over Mat. Recording is eager: each
// op computes its value immediately, so the tape doubles as the forward pass
// and can be replayed deterministically. backward() seeds a 1x1 root and
// sweeps the tape once in reverse. No recorded value is ever mutated in
// place; adjoints are allocated lazily so untouched subgraphs cost nothing.

#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "robnet/linalg.hpp"

namespace robnet {

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Neg,
  Scale,       // matrix * compile-time scalar (stored on the node)
  SMul,        // broadcast: 1x1 variable * matrix
  Axpby,       // s*a + s2*b in a single node
  MatMul,
  Transpose,
  Skew,        // a - a^T in a single node
  Relu,
  Tanh,
  Exp,
  Square,
  Reciprocal,
  Log,
  Slice,       // half-open block [i0,i1) x [i2,i3)
  VCat,
  HCat,
  DiagExtract,
  DiagBuild,
  TrilStrict,
  MulRowBroadcast,  // scales column j of a by b(0, j)
  MulColBroadcast,  // scales row i of a by b(i, 0)
  Sum,
  Mean,
  Solve,       // value = a^{-1} b; keeps the LU factors for the reverse sweep
  SoftmaxXent  // mean over columns of cross-entropy between softmax(a) and b
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

struct Node {
  OpKind kind = OpKind::Leaf;
  int a = -1, b = -1;
  int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
  double s = 0.0, s2 = 0.0;
  bool learnable = false;
  Mat value;
  Mat adjoint;  // empty until the reverse sweep touches it
  std::unique_ptr<LuFactors> lu;
};

class Tape {
 public:
  Var leaf(const Mat& v, bool learnable = true) {
    Node n;
    n.kind = OpKind::Leaf;
    n.learnable = learnable;
    n.value = v;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(const Mat& v) { return leaf(v, false); }

  size_t size() const { return nodes_.size(); }
  void reset() {
    nodes_.clear();
    ones_rows_.clear();
    identities_.clear();
  }

  const Mat& val(Var v) const { return nodes_.at(v.id).value; }

  // Adjoint of a node after backward(); empty means identically zero.
  const Mat& adj(Var v) const { return nodes_.at(v.id).adjoint; }

  Mat grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.adjoint.empty() && !n.value.empty()) return Mat(n.value.rows, n.value.cols);
    return n.adjoint;
  }

  // --- generic record ------------------------------------------------------

  Var record(OpKind k, Var a, Var b = Var{}, int i0 = 0, int i1 = 0, int i2 = 0, int i3 = 0,
             double s = 0.0, double s2 = 0.0) {
    check_owned(a, "record");
    if (b.valid()) check_owned(b, "record");
    Node n;
    n.kind = k;
    n.a = a.id;
    n.b = b.valid() ? b.id : -1;
    n.i0 = i0;
    n.i1 = i1;
    n.i2 = i2;
    n.i3 = i3;
    n.s = s;
    n.s2 = s2;
    n.value = compute(n);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  // --- op helpers ----------------------------------------------------------

  Var add(Var a, Var b) { return record(OpKind::Add, a, b); }
  Var sub(Var a, Var b) { return record(OpKind::Sub, a, b); }
  Var neg(Var a) { return record(OpKind::Neg, a); }
  Var scale(Var a, double c) { return record(OpKind::Scale, a, Var{}, 0, 0, 0, 0, c); }
  Var smul(Var scalar, Var a) { return record(OpKind::SMul, scalar, a); }
  Var axpby(double alpha, Var a, double beta, Var b) {
    return record(OpKind::Axpby, a, b, 0, 0, 0, 0, alpha, beta);
  }
  Var matmul(Var a, Var b) { return record(OpKind::MatMul, a, b); }
  Var transpose(Var a) { return record(OpKind::Transpose, a); }
  Var skew(Var a) { return record(OpKind::Skew, a); }
  Var relu(Var a) { return record(OpKind::Relu, a); }
  Var tanh_(Var a) { return record(OpKind::Tanh, a); }
  Var exp_(Var a) { return record(OpKind::Exp, a); }
  Var square(Var a) { return record(OpKind::Square, a); }
  Var reciprocal(Var a) { return record(OpKind::Reciprocal, a); }
  Var log_(Var a) { return record(OpKind::Log, a); }
  Var slice(Var a, int r0, int r1, int c0, int c1) {
    return record(OpKind::Slice, a, Var{}, r0, r1, c0, c1);
  }
  Var slice_rows(Var a, int r0, int r1) { return slice(a, r0, r1, 0, val(a).cols); }
  Var slice_cols(Var a, int c0, int c1) { return slice(a, 0, val(a).rows, c0, c1); }
  Var vcat(Var a, Var b) { return record(OpKind::VCat, a, b); }
  Var hcat(Var a, Var b) { return record(OpKind::HCat, a, b); }
  Var diag_extract(Var a) { return record(OpKind::DiagExtract, a); }
  Var diag_build(Var a) { return record(OpKind::DiagBuild, a); }
  Var tril_strict(Var a) { return record(OpKind::TrilStrict, a); }
  Var mul_row_broadcast(Var a, Var r) { return record(OpKind::MulRowBroadcast, a, r); }
  Var mul_col_broadcast(Var a, Var c) { return record(OpKind::MulColBroadcast, a, c); }
  Var sum(Var a) { return record(OpKind::Sum, a); }
  Var mean(Var a) { return record(OpKind::Mean, a); }
  Var solve(Var a, Var b) { return record(OpKind::Solve, a, b); }
  Var softmax_xent(Var logits, Var onehot) { return record(OpKind::SoftmaxXent, logits, onehot); }

  // b is a column; adds it to every column of a (via an all-ones row so the
  // op set stays minimal).
  Var add_col_broadcast(Var a, Var b) {
    const Mat& av = val(a);
    if (val(b).cols != 1 || val(b).rows != av.rows)
      throw DimensionError("add_col_broadcast: need matching column");
    return add(a, matmul(b, ones_row(av.cols)));
  }

  Var ones_row(int n) {
    auto it = ones_rows_.find(n);
    if (it != ones_rows_.end()) return Var{this, it->second};
    Var v = constant(Mat::filled(1, n, 1.0));
    ones_rows_[n] = v.id;
    return v;
  }

  // Identity constants are shared per size, like ones_row: constructions that
  // run many times on one tape should not stack up copies of I.
  Var identity(int n) {
    auto it = identities_.find(n);
    if (it != identities_.end()) return Var{this, it->second};
    Var v = constant(Mat::identity(n));
    identities_[n] = v.id;
    return v;
  }

  // --- reverse sweep -------------------------------------------------------

  // With release_memory set, each non-leaf node's value, adjoint, and LU
  // storage is dropped as soon as the sweep passes it. That is safe because a
  // node's storage is last read by its own propagation step: every consumer
  // sits later on the tape and has already been processed. Leaves keep value
  // and adjoint (parameter gradients stay readable) and the root keeps its
  // value; everything else reads back as empty. Training loops over long
  // rollouts use this so the tape's live set shrinks to the leaves instead of
  // doubling at the peak.
  void backward(Var root, bool release_memory = false) {
    check_owned(root, "backward");
    const Node& r = nodes_[root.id];
    if (r.value.rows != 1 || r.value.cols != 1)
      throw DimensionError("backward: root must be 1x1");
    for (Node& n : nodes_) n.adjoint = Mat();
    nodes_[root.id].adjoint = Mat::filled(1, 1, 1.0);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.kind == OpKind::Leaf) continue;
      if (!n.adjoint.empty()) propagate(n);
      if (release_memory) {
        n.adjoint = Mat();
        n.lu.reset();
        if (id != root.id) n.value = Mat();
      }
    }
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<int, int> ones_rows_;
  std::unordered_map<int, int> identities_;

  void check_owned(Var v, const char* who) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw Error(std::string(who) + ": variable does not belong to this tape");
  }

  const Mat& in0(const Node& n) const { return nodes_[n.a].value; }
  const Mat& in1(const Node& n) const { return nodes_[n.b].value; }

  void accum(int id, const Mat& delta) {
    Mat& adj = nodes_[id].adjoint;
    if (adj.empty()) {
      adj = delta;
      return;
    }
    check_same_shape(adj, delta, "adjoint accumulate");
    for (size_t i = 0; i < adj.size(); ++i) adj.a[i] += delta.a[i];
  }

  Mat compute(Node& n) {
    switch (n.kind) {
      case OpKind::Leaf:
        return n.value;
      case OpKind::Add:
        return robnet::add(in0(n), in1(n));
      case OpKind::Sub:
        return robnet::sub(in0(n), in1(n));
      case OpKind::Neg:
        return robnet::neg(in0(n));
      case OpKind::Scale:
        return robnet::scale(in0(n), n.s);
      case OpKind::SMul: {
        const Mat& s = in0(n);
        if (s.rows != 1 || s.cols != 1) throw DimensionError("smul: scalar side must be 1x1");
        return robnet::scale(in1(n), s(0, 0));
      }
      case OpKind::Axpby:
        return robnet::axpby(n.s, in0(n), n.s2, in1(n));
      case OpKind::MatMul:
        return robnet::matmul(in0(n), in1(n));
      case OpKind::Transpose:
        return robnet::transpose(in0(n));
      case OpKind::Skew:
        return robnet::skew(in0(n));
      case OpKind::Relu: {
        Mat r = in0(n);
        for (auto& v : r.a) v = v > 0.0 ? v : 0.0;
        return r;
      }
      case OpKind::Tanh: {
        Mat r = in0(n);
        for (auto& v : r.a) v = std::tanh(v);
        return r;
      }
      case OpKind::Exp: {
        Mat r = in0(n);
        for (auto& v : r.a) v = std::exp(v);
        return r;
      }
      case OpKind::Square: {
        Mat r = in0(n);
        for (auto& v : r.a) v = v * v;
        return r;
      }
      case OpKind::Reciprocal: {
        Mat r = in0(n);
        for (auto& v : r.a) v = 1.0 / v;
        return r;
      }
      case OpKind::Log: {
        Mat r = in0(n);
        for (auto& v : r.a) v = std::log(v);
        return r;
      }
      case OpKind::Slice:
        return robnet::slice(in0(n), n.i0, n.i1, n.i2, n.i3);
      case OpKind::VCat:
        return robnet::vcat(in0(n), in1(n));
      case OpKind::HCat:
        return robnet::hcat(in0(n), in1(n));
      case OpKind::DiagExtract:
        return robnet::diag_extract(in0(n));
      case OpKind::DiagBuild:
        return robnet::diag_build(in0(n));
      case OpKind::TrilStrict:
        return robnet::tril_strict(in0(n));
      case OpKind::MulRowBroadcast:
        return robnet::mul_row_broadcast(in0(n), in1(n));
      case OpKind::MulColBroadcast:
        return robnet::mul_col_broadcast(in0(n), in1(n));
      case OpKind::Sum: {
        double s = 0.0;
        for (double v : in0(n).a) s += v;
        return Mat::filled(1, 1, s);
      }
      case OpKind::Mean: {
        const Mat& x = in0(n);
        if (x.empty()) throw DimensionError("mean of empty matrix");
        double s = 0.0;
        for (double v : x.a) s += v;
        return Mat::filled(1, 1, s / static_cast<double>(x.size()));
      }
      case OpKind::Solve: {
        n.lu = std::make_unique<LuFactors>(lu_factor(in0(n)));
        return lu_solve(*n.lu, in1(n));
      }
      case OpKind::SoftmaxXent:
        return softmax_xent_value(in0(n), in1(n));
    }
    throw Error("record: unknown op kind");
  }

 public:
  static Mat softmax_probs(const Mat& logits) {
    Mat p(logits.rows, logits.cols);
    for (int j = 0; j < logits.cols; ++j) {
      double m = logits(0, j);
      for (int i = 1; i < logits.rows; ++i) m = std::max(m, logits(i, j));
      double denom = 0.0;
      for (int i = 0; i < logits.rows; ++i) denom += std::exp(logits(i, j) - m);
      for (int i = 0; i < logits.rows; ++i) p(i, j) = std::exp(logits(i, j) - m) / denom;
    }
    return p;
  }

  static Mat softmax_xent_value(const Mat& logits, const Mat& onehot) {
    check_same_shape(logits, onehot, "softmax_xent");
    if (logits.cols < 1) throw DimensionError("softmax_xent: empty batch");
    double total = 0.0;
    for (int j = 0; j < logits.cols; ++j) {
      double m = logits(0, j);
      for (int i = 1; i < logits.rows; ++i) m = std::max(m, logits(i, j));
      double denom = 0.0;
      for (int i = 0; i < logits.rows; ++i) denom += std::exp(logits(i, j) - m);
      double lse = m + std::log(denom);
      for (int i = 0; i < logits.rows; ++i) total += onehot(i, j) * (lse - logits(i, j));
    }
    return Mat::filled(1, 1, total / logits.cols);
  }

 private:
  void propagate(Node& n) {
    const Mat& g = n.adjoint;
    switch (n.kind) {
      case OpKind::Leaf:
        return;
      case OpKind::Add:
        accum(n.a, g);
        accum(n.b, g);
        return;
      case OpKind::Sub:
        accum(n.a, g);
        accum(n.b, robnet::neg(g));
        return;
      case OpKind::Neg:
        accum(n.a, robnet::neg(g));
        return;
      case OpKind::Scale:
        accum(n.a, robnet::scale(g, n.s));
        return;
      case OpKind::SMul: {
        accum(n.a, Mat::filled(1, 1, robnet::dot(g, in1(n))));
        accum(n.b, robnet::scale(g, in0(n)(0, 0)));
        return;
      }
      case OpKind::Axpby:
        accum(n.a, robnet::scale(g, n.s));
        accum(n.b, robnet::scale(g, n.s2));
        return;
      case OpKind::MatMul:
        accum(n.a, robnet::matmul(g, robnet::transpose(in1(n))));
        accum(n.b, robnet::matmul(robnet::transpose(in0(n)), g));
        return;
      case OpKind::Transpose:
        accum(n.a, robnet::transpose(g));
        return;
      case OpKind::Skew:
        // y = x - x^T pulls back to g - g^T
        accum(n.a, robnet::skew(g));
        return;
      case OpKind::Relu: {
        const Mat& x = in0(n);
        Mat d(g.rows, g.cols);
        for (size_t i = 0; i < g.size(); ++i) d.a[i] = x.a[i] > 0.0 ? g.a[i] : 0.0;
        accum(n.a, d);
        return;
      }
      case OpKind::Tanh: {
        Mat d(g.rows, g.cols);
        for (size_t i = 0; i < g.size(); ++i) d.a[i] = g.a[i] * (1.0 - n.value.a[i] * n.value.a[i]);
        accum(n.a, d);
        return;
      }
      case OpKind::Exp: {
        Mat d(g.rows, g.cols);
        for (size_t i = 0; i < g.size(); ++i) d.a[i] = g.a[i] * n.value.a[i];
        accum(n.a, d);
        return;
      }
      case OpKind::Square: {
        const Mat& x = in0(n);
        Mat d(g.rows, g.cols);
        for (size_t i = 0; i < g.size(); ++i) d.a[i] = 2.0 * g.a[i] * x.a[i];
        accum(n.a, d);
        return;
      }
      case OpKind::Reciprocal: {
        Mat d(g.rows, g.cols);
        for (size_t i = 0; i < g.size(); ++i) d.a[i] = -g.a[i] * n.value.a[i] * n.value.a[i];
        accum(n.a, d);
        return;
      }
      case OpKind::Log: {
        const Mat& x = in0(n);
        Mat d(g.rows, g.cols);
        for (size_t i = 0; i < g.size(); ++i) d.a[i] = g.a[i] / x.a[i];
        accum(n.a, d);
        return;
      }
      case OpKind::Slice: {
        const Mat& x = in0(n);
        Mat d(x.rows, x.cols);
        for (int i = n.i0; i < n.i1; ++i)
          for (int j = n.i2; j < n.i3; ++j) d(i, j) = g(i - n.i0, j - n.i2);
        accum(n.a, d);
        return;
      }
      case OpKind::VCat: {
        const int ra = in0(n).rows;
        accum(n.a, robnet::slice(g, 0, ra, 0, g.cols));
        accum(n.b, robnet::slice(g, ra, g.rows, 0, g.cols));
        return;
      }
      case OpKind::HCat: {
        const int ca = in0(n).cols;
        accum(n.a, robnet::slice(g, 0, g.rows, 0, ca));
        accum(n.b, robnet::slice(g, 0, g.rows, ca, g.cols));
        return;
      }
      case OpKind::DiagExtract: {
        accum(n.a, robnet::diag_build(g));
        return;
      }
      case OpKind::DiagBuild: {
        accum(n.a, robnet::diag_extract(g));
        return;
      }
      case OpKind::TrilStrict: {
        accum(n.a, robnet::tril_strict(g));
        return;
      }
      case OpKind::MulRowBroadcast: {
        const Mat& x = in0(n);
        const Mat& r = in1(n);
        Mat dx(g.rows, g.cols);
        Mat dr(1, g.cols);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) {
            dx(i, j) = g(i, j) * r(0, j);
            dr(0, j) += g(i, j) * x(i, j);
          }
        accum(n.a, dx);
        accum(n.b, dr);
        return;
      }
      case OpKind::MulColBroadcast: {
        const Mat& x = in0(n);
        const Mat& c = in1(n);
        Mat dx(g.rows, g.cols);
        Mat dc(g.rows, 1);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) {
            dx(i, j) = g(i, j) * c(i, 0);
            dc(i, 0) += g(i, j) * x(i, j);
          }
        accum(n.a, dx);
        accum(n.b, dc);
        return;
      }
      case OpKind::Sum: {
        accum(n.a, Mat::filled(in0(n).rows, in0(n).cols, g(0, 0)));
        return;
      }
      case OpKind::Mean: {
        const Mat& x = in0(n);
        accum(n.a, Mat::filled(x.rows, x.cols, g(0, 0) / static_cast<double>(x.size())));
        return;
      }
      case OpKind::Solve: {
        // X = A^{-1} B:  dB = A^{-T} dX,  dA = -dB X^T. The forward LU is
        // reused for the transposed solve.
        Mat gB = lu_solve_transposed(*n.lu, g);
        accum(n.a, robnet::neg(robnet::matmul(gB, robnet::transpose(n.value))));
        accum(n.b, gB);
        return;
      }
      case OpKind::SoftmaxXent: {
        const Mat& logits = in0(n);
        const Mat& onehot = in1(n);
        Mat p = softmax_probs(logits);
        const double w = g(0, 0) / logits.cols;
        Mat dl(logits.rows, logits.cols);
        Mat dh(logits.rows, logits.cols);
        for (int j = 0; j < logits.cols; ++j) {
          double m = logits(0, j);
          for (int i = 1; i < logits.rows; ++i) m = std::max(m, logits(i, j));
          double denom = 0.0;
          for (int i = 0; i < logits.rows; ++i) denom += std::exp(logits(i, j) - m);
          double lse = m + std::log(denom);
          double rowmass = 0.0;
          for (int i = 0; i < logits.rows; ++i) rowmass += onehot(i, j);
          for (int i = 0; i < logits.rows; ++i) {
            dl(i, j) = w * (rowmass * p(i, j) - onehot(i, j));
            dh(i, j) = w * (lse - logits(i, j));
          }
        }
        accum(n.a, dl);
        accum(n.b, dh);
        return;
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check

// Builds the scalar function twice to detect nondeterministic recordings,
// then compares the reverse-mode leaf gradients against central differences.
// Returns the worst relative error (absolute where both values are ~0).
inline double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                         const std::vector<Mat>& leaves, double step = 1e-6) {
  auto eval = [&](const std::vector<Mat>& points) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(points.size());
    for (const Mat& m : points) vars.push_back(t.leaf(m));
    Var root = f(t, vars);
    return t.val(root)(0, 0);
  };

  Tape t;
  std::vector<Var> vars;
  for (const Mat& m : leaves) vars.push_back(t.leaf(m));
  Var root = f(t, vars);
  if (t.val(root).rows != 1 || t.val(root).cols != 1)
    throw DimensionError("grad_check: function must be scalar-valued");
  const double base = t.val(root)(0, 0);
  const double replay = eval(leaves);
  if (std::memcmp(&base, &replay, sizeof(double)) != 0)
    throw Error("grad_check: function is nondeterministic");
  t.backward(root);

  std::vector<Mat> grads;
  grads.reserve(vars.size());
  for (Var v : vars) grads.push_back(t.grad(v));

  double worst = 0.0;
  std::vector<Mat> pts = leaves;
  for (size_t li = 0; li < leaves.size(); ++li) {
    for (size_t e = 0; e < leaves[li].size(); ++e) {
      const double x0 = leaves[li].a[e];
      const double h = step * (1.0 + std::fabs(x0));
      pts[li].a[e] = x0 + h;
      const double fp = eval(pts);
      pts[li].a[e] = x0 - h;
      const double fm = eval(pts);
      pts[li].a[e] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = grads[li].a[e];
      const double mag = std::max(std::fabs(fd), std::fabs(an));
      const double err = mag > 1e-8 ? std::fabs(an - fd) / mag : std::fabs(an - fd);
      if (err > worst) worst = err;
    }
  }
  return worst;
}

}  // namespace robnet
