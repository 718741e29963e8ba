#pragma once
// Lipschitz-bounded deep networks: feedforward models whose end-to-end
// Lipschitz constant is at most a prescribed gamma for every value of the
// unconstrained parameters.
//
// Each hidden layer is a 1-Lipschitz "sandwich"
//     h_out = sqrt(2) A' Psi act( sqrt(2) Psi^{-1} B h_in + b )
// where [A; B] has orthonormal columns (A A' + B B' = I, produced by a Cayley
// transform of free parameters) and Psi is a free positive diagonal scaling.
// The output layer y = W h + b uses W = B' from the same construction, so
// ||W||_2 <= 1. The gamma budget enters as sqrt(gamma) scalings applied to
// the network input and output.

#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "robnet/context.hpp"
#include "robnet/linalg.hpp"
#include "robnet/ren.hpp"  // Act, apply_act, serialization helpers, seed scheme
#include "robnet/rng.hpp"

namespace robnet {

// Cayley map of (X q x q, Y p x q) to A' (q x q) and B' (p x q) with
// A A' + B B' = I. One LU factorization serves both outputs. Rollouts that
// rebuild the construction at every step keep hundreds of these subgraphs on
// one tape, so the chain is kept at six dense q x q nodes (skew, Gram, two
// adds, the solve, and the affine combination) with the identity shared
// tape-wide.
template <class Ctx>
std::pair<typename Ctx::H, typename Ctx::H> cayley_ctx(Ctx& cx, typename Ctx::H X,
                                                       typename Ctx::H Y) {
  const int q = cx.value(X).rows;
  if (cx.value(X).cols != q) throw DimensionError("cayley: X must be square");
  if (cx.value(Y).cols != q) throw DimensionError("cayley: Y must have q columns");
  auto Z = cx.add(cx.skew(X), cx.matmul(cx.transpose(Y), Y));
  auto I = cx.identity(q);
  auto W = cx.solve(cx.add(I, Z), I);
  auto At = cx.axpby(2.0, W, -1.0, I);         // A' = (I+Z)^{-1}(I-Z) = 2 W - I
  auto Bt = cx.scale(cx.matmul(Y, W), -2.0);   // B' = -2 Y (I+Z)^{-1}
  return {At, Bt};
}

struct LbdnLayerParams {
  Mat X, Y;  // Cayley parameters: X q x q, Y p x q (p = fan-in, q = fan-out)
  Mat d;     // q x 1 log of the diagonal scaling Psi = diag(exp d)
  Mat b;     // q x 1 bias
};

struct LbdnDirectParams {
  int nu = 1, ny = 1;
  std::vector<int> hidden;  // widths of the sandwich layers
  double gamma = 1.0;
  Act act = Act::Relu;
  std::vector<LbdnLayerParams> layers;  // one per hidden width
  Mat XL, YL, bL;                       // output layer: XL ny x ny, YL p x ny

  std::vector<int> widths() const {
    std::vector<int> w{nu};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(ny);
    return w;
  }
};

inline std::vector<Mat*> lbdn_learnable_ptrs(LbdnDirectParams& p) {
  std::vector<Mat*> ps;
  for (auto& l : p.layers) {
    ps.push_back(&l.X);
    ps.push_back(&l.Y);
    ps.push_back(&l.d);
    ps.push_back(&l.b);
  }
  ps.push_back(&p.XL);
  ps.push_back(&p.YL);
  ps.push_back(&p.bL);
  return ps;
}

inline LbdnDirectParams init_lbdn(int nu, const std::vector<int>& hidden, int ny, double gamma,
                                  Act act, uint64_t seed) {
  if (nu < 1 || ny < 1) throw SpecError("lbdn needs nu, ny >= 1");
  for (int h : hidden)
    if (h < 1) throw SpecError("lbdn hidden widths must be >= 1");
  if (!(gamma > 0.0)) throw SpecError("lbdn gamma must be positive");
  LbdnDirectParams p;
  p.nu = nu;
  p.ny = ny;
  p.hidden = hidden;
  p.gamma = gamma;
  p.act = act;
  Rng rng(sub_seed(seed, kSeedLbdnInit));
  auto ws = p.widths();
  for (size_t k = 0; k + 2 < ws.size(); ++k) {
    int pin = ws[k], q = ws[k + 1];
    double stddev = 1.0 / std::sqrt(static_cast<double>(pin + q));
    LbdnLayerParams l;
    l.X = rng.normal_mat(q, q, stddev);
    l.Y = rng.normal_mat(pin, q, stddev);
    l.d = Mat(q, 1);
    l.b = Mat(q, 1);
    p.layers.push_back(std::move(l));
  }
  int plast = ws[ws.size() - 2];
  double stddev = 1.0 / std::sqrt(static_cast<double>(plast + ny));
  p.XL = rng.normal_mat(ny, ny, stddev);
  p.YL = rng.normal_mat(plast, ny, stddev);
  p.bL = Mat(ny, 1);
  return p;
}

// ---------------------------------------------------------------------------
// Direct-to-explicit construction

template <class Ctx>
struct LbdnLeaves {
  using H = typename Ctx::H;
  struct Layer {
    H X, Y, d, b;
  };
  std::vector<Layer> layers;
  H XL, YL, bL;
};

template <class Ctx>
LbdnLeaves<Ctx> lbdn_make_leaves(Ctx& cx, const LbdnDirectParams& p) {
  LbdnLeaves<Ctx> L;
  for (const auto& l : p.layers)
    L.layers.push_back({cx.leaf(l.X), cx.leaf(l.Y), cx.leaf(l.d), cx.leaf(l.b)});
  L.XL = cx.leaf(p.XL);
  L.YL = cx.leaf(p.YL);
  L.bL = cx.leaf(p.bL);
  return L;
}

template <class Ctx>
std::vector<typename Ctx::H> lbdn_learnable_vars(const LbdnLeaves<Ctx>& L) {
  std::vector<typename Ctx::H> vs;
  for (const auto& l : L.layers) {
    vs.push_back(l.X);
    vs.push_back(l.Y);
    vs.push_back(l.d);
    vs.push_back(l.b);
  }
  vs.push_back(L.XL);
  vs.push_back(L.YL);
  vs.push_back(L.bL);
  return vs;
}

template <class H>
struct LbdnHandlesT {
  std::vector<H> pre, post, b;  // hidden layers: h -> post act(pre h + b)
  H WL, bL;                     // output layer
};

template <class Ctx>
LbdnHandlesT<typename Ctx::H> lbdn_to_explicit_ctx(Ctx& cx, const LbdnDirectParams& p,
                                                   const LbdnLeaves<Ctx>& L) {
  using H = typename Ctx::H;
  LbdnHandlesT<H> m;
  const double rt2 = std::sqrt(2.0);
  // The diagonal scalings Psi^{-1} and Psi are applied as broadcasts with
  // sqrt(2) folded into the small factor, so a layer's conversion records a
  // single dense q x q node beyond the Cayley chain.
  for (const auto& l : L.layers) {
    auto [At, Bt] = cayley_ctx(cx, l.X, l.Y);
    H psi = cx.exp_(l.d);
    H pre = cx.mul_col_broadcast(cx.transpose(Bt), cx.scale(cx.reciprocal(psi), rt2));
    H post = cx.mul_row_broadcast(At, cx.scale(cx.transpose(psi), rt2));
    m.pre.push_back(pre);
    m.post.push_back(post);
    m.b.push_back(l.b);
  }
  auto [AtL, BtL] = cayley_ctx(cx, L.XL, L.YL);
  (void)AtL;
  m.WL = cx.transpose(BtL);
  m.bL = L.bL;
  return m;
}

template <class Ctx>
typename Ctx::H lbdn_forward_ctx(Ctx& cx, const LbdnHandlesT<typename Ctx::H>& m, Act act,
                                 double gamma, typename Ctx::H x) {
  using H = typename Ctx::H;
  const double s = std::sqrt(gamma);
  H h = cx.scale(x, s);
  for (size_t k = 0; k < m.pre.size(); ++k) {
    H z = cx.add_col_broadcast(cx.matmul(m.pre[k], h), m.b[k]);
    h = cx.matmul(m.post[k], apply_act(cx, act, z));
  }
  return cx.add_col_broadcast(cx.scale(cx.matmul(m.WL, h), s), m.bL);
}

// ---------------------------------------------------------------------------
// Value-level model

struct ExplicitLbdn {
  int nu = 1, ny = 1;
  double gamma = 1.0;
  Act act = Act::Relu;
  std::vector<Mat> pre, post, b;
  Mat WL, bL;
};

inline ExplicitLbdn lbdn_to_explicit(const LbdnDirectParams& p) {
  ValueCtx cx;
  auto L = lbdn_make_leaves(cx, p);
  auto h = lbdn_to_explicit_ctx(cx, p, L);
  ExplicitLbdn m;
  m.nu = p.nu;
  m.ny = p.ny;
  m.gamma = p.gamma;
  m.act = p.act;
  m.pre = h.pre;
  m.post = h.post;
  m.b = h.b;
  m.WL = h.WL;
  m.bL = h.bL;
  for (const auto& w : m.pre)
    if (!all_finite(w)) throw Error("lbdn construction produced non-finite entries");
  for (const auto& w : m.post)
    if (!all_finite(w)) throw Error("lbdn construction produced non-finite entries");
  if (!all_finite(m.WL)) throw Error("lbdn construction produced non-finite entries");
  return m;
}

inline Mat lbdn_forward(const ExplicitLbdn& m, const Mat& x) {
  if (x.rows != m.nu) throw DimensionError("lbdn_forward: input rows != nu");
  ValueCtx cx;
  LbdnHandlesT<Mat> h;
  h.pre = m.pre;
  h.post = m.post;
  h.b = m.b;
  h.WL = m.WL;
  h.bL = m.bL;
  return lbdn_forward_ctx(cx, h, m.act, m.gamma, x);
}

// ---------------------------------------------------------------------------
// Serialization

inline void save_lbdn(const std::string& path, const LbdnDirectParams& p) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "lbdnv1 " << p.nu << ' ' << p.hidden.size();
  for (int h : p.hidden) os << ' ' << h;
  char tail[64];
  std::snprintf(tail, sizeof(tail), " %d %.17g", p.ny, p.gamma);
  os << tail << '\n';
  detail::write_record(os, "act", Mat::filled(1, 1, p.act == Act::Tanh ? 1.0 : 0.0));
  for (size_t k = 0; k < p.layers.size(); ++k) {
    std::string sk = std::to_string(k);
    detail::write_record(os, "X" + sk, p.layers[k].X);
    detail::write_record(os, "Y" + sk, p.layers[k].Y);
    detail::write_record(os, "d" + sk, p.layers[k].d);
    detail::write_record(os, "b" + sk, p.layers[k].b);
  }
  detail::write_record(os, "XL", p.XL);
  detail::write_record(os, "YL", p.YL);
  detail::write_record(os, "bL", p.bL);
  if (!os) throw DataError("failed writing '" + path + "'");
}

inline LbdnDirectParams load_lbdn(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::string magic;
  if (!(is >> magic)) throw FormatError("empty model file");
  if (magic != "lbdnv1") throw FormatError("expected lbdnv1 header, got '" + magic + "'");
  int nu, nh;
  if (!(is >> nu >> nh) || nh < 0) throw FormatError("bad lbdnv1 header");
  std::vector<int> hidden(nh);
  for (int& h : hidden)
    if (!(is >> h)) throw FormatError("bad lbdnv1 header");
  int ny;
  double gamma;
  if (!(is >> ny >> gamma)) throw FormatError("bad lbdnv1 header");
  auto recs = detail::read_records(is);

  LbdnDirectParams p;
  p.nu = nu;
  p.ny = ny;
  p.hidden = hidden;
  p.gamma = gamma;
  p.act = detail::take_scalar(recs, "act") != 0.0 ? Act::Tanh : Act::Relu;
  auto ws = p.widths();
  for (size_t k = 0; k + 2 < ws.size(); ++k) {
    std::string sk = std::to_string(k);
    LbdnLayerParams l;
    l.X = detail::take(recs, "X" + sk);
    l.Y = detail::take(recs, "Y" + sk);
    l.d = detail::take(recs, "d" + sk);
    l.b = detail::take(recs, "b" + sk);
    int pin = ws[k], q = ws[k + 1];
    if (l.X.rows != q || l.X.cols != q || l.Y.rows != pin || l.Y.cols != q || l.d.rows != q ||
        l.d.cols != 1 || l.b.rows != q || l.b.cols != 1)
      throw FormatError("lbdn layer " + sk + " has wrong shapes");
    p.layers.push_back(std::move(l));
  }
  p.XL = detail::take(recs, "XL");
  p.YL = detail::take(recs, "YL");
  p.bL = detail::take(recs, "bL");
  int plast = ws[ws.size() - 2];
  if (p.XL.rows != ny || p.XL.cols != ny || p.YL.rows != plast || p.YL.cols != ny ||
      p.bL.rows != ny || p.bL.cols != 1)
    throw FormatError("lbdn output layer has wrong shapes");
  if (!(p.gamma > 0.0)) throw SpecError("lbdn gamma must be positive");
  return p;
}

}  // namespace robnet
