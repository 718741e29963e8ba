#pragma once
// Recurrent equilibrium networks: recurrent models whose robustness
// properties (contraction at a chosen rate, incremental L2 gain, incremental
// passivity, or a general quadratic increment constraint) hold by
// construction for every value of the unconstrained parameters.
//
//   x+ = A x + B1 w + B2 u + bx
//   v  = C1 x + D11 w + D12 u + bv,   w = act(v)   (D11 strictly lower: the
//                                                   equilibrium layer is
//                                                   evaluated by forward
//                                                   substitution)
//   y  = C2 x + D21 w + D22 u + by
//
// The free parameters are mapped to the explicit matrices through a single
// positive definite matrix T = X'X + eps I (+ K' Xi^{-1} K for the
// input/output constrained variants); T being positive definite is exactly
// the dissipation inequality the verifier checks, so certification cannot
// fail for constructed models up to floating-point roundoff.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "robnet/context.hpp"
#include "robnet/linalg.hpp"
#include "robnet/rng.hpp"

namespace robnet {

enum class Act { Relu, Tanh };
enum class RenVariant { Contracting, Lipschitz, PassiveInput, PassiveOutput, General };
enum class RenInit { IdentityH, ScaledRandom };

inline const char* variant_name(RenVariant v) {
  switch (v) {
    case RenVariant::Contracting: return "contracting";
    case RenVariant::Lipschitz: return "lipschitz";
    case RenVariant::PassiveInput: return "passive-input";
    case RenVariant::PassiveOutput: return "passive-output";
    case RenVariant::General: return "general";
  }
  return "?";
}

struct RenDims {
  int nu = 1, nx = 1, nv = 1, ny = 1;
};

// Which quadratic increment bound the model certifies. Q acts on output
// increments, R on input increments, S couples them; the variants fix the
// standard triples:
//   Lipschitz(gamma):      Q = -I/gamma, S = 0, R = gamma I
//   PassiveInput(nu_p):    Q = 0,        S = I, R = -2 nu_p I   (nu == ny)
//   PassiveOutput(rho):    Q = -2 rho I, S = I, R = 0           (nu == ny)
//   General:               user triple, Q strictly negative definite and
//                          R - S Q^{-1} S' positive definite
struct IqcSpec {
  RenVariant kind = RenVariant::Contracting;
  double alpha = 1.0;  // contraction rate in (0, 1]
  double gamma = 1.0;
  bool gamma_learnable = false;
  double nu_passive = 0.0;
  double rho = 0.0;
  Mat Q, S, R;

  static IqcSpec contracting(double alpha = 1.0) {
    IqcSpec s;
    s.kind = RenVariant::Contracting;
    s.alpha = alpha;
    return s;
  }
  static IqcSpec lipschitz(double gamma, double alpha = 1.0, bool learnable = false) {
    IqcSpec s;
    s.kind = RenVariant::Lipschitz;
    s.alpha = alpha;
    s.gamma = gamma;
    s.gamma_learnable = learnable;
    return s;
  }
  static IqcSpec passive_input(double nu_p, double alpha = 1.0) {
    IqcSpec s;
    s.kind = RenVariant::PassiveInput;
    s.alpha = alpha;
    s.nu_passive = nu_p;
    return s;
  }
  static IqcSpec passive_output(double rho, double alpha = 1.0) {
    IqcSpec s;
    s.kind = RenVariant::PassiveOutput;
    s.alpha = alpha;
    s.rho = rho;
    return s;
  }
  static IqcSpec general(const Mat& Q, const Mat& S, const Mat& R, double alpha = 1.0) {
    IqcSpec s;
    s.kind = RenVariant::General;
    s.alpha = alpha;
    s.Q = Q;
    s.S = S;
    s.R = R;
    return s;
  }
};

struct SupplyTriple {
  Mat Q, S, R;
};

// Materialize the (Q, S, R) triple for verification and probes.
inline SupplyTriple supply_of(const IqcSpec& spec, const RenDims& d) {
  SupplyTriple t;
  switch (spec.kind) {
    case RenVariant::Contracting:
      t.Q = Mat(d.ny, d.ny);
      t.S = Mat(d.nu, d.ny);
      t.R = Mat(d.nu, d.nu);
      break;
    case RenVariant::Lipschitz:
      t.Q = scale(Mat::identity(d.ny), -1.0 / spec.gamma);
      t.S = Mat(d.nu, d.ny);
      t.R = scale(Mat::identity(d.nu), spec.gamma);
      break;
    case RenVariant::PassiveInput:
      t.Q = Mat(d.ny, d.ny);
      t.S = Mat::identity(d.nu);
      t.R = scale(Mat::identity(d.nu), -2.0 * spec.nu_passive);
      break;
    case RenVariant::PassiveOutput:
      t.Q = scale(Mat::identity(d.ny), -2.0 * spec.rho);
      t.S = Mat::identity(d.nu);
      t.R = Mat(d.nu, d.nu);
      break;
    case RenVariant::General:
      t.Q = spec.Q;
      t.S = spec.S;
      t.R = spec.R;
      break;
  }
  return t;
}

// Validates dimensions against the spec and returns the spec in normalized
// form (a merely negative semidefinite general Q is nudged to strictly
// negative definite so its inverse is well defined).
inline IqcSpec validate_ren_spec(const IqcSpec& spec_in, const RenDims& d) {
  IqcSpec spec = spec_in;
  if (d.nu < 1 || d.ny < 1 || d.nx < 0 || d.nv < 0)
    throw SpecError("ren dims must have nu,ny >= 1 and nx,nv >= 0");
  if (!(spec.alpha > 0.0) || spec.alpha > 1.0)
    throw SpecError("alpha must lie in (0, 1]");
  switch (spec.kind) {
    case RenVariant::Contracting:
      break;
    case RenVariant::Lipschitz:
      if (!(spec.gamma > 0.0)) throw SpecError("lipschitz bound gamma must be positive");
      break;
    case RenVariant::PassiveInput:
      if (d.nu != d.ny) throw SpecError("input passivity requires nu == ny");
      if (spec.nu_passive < 0.0) throw SpecError("input passivity index must be >= 0");
      break;
    case RenVariant::PassiveOutput:
      if (d.nu != d.ny) throw SpecError("output passivity requires nu == ny");
      if (!(spec.rho > 0.0)) throw SpecError("output passivity index must be > 0");
      break;
    case RenVariant::General: {
      if (spec.Q.rows != d.ny || spec.Q.cols != d.ny) throw SpecError("Q must be ny x ny");
      if (spec.S.rows != d.nu || spec.S.cols != d.ny) throw SpecError("S must be nu x ny");
      if (spec.R.rows != d.nu || spec.R.cols != d.nu) throw SpecError("R must be nu x nu");
      double qscale = norm_fro(spec.Q) + 1.0;
      if (max_abs(sub(spec.Q, transpose(spec.Q))) > 1e-12 * qscale)
        throw SpecError("Q must be symmetric");
      if (max_abs(sub(spec.R, transpose(spec.R))) > 1e-12 * (norm_fro(spec.R) + 1.0))
        throw SpecError("R must be symmetric");
      // lambda_min(-Q) via bisection; negative means Q has a positive part.
      double mq = pd_margin(neg(spec.Q), -qscale - 1.0, qscale + 1.0);
      if (mq < -1e-9 * qscale) throw SpecError("general Q must be negative semidefinite");
      if (mq < 1e-8 * qscale) {
        Mat shifted = spec.Q;
        for (int i = 0; i < shifted.rows; ++i) shifted(i, i) -= 1e-6;
        spec.Q = shifted;
      }
      Mat schur = sub(spec.R, matmul(spec.S, solve(spec.Q, transpose(spec.S))));
      double sscale = norm_fro(schur) + 1.0;
      double ms = pd_margin(schur, -sscale - 1.0, sscale + 1.0);
      if (ms <= 0.0) throw SpecError("general triple needs R - S Q^{-1} S' positive definite");
      break;
    }
  }
  return spec;
}

// Shapes of the Cayley block parameters feeding the feedthrough D22.
inline void d22_param_shapes(const IqcSpec& spec, const RenDims& d, int& x3r, int& x3c, int& y3r,
                             int& y3c, int& z3r, int& z3c) {
  x3r = x3c = y3r = y3c = z3r = z3c = 0;
  switch (spec.kind) {
    case RenVariant::Contracting:
      break;
    case RenVariant::PassiveInput:
      y3r = y3c = d.nu;
      z3r = z3c = d.nu;
      break;
    default: {
      int q = std::min(d.nu, d.ny);
      x3r = x3c = q;
      y3r = y3c = q;
      z3r = std::max(d.nu, d.ny) - q;
      z3c = q;
      break;
    }
  }
}

struct RenDirectParams {
  RenDims dims;
  IqcSpec spec;
  Act act = Act::Relu;
  double eps = 1e-6;
  bool output_map = true;  // false: y = x (C2 = I, D21 = 0, D22 = 0, by = 0); needs ny == nx
  Mat X;                   // (2nx+nv) x (2nx+nv)
  Mat Y1;                  // nx x nx
  Mat B2f, D12f;           // nx x nu, nv x nu
  Mat C2, D21;             // ny x nx, ny x nv
  Mat X3, Y3, Z3;          // feedthrough parameters (variant-dependent shapes)
  Mat bx, bv, by;          // biases
  Mat log_gamma;           // 1x1, used iff Lipschitz with learnable bound
  Mat d22_fixed;           // Contracting only: optional fixed feedthrough

};

// Trainable parameter pointers, in the same order that ren_learnable_vars
// lists the corresponding tape leaves.
inline std::vector<Mat*> ren_learnable_ptrs(RenDirectParams& p) {
  std::vector<Mat*> ps{&p.X, &p.Y1, &p.B2f, &p.D12f};
  if (p.output_map) {
    ps.push_back(&p.C2);
    ps.push_back(&p.D21);
  }
  ps.push_back(&p.X3);
  ps.push_back(&p.Y3);
  ps.push_back(&p.Z3);
  ps.push_back(&p.bx);
  ps.push_back(&p.bv);
  if (p.output_map) ps.push_back(&p.by);
  if (p.spec.kind == RenVariant::Lipschitz && p.spec.gamma_learnable) ps.push_back(&p.log_gamma);
  return ps;
}

inline RenDirectParams init_ren(const RenDims& dims, const IqcSpec& spec_in, Act act,
                                RenInit style, uint64_t seed, double eps = 1e-6,
                                bool output_map = true) {
  RenDirectParams p;
  p.dims = dims;
  p.spec = validate_ren_spec(spec_in, dims);
  p.act = act;
  p.eps = eps;
  p.output_map = output_map;
  if (!output_map && dims.ny != dims.nx)
    throw SpecError("identity output map requires ny == nx");

  const int n = 2 * dims.nx + dims.nv;
  Rng rng(sub_seed(seed, kSeedRenInit));
  auto draw = [&](int r, int c, double stddev) { return rng.normal_mat(r, c, stddev); };
  auto noise = [&](int r, int c) {
    double fan_in = c > 0 ? static_cast<double>(c) : 1.0;
    return draw(r, c, 0.01 / std::sqrt(fan_in));
  };

  int x3r, x3c, y3r, y3c, z3r, z3c;
  d22_param_shapes(p.spec, dims, x3r, x3c, y3r, y3c, z3r, z3c);

  if (style == RenInit::IdentityH) {
    p.X = Mat::identity(n);
    p.Y1 = noise(dims.nx, dims.nx);
    p.B2f = noise(dims.nx, dims.nu);
    p.D12f = noise(dims.nv, dims.nu);
    p.C2 = noise(dims.ny, dims.nx);
    p.D21 = noise(dims.ny, dims.nv);
    p.X3 = noise(x3r, x3c);
    p.Y3 = noise(y3r, y3c);
    p.Z3 = noise(z3r, z3c);
  } else {
    double stddev = 1.0 / std::sqrt(static_cast<double>(std::max(n, 1)));
    p.X = draw(n, n, stddev);
    p.Y1 = draw(dims.nx, dims.nx, stddev);
    p.B2f = draw(dims.nx, dims.nu, stddev);
    p.D12f = draw(dims.nv, dims.nu, stddev);
    p.C2 = draw(dims.ny, dims.nx, stddev);
    p.D21 = draw(dims.ny, dims.nv, stddev);
    p.X3 = draw(x3r, x3c, stddev);
    p.Y3 = draw(y3r, y3c, stddev);
    p.Z3 = draw(z3r, z3c, stddev);
  }
  p.bx = Mat(dims.nx, 1);
  p.bv = Mat(dims.nv, 1);
  p.by = Mat(dims.ny, 1);
  p.log_gamma = Mat::filled(1, 1, std::log(std::max(p.spec.gamma, 1e-300)));
  if (!output_map) {
    p.C2 = Mat::identity(dims.ny);
    p.D21 = Mat(dims.ny, dims.nv);
    p.by = Mat(dims.ny, 1);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Direct-to-explicit construction (works on values or on a tape)

template <class H>
struct RenHandlesT {
  H A, B1, B2, C1, D11, D12, C2, D21, D22, bx, bv, by;
  H P, lambda;  // certificate: contraction metric and equilibrium-layer scaling
};

template <class Ctx>
struct RenLeaves {
  using H = typename Ctx::H;
  H X, Y1, B2f, D12f, C2, D21, X3, Y3, Z3, bx, bv, by, log_gamma;
};

template <class Ctx>
RenLeaves<Ctx> ren_make_leaves(Ctx& cx, const RenDirectParams& p) {
  RenLeaves<Ctx> L;
  L.X = cx.leaf(p.X);
  L.Y1 = cx.leaf(p.Y1);
  L.B2f = cx.leaf(p.B2f);
  L.D12f = cx.leaf(p.D12f);
  L.C2 = p.output_map ? cx.leaf(p.C2) : cx.constant(p.C2);
  L.D21 = p.output_map ? cx.leaf(p.D21) : cx.constant(p.D21);
  L.X3 = cx.leaf(p.X3);
  L.Y3 = cx.leaf(p.Y3);
  L.Z3 = cx.leaf(p.Z3);
  L.bx = cx.leaf(p.bx);
  L.bv = cx.leaf(p.bv);
  L.by = p.output_map ? cx.leaf(p.by) : cx.constant(p.by);
  bool lg = p.spec.kind == RenVariant::Lipschitz && p.spec.gamma_learnable;
  L.log_gamma = lg ? cx.leaf(p.log_gamma) : cx.constant(p.log_gamma);
  return L;
}

// Tape leaves in the same order as ren_learnable_ptrs.
template <class Ctx>
std::vector<typename Ctx::H> ren_learnable_vars(const RenDirectParams& p, const RenLeaves<Ctx>& L) {
  std::vector<typename Ctx::H> vs{L.X, L.Y1, L.B2f, L.D12f};
  if (p.output_map) {
    vs.push_back(L.C2);
    vs.push_back(L.D21);
  }
  vs.push_back(L.X3);
  vs.push_back(L.Y3);
  vs.push_back(L.Z3);
  vs.push_back(L.bx);
  vs.push_back(L.bv);
  if (p.output_map) vs.push_back(L.by);
  if (p.spec.kind == RenVariant::Lipschitz && p.spec.gamma_learnable) vs.push_back(L.log_gamma);
  return vs;
}

// Cayley-style strict contraction: returns N (ny x nu) with largest singular
// value strictly below one for any parameter values.
template <class Ctx>
typename Ctx::H ren_feedthrough_contraction(Ctx& cx, const RenLeaves<Ctx>& L, const RenDims& d,
                                            double eps) {
  const int q = std::min(d.nu, d.ny);
  auto M = cx.add(cx.matmul(cx.transpose(L.X3), L.X3),
                  cx.add(cx.sub(L.Y3, cx.transpose(L.Y3)),
                         cx.add(cx.matmul(cx.transpose(L.Z3), L.Z3),
                                cx.constant(scale(Mat::identity(q), eps)))));
  auto IplusM = cx.add(cx.constant(Mat::identity(q)), M);
  auto W = cx.solve(IplusM, cx.constant(Mat::identity(q)));
  auto top = cx.sub(cx.scale(W, 2.0), cx.constant(Mat::identity(q)));
  auto tall = (std::max(d.nu, d.ny) > q) ? cx.vcat(top, cx.scale(cx.matmul(L.Z3, W), -2.0)) : top;
  return d.ny >= d.nu ? tall : cx.transpose(tall);
}

template <class Ctx>
RenHandlesT<typename Ctx::H> ren_to_explicit_ctx(Ctx& cx, const RenDirectParams& p,
                                                 const RenLeaves<Ctx>& L) {
  using H = typename Ctx::H;
  const RenDims& d = p.dims;
  const int nx = d.nx, nv = d.nv, nu = d.nu, ny = d.ny;
  const int n = 2 * nx + nv;
  const double alpha2_inv = 1.0 / (p.spec.alpha * p.spec.alpha);

  auto eye = [&](int m) { return cx.constant(Mat::identity(m)); };
  auto zeros = [&](int r, int c) { return cx.constant(Mat(r, c)); };

  // T = X'X + eps I (+ K' Xi^{-1} K for the constrained variants)
  H T = cx.add(cx.matmul(cx.transpose(L.X), L.X), cx.constant(scale(Mat::identity(n), p.eps)));

  H D22;
  bool have_d22 = false;
  if (p.spec.kind == RenVariant::Contracting) {
    D22 = p.d22_fixed.empty() ? zeros(ny, nu) : cx.constant(p.d22_fixed);
    have_d22 = true;
  } else {
    H K, Xi;
    if (p.spec.kind == RenVariant::PassiveInput) {
      // D22 = nu_p I + eps I + Z3'Z3 + Y3 - Y3', so Xi = R + D22 + D22'
      // collapses to 2(eps I + Z3'Z3), positive definite for any parameters.
      double nu_p = p.spec.nu_passive;
      D22 = cx.add(cx.constant(scale(Mat::identity(nu), nu_p + p.eps)),
                   cx.add(cx.matmul(cx.transpose(L.Z3), L.Z3), cx.sub(L.Y3, cx.transpose(L.Y3))));
      have_d22 = true;
      K = cx.hcat(cx.hcat(L.C2, cx.sub(L.D21, cx.transpose(L.D12f))), cx.transpose(L.B2f));
      Xi = cx.add(cx.constant(scale(Mat::identity(nu), -2.0 * nu_p)),
                  cx.add(D22, cx.transpose(D22)));
    } else {
      H N = ren_feedthrough_contraction(cx, L, d, p.eps);
      H Ky, Ku, Xi12, Xi22;
      if (p.spec.kind == RenVariant::Lipschitz) {
        // L_Q = I/sqrt(gamma), L_R = sqrt(gamma) I; gamma may live on the tape.
        H g = cx.exp_(L.log_gamma);
        H sg_inv = cx.exp_(cx.scale(L.log_gamma, -0.5));
        D22 = cx.smul(g, N);
        have_d22 = true;
        Ky = cx.hcat(cx.hcat(cx.smul(sg_inv, L.C2), cx.smul(sg_inv, L.D21)), zeros(ny, nx));
        Ku = cx.hcat(cx.hcat(zeros(nu, nx), cx.neg(cx.transpose(L.D12f))), cx.transpose(L.B2f));
        Xi12 = cx.smul(sg_inv, D22);
        Xi22 = cx.smul(g, eye(nu));
      } else if (p.spec.kind == RenVariant::PassiveOutput) {
        const double r2 = std::sqrt(2.0 * p.spec.rho);
        D22 = cx.scale(cx.add(eye(ny), N), 1.0 / (2.0 * p.spec.rho));
        have_d22 = true;
        Ky = cx.scale(cx.hcat(cx.hcat(L.C2, L.D21), zeros(ny, nx)), r2);
        Ku = cx.hcat(cx.hcat(L.C2, cx.sub(L.D21, cx.transpose(L.D12f))), cx.transpose(L.B2f));
        Xi12 = cx.scale(D22, r2);
        Xi22 = cx.add(D22, cx.transpose(D22));
      } else {  // General: the factors of the fixed triple stay off the tape.
        SupplyTriple st = supply_of(p.spec, d);
        Mat LQ = transpose(cholesky(neg(st.Q)));                 // L_Q' L_Q = -Q
        Mat schur = sub(st.R, matmul(st.S, solve(st.Q, transpose(st.S))));
        Mat LR = transpose(cholesky(schur));                     // L_R' L_R = R - S Q^{-1} S'
        Mat QiST = neg(solve(st.Q, transpose(st.S)));            // -Q^{-1} S'
        H cLQ = cx.constant(LQ);
        D22 = cx.add(cx.constant(QiST), cx.matmul(cx.solve(cLQ, N), cx.constant(LR)));
        have_d22 = true;
        H cS = cx.constant(st.S);
        Ky = cx.hcat(cx.hcat(cx.matmul(cLQ, L.C2), cx.matmul(cLQ, L.D21)), zeros(ny, nx));
        Ku = cx.hcat(cx.hcat(cx.matmul(cS, L.C2),
                             cx.sub(cx.matmul(cS, L.D21), cx.transpose(L.D12f))),
                     cx.transpose(L.B2f));
        H SD22 = cx.matmul(cS, D22);
        Xi12 = cx.matmul(cLQ, D22);
        Xi22 = cx.add(cx.constant(st.R), cx.add(SD22, cx.transpose(SD22)));
      }
      K = cx.vcat(Ky, Ku);
      Xi = cx.vcat(cx.hcat(eye(ny), Xi12), cx.hcat(cx.transpose(Xi12), Xi22));
    }
    T = cx.add(T, cx.matmul(cx.transpose(K), cx.solve(Xi, K)));
  }
  (void)have_d22;

  H T11 = cx.slice(T, 0, nx, 0, nx);
  H T21 = cx.slice(T, nx, nx + nv, 0, nx);
  H T22 = cx.slice(T, nx, nx + nv, nx, nx + nv);
  H T31 = cx.slice(T, nx + nv, n, 0, nx);
  H T32 = cx.slice(T, nx + nv, n, nx, nx + nv);
  H T33 = cx.slice(T, nx + nv, n, nx + nv, n);

  RenHandlesT<H> m;
  m.P = cx.scale(T11, alpha2_inv);
  m.lambda = cx.scale(cx.diag_extract(T22), 0.5);
  H C1i = cx.neg(T21);
  H D11i = cx.neg(cx.tril_strict(T22));
  H E = cx.scale(cx.add(cx.add(T33, cx.scale(T11, alpha2_inv)), cx.sub(L.Y1, cx.transpose(L.Y1))),
                 0.5);

  m.A = cx.solve(E, T31);
  m.B1 = cx.solve(E, T32);
  m.B2 = cx.solve(E, L.B2f);
  m.bx = cx.solve(E, L.bx);
  H linv = cx.diag_build(cx.reciprocal(m.lambda));
  m.C1 = cx.matmul(linv, C1i);
  m.D11 = cx.matmul(linv, D11i);
  m.D12 = cx.matmul(linv, L.D12f);
  m.bv = cx.matmul(linv, L.bv);
  m.C2 = L.C2;
  m.D21 = L.D21;
  m.D22 = D22;
  m.by = L.by;
  return m;
}

// ---------------------------------------------------------------------------
// Value-level explicit model and certificate

struct ExplicitRen {
  RenDims dims;
  IqcSpec spec;  // gamma materialized at its current value when learnable
  Act act = Act::Relu;
  Mat A, B1, B2, C1, D11, D12, C2, D21, D22, bx, bv, by;
};

struct Certificate {
  Mat P;       // nx x nx contraction metric
  Mat lambda;  // nv x 1 positive scalings
};

inline std::pair<ExplicitRen, Certificate> ren_to_explicit(const RenDirectParams& p) {
  ValueCtx cx;
  RenLeaves<ValueCtx> L = ren_make_leaves(cx, p);
  RenHandlesT<Mat> h = ren_to_explicit_ctx(cx, p, L);
  ExplicitRen m;
  m.dims = p.dims;
  m.spec = p.spec;
  if (p.spec.kind == RenVariant::Lipschitz && p.spec.gamma_learnable)
    m.spec.gamma = std::exp(p.log_gamma(0, 0));
  m.act = p.act;
  m.A = h.A;
  m.B1 = h.B1;
  m.B2 = h.B2;
  m.C1 = h.C1;
  m.D11 = h.D11;
  m.D12 = h.D12;
  m.C2 = h.C2;
  m.D21 = h.D21;
  m.D22 = h.D22;
  m.bx = h.bx;
  m.bv = h.bv;
  m.by = h.by;
  for (const Mat* w : {&m.A, &m.B1, &m.B2, &m.C1, &m.D11, &m.D12, &m.C2, &m.D21, &m.D22, &m.bx,
                       &m.bv, &m.by})
    if (!all_finite(*w)) throw Error("ren construction produced non-finite entries");
  Certificate c;
  c.P = h.P;
  c.lambda = h.lambda;
  return {m, c};
}

// ---------------------------------------------------------------------------
// Stepping

template <class Ctx>
typename Ctx::H apply_act(Ctx& cx, Act act, typename Ctx::H v) {
  return act == Act::Relu ? cx.relu(v) : cx.tanh_(v);
}

template <class Ctx>
struct RenStepOutT {
  typename Ctx::H xnext, y;
};

// One step of the explicit model. The equilibrium layer is acyclic (D11
// strictly lower triangular), so w is computed row by row.
template <class Ctx>
RenStepOutT<Ctx> ren_step_ctx(Ctx& cx, const RenHandlesT<typename Ctx::H>& m, Act act,
                              const RenDims& d, typename Ctx::H x, typename Ctx::H u) {
  using H = typename Ctx::H;
  const int nv = d.nv;
  const int batch = cx.value(u).cols;
  if (cx.value(x).cols != batch) throw DimensionError("ren_step: x/u batch mismatch");
  if (cx.value(x).rows != d.nx || cx.value(u).rows != d.nu)
    throw DimensionError("ren_step: x/u row mismatch");

  H w;  // nv x batch once assembled
  bool have_w = nv > 0;
  if (have_w) {
    H vb = cx.add_col_broadcast(cx.add(cx.matmul(m.C1, x), cx.matmul(m.D12, u)), m.bv);
    H prefix;
    for (int i = 0; i < nv; ++i) {
      H vi = cx.slice(vb, i, i + 1, 0, batch);
      if (i > 0) {
        H row = cx.slice(m.D11, i, i + 1, 0, i);
        vi = cx.add(vi, cx.matmul(row, prefix));
      }
      H wi = apply_act(cx, act, vi);
      prefix = (i == 0) ? wi : cx.vcat(prefix, wi);
    }
    w = prefix;
  }

  RenStepOutT<Ctx> out;
  H xlin = cx.add(cx.matmul(m.A, x), cx.matmul(m.B2, u));
  if (have_w) xlin = cx.add(xlin, cx.matmul(m.B1, w));
  out.xnext = cx.add_col_broadcast(xlin, m.bx);
  H ylin = cx.add(cx.matmul(m.C2, x), cx.matmul(m.D22, u));
  if (have_w) ylin = cx.add(ylin, cx.matmul(m.D21, w));
  out.y = cx.add_col_broadcast(ylin, m.by);
  return out;
}

inline RenHandlesT<Mat> ren_handles_of(const ExplicitRen& m) {
  RenHandlesT<Mat> h;
  h.A = m.A;
  h.B1 = m.B1;
  h.B2 = m.B2;
  h.C1 = m.C1;
  h.D11 = m.D11;
  h.D12 = m.D12;
  h.C2 = m.C2;
  h.D21 = m.D21;
  h.D22 = m.D22;
  h.bx = m.bx;
  h.bv = m.bv;
  h.by = m.by;
  return h;
}

struct RenStepOut {
  Mat xnext, y;
};

inline RenStepOut ren_step(const ExplicitRen& m, const Mat& x, const Mat& u) {
  ValueCtx cx;
  auto h = ren_handles_of(m);
  auto out = ren_step_ctx(cx, h, m.act, m.dims, x, u);
  return RenStepOut{out.xnext, out.y};
}

struct RenTrajectory {
  std::vector<Mat> xs;  // us.size() + 1 states, starting at x0
  std::vector<Mat> ys;  // us.size() outputs
};

inline RenTrajectory ren_simulate(const ExplicitRen& m, const Mat& x0, const std::vector<Mat>& us) {
  ValueCtx cx;
  auto h = ren_handles_of(m);
  RenTrajectory tr;
  tr.xs.push_back(x0);
  Mat x = x0;
  for (const Mat& u : us) {
    auto out = ren_step_ctx(cx, h, m.act, m.dims, x, u);
    tr.ys.push_back(out.y);
    x = out.xnext;
    tr.xs.push_back(x);
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Serialization: flat text, one record per field, 17 significant digits.

namespace detail {

inline void write_record(std::ostream& os, const std::string& name, const Mat& m) {
  os << name << ' ' << m.rows << ' ' << m.cols << '\n';
  char buf[64];
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      if (j) os << ' ';
      os << buf;
    }
    os << '\n';
  }
}

inline std::map<std::string, Mat> read_records(std::istream& is) {
  std::map<std::string, Mat> out;
  std::string name;
  while (is >> name) {
    int r, c;
    if (!(is >> r >> c)) throw FormatError("record '" + name + "': missing shape");
    if (r < 0 || c < 0) throw FormatError("record '" + name + "': negative shape");
    Mat m(r, c);
    for (size_t i = 0; i < m.size(); ++i)
      if (!(is >> m.a[i])) throw FormatError("record '" + name + "': truncated data");
    out[name] = std::move(m);
  }
  return out;
}

inline Mat take(std::map<std::string, Mat>& recs, const std::string& name) {
  auto it = recs.find(name);
  if (it == recs.end()) throw FormatError("missing record '" + name + "'");
  Mat m = std::move(it->second);
  recs.erase(it);
  return m;
}

inline double take_scalar(std::map<std::string, Mat>& recs, const std::string& name) {
  Mat m = take(recs, name);
  if (m.rows != 1 || m.cols != 1) throw FormatError("record '" + name + "' must be 1x1");
  return m(0, 0);
}

}  // namespace detail

inline void save_ren(const std::string& path, const RenDirectParams& p) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  char head[160];
  std::snprintf(head, sizeof(head), "renv1 %s %d %d %d %d %.17g", variant_name(p.spec.kind),
                p.dims.nu, p.dims.nx, p.dims.nv, p.dims.ny, p.spec.alpha);
  os << head << '\n';
  detail::write_record(os, "act", Mat::filled(1, 1, p.act == Act::Tanh ? 1.0 : 0.0));
  detail::write_record(os, "eps", Mat::filled(1, 1, p.eps));
  detail::write_record(os, "output_map", Mat::filled(1, 1, p.output_map ? 1.0 : 0.0));
  if (p.spec.kind == RenVariant::Lipschitz) {
    detail::write_record(os, "gamma", Mat::filled(1, 1, p.spec.gamma));
    detail::write_record(os, "gamma_learnable", Mat::filled(1, 1, p.spec.gamma_learnable ? 1.0 : 0.0));
    detail::write_record(os, "log_gamma", p.log_gamma);
  }
  if (p.spec.kind == RenVariant::PassiveInput)
    detail::write_record(os, "nu_passive", Mat::filled(1, 1, p.spec.nu_passive));
  if (p.spec.kind == RenVariant::PassiveOutput)
    detail::write_record(os, "rho", Mat::filled(1, 1, p.spec.rho));
  if (p.spec.kind == RenVariant::General) {
    detail::write_record(os, "Q", p.spec.Q);
    detail::write_record(os, "S", p.spec.S);
    detail::write_record(os, "R", p.spec.R);
  }
  detail::write_record(os, "X", p.X);
  detail::write_record(os, "Y1", p.Y1);
  detail::write_record(os, "B2f", p.B2f);
  detail::write_record(os, "D12f", p.D12f);
  detail::write_record(os, "C2", p.C2);
  detail::write_record(os, "D21", p.D21);
  detail::write_record(os, "X3", p.X3);
  detail::write_record(os, "Y3", p.Y3);
  detail::write_record(os, "Z3", p.Z3);
  detail::write_record(os, "bx", p.bx);
  detail::write_record(os, "bv", p.bv);
  detail::write_record(os, "by", p.by);
  if (p.spec.kind == RenVariant::Contracting && !p.d22_fixed.empty())
    detail::write_record(os, "d22_fixed", p.d22_fixed);
  if (!os) throw DataError("failed writing '" + path + "'");
}

inline RenDirectParams load_ren(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::string magic, variant;
  RenDims d;
  double alpha;
  if (!(is >> magic)) throw FormatError("empty model file");
  if (magic != "renv1") throw FormatError("expected renv1 header, got '" + magic + "'");
  if (!(is >> variant >> d.nu >> d.nx >> d.nv >> d.ny >> alpha))
    throw FormatError("bad renv1 header");
  auto recs = detail::read_records(is);

  IqcSpec spec;
  if (variant == "contracting")
    spec = IqcSpec::contracting(alpha);
  else if (variant == "lipschitz")
    spec = IqcSpec::lipschitz(detail::take_scalar(recs, "gamma"), alpha);
  else if (variant == "passive-input")
    spec = IqcSpec::passive_input(detail::take_scalar(recs, "nu_passive"), alpha);
  else if (variant == "passive-output")
    spec = IqcSpec::passive_output(detail::take_scalar(recs, "rho"), alpha);
  else if (variant == "general")
    spec = IqcSpec::general(detail::take(recs, "Q"), detail::take(recs, "S"),
                            detail::take(recs, "R"), alpha);
  else
    throw FormatError("unknown ren variant '" + variant + "'");

  RenDirectParams p;
  p.dims = d;
  Mat log_gamma;
  if (variant == "lipschitz") {
    spec.gamma_learnable = detail::take_scalar(recs, "gamma_learnable") != 0.0;
    log_gamma = detail::take(recs, "log_gamma");
  }
  p.act = detail::take_scalar(recs, "act") != 0.0 ? Act::Tanh : Act::Relu;
  p.eps = detail::take_scalar(recs, "eps");
  p.output_map = detail::take_scalar(recs, "output_map") != 0.0;
  p.spec = validate_ren_spec(spec, d);
  p.X = detail::take(recs, "X");
  p.Y1 = detail::take(recs, "Y1");
  p.B2f = detail::take(recs, "B2f");
  p.D12f = detail::take(recs, "D12f");
  p.C2 = detail::take(recs, "C2");
  p.D21 = detail::take(recs, "D21");
  p.X3 = detail::take(recs, "X3");
  p.Y3 = detail::take(recs, "Y3");
  p.Z3 = detail::take(recs, "Z3");
  p.bx = detail::take(recs, "bx");
  p.bv = detail::take(recs, "bv");
  p.by = detail::take(recs, "by");
  if (recs.count("d22_fixed")) p.d22_fixed = detail::take(recs, "d22_fixed");
  p.log_gamma = log_gamma.empty() ? Mat::filled(1, 1, std::log(std::max(p.spec.gamma, 1e-300)))
                                  : log_gamma;

  const int n = 2 * d.nx + d.nv;
  auto expect = [&](const Mat& m, int r, int c, const char* name) {
    if (m.rows != r || m.cols != c)
      throw FormatError(std::string("record '") + name + "' has wrong shape");
  };
  expect(p.X, n, n, "X");
  expect(p.Y1, d.nx, d.nx, "Y1");
  expect(p.B2f, d.nx, d.nu, "B2f");
  expect(p.D12f, d.nv, d.nu, "D12f");
  expect(p.C2, d.ny, d.nx, "C2");
  expect(p.D21, d.ny, d.nv, "D21");
  int x3r, x3c, y3r, y3c, z3r, z3c;
  d22_param_shapes(p.spec, d, x3r, x3c, y3r, y3c, z3r, z3c);
  expect(p.X3, x3r, x3c, "X3");
  expect(p.Y3, y3r, y3c, "Y3");
  expect(p.Z3, z3r, z3c, "Z3");
  expect(p.bx, d.nx, 1, "bx");
  expect(p.bv, d.nv, 1, "bv");
  expect(p.by, d.ny, 1, "by");
  return p;
}

}  // namespace robnet
