#pragma once
// Independent verification of the constructed guarantees.
//
// verify_ren re-derives the incremental dissipation inequality directly from
// the explicit matrices and the certificate (P, lambda): with increment
// coordinates eta = (dx, dw, du),
//
//   M = Abar' P Abar - alpha^2 Ex' P Ex + Sym(Ew' Lam Cv) - 2 Ew' Lam Ew
//       - Cy' Q Cy - Sym(Eu' S Cy) - Eu' R Eu            must be <= 0,
//
// which combines the storage decrease, the slope-[0,1] sector for the
// activations, and the chosen quadratic supply. The check shares nothing
// with the construction: it sees only the explicit model, so it would catch
// an incorrect parameter mapping.
//
// The trajectory probes (contraction_probe, iqc_accumulate, passivity_probe,
// empirical_lipschitz) test the same properties on simulated data.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "robnet/autodiff.hpp"
#include "robnet/context.hpp"
#include "robnet/lbdn.hpp"
#include "robnet/linalg.hpp"
#include "robnet/ren.hpp"
#include "robnet/rng.hpp"

namespace robnet {

struct LmiReport {
  bool passed = false;
  bool contraction_only = false;
  double lmi_margin = 0.0;   // -lambda_max(M); nonnegative (up to tol) when it holds
  double tolerance = 0.0;    // 1e-8 * (1 + ||M||_F)
  double matrix_norm = 0.0;  // ||M||_F
  double min_p_eig = 0.0;    // lambda_min(P)
  double min_lambda = 0.0;   // min_i lambda_i (1.0 when nv == 0)
};

// Quadratic form M of the dissipation inequality over eta = (dx, dw[, du]).
inline Mat build_iqc_matrix(const ExplicitRen& m, const Certificate& cert,
                            bool contraction_only) {
  const RenDims& d = m.dims;
  const int neta = d.nx + d.nv + (contraction_only ? 0 : d.nu);
  auto embed = [&](const Mat& blk, int col0) {
    Mat e(blk.rows, neta);
    for (int i = 0; i < blk.rows; ++i)
      for (int j = 0; j < blk.cols; ++j) e(i, col0 + j) = blk(i, j);
    return e;
  };
  Mat Abar = embed(hcat(m.A, m.B1), 0);
  Mat Cv = embed(hcat(m.C1, m.D11), 0);
  Mat Ex = embed(Mat::identity(d.nx), 0);
  Mat Ew = embed(Mat::identity(d.nv), d.nx);
  if (!contraction_only) {
    Abar = add(Abar, embed(m.B2, d.nx + d.nv));
    Cv = add(Cv, embed(m.D12, d.nx + d.nv));
  }
  Mat Lam = diag_build(cert.lambda);
  const double a2 = m.spec.alpha * m.spec.alpha;

  Mat M = matmul(transpose(Abar), matmul(cert.P, Abar));
  M = sub(M, scale(matmul(transpose(Ex), matmul(cert.P, Ex)), a2));
  Mat WLC = matmul(transpose(Ew), matmul(Lam, Cv));
  M = add(M, add(WLC, transpose(WLC)));
  M = sub(M, scale(matmul(transpose(Ew), matmul(Lam, Ew)), 2.0));
  if (!contraction_only) {
    SupplyTriple st = supply_of(m.spec, d);
    Mat Cy = embed(hcat(hcat(m.C2, m.D21), m.D22), 0);
    Mat Eu = embed(Mat::identity(d.nu), d.nx + d.nv);
    M = sub(M, matmul(transpose(Cy), matmul(st.Q, Cy)));
    Mat USC = matmul(transpose(Eu), matmul(st.S, Cy));
    M = sub(M, add(USC, transpose(USC)));
    M = sub(M, matmul(transpose(Eu), matmul(st.R, Eu)));
  }
  return M;
}

inline LmiReport verify_ren(const ExplicitRen& m, const Certificate& cert,
                            bool contraction_only = false) {
  LmiReport rep;
  // A model with no input/output constraint only certifies contraction.
  rep.contraction_only = contraction_only || m.spec.kind == RenVariant::Contracting;

  const RenDims& d = m.dims;
  if (cert.P.rows != d.nx || cert.P.cols != d.nx)
    throw DimensionError("verify_ren: P must be nx x nx");
  if (cert.lambda.rows != d.nv || cert.lambda.cols != (d.nv > 0 ? 1 : cert.lambda.cols))
    throw DimensionError("verify_ren: lambda must be nv x 1");

  double pscale = norm_fro(cert.P) + 1.0;
  rep.min_p_eig = d.nx > 0 ? pd_margin(cert.P, -pscale, pscale) : 1.0;
  rep.min_lambda = 1.0;
  for (int i = 0; i < cert.lambda.rows; ++i)
    rep.min_lambda = std::min(rep.min_lambda, cert.lambda(i, 0));

  Mat M = build_iqc_matrix(m, cert, rep.contraction_only);
  rep.matrix_norm = norm_fro(M);
  rep.tolerance = 1e-8 * (1.0 + rep.matrix_norm);
  if (M.rows == 0) {
    rep.lmi_margin = 0.0;
    rep.passed = rep.min_p_eig > 0.0;
    return rep;
  }
  double bound = rep.matrix_norm + 1.0;
  // lambda_max(M) = -lambda_min(-M)
  double lam_max = -pd_margin(neg(M), -bound, bound);
  rep.lmi_margin = -lam_max;
  rep.passed = rep.min_p_eig > 0.0 && rep.min_lambda > 0.0 && lam_max <= rep.tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Spectral norm of an explicit matrix by adjoint power iteration.

inline double spectral_norm(const Mat& W, int iters = 500, uint64_t seed = 12345) {
  if (W.rows == 0 || W.cols == 0) return 0.0;
  Rng rng(seed);
  Mat v = rng.normal_mat(W.cols, 1, 1.0);
  double nv = norm_fro(v);
  if (nv == 0.0) return 0.0;
  v = scale(v, 1.0 / nv);
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    Mat z = matmul(W, v);
    sigma = norm_fro(z);
    Mat v2 = matmul(transpose(W), z);
    double n2 = norm_fro(v2);
    if (n2 < 1e-300) break;
    v = scale(v2, 1.0 / n2);
  }
  return sigma;
}

// ---------------------------------------------------------------------------
// Differentiable input-output maps for probing

struct DiffMap {
  int in_dim = 0, out_dim = 0;
  std::function<Mat(const Mat&)> f;                // column vector -> column vector
  std::function<Mat(const Mat&, const Mat&)> vjp;  // (x, w) -> J(x)' w
};

inline DiffMap diffmap_of_lbdn(const ExplicitLbdn& model) {
  auto mp = std::make_shared<ExplicitLbdn>(model);
  DiffMap map;
  map.in_dim = mp->nu;
  map.out_dim = mp->ny;
  map.f = [mp](const Mat& x) { return lbdn_forward(*mp, x); };
  map.vjp = [mp](const Mat& x, const Mat& w) {
    Tape tape;
    TapeCtx cx{tape};
    LbdnHandlesT<Var> h;
    for (const Mat& pm : mp->pre) h.pre.push_back(cx.constant(pm));
    for (const Mat& pm : mp->post) h.post.push_back(cx.constant(pm));
    for (const Mat& pm : mp->b) h.b.push_back(cx.constant(pm));
    h.WL = cx.constant(mp->WL);
    h.bL = cx.constant(mp->bL);
    Var xv = cx.leaf(x);
    Var y = lbdn_forward_ctx(cx, h, mp->act, mp->gamma, xv);
    Var root = cx.matmul(cx.constant(transpose(w)), y);
    tape.backward(root);
    return tape.grad(xv);
  };
  return map;
}

// The unrolled map (u_0, ..., u_{T-1}) -> (y_0, ..., y_{T-1}) from x0 = 0,
// with inputs and outputs stacked into single columns. An incremental L2
// bound on the model is exactly a Lipschitz bound on this map.
inline DiffMap diffmap_of_ren_unrolled(const ExplicitRen& model, int T) {
  auto mp = std::make_shared<ExplicitRen>(model);
  DiffMap map;
  map.in_dim = model.dims.nu * T;
  map.out_dim = model.dims.ny * T;
  map.f = [mp, T](const Mat& ustack) {
    std::vector<Mat> us;
    for (int t = 0; t < T; ++t) us.push_back(slice(ustack, t * mp->dims.nu, (t + 1) * mp->dims.nu, 0, 1));
    RenTrajectory tr = ren_simulate(*mp, Mat(mp->dims.nx, 1), us);
    Mat y(mp->dims.ny * T, 1);
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < mp->dims.ny; ++i) y(t * mp->dims.ny + i, 0) = tr.ys[t](i, 0);
    return y;
  };
  map.vjp = [mp, T](const Mat& ustack, const Mat& w) {
    Tape tape;
    TapeCtx cx{tape};
    auto h = ren_handles_of(*mp);
    RenHandlesT<Var> hv;
    hv.A = cx.constant(h.A);
    hv.B1 = cx.constant(h.B1);
    hv.B2 = cx.constant(h.B2);
    hv.C1 = cx.constant(h.C1);
    hv.D11 = cx.constant(h.D11);
    hv.D12 = cx.constant(h.D12);
    hv.C2 = cx.constant(h.C2);
    hv.D21 = cx.constant(h.D21);
    hv.D22 = cx.constant(h.D22);
    hv.bx = cx.constant(h.bx);
    hv.bv = cx.constant(h.bv);
    hv.by = cx.constant(h.by);
    Var uleaf = cx.leaf(ustack);
    Var x = cx.constant(Mat(mp->dims.nx, 1));
    Var acc;
    for (int t = 0; t < T; ++t) {
      Var ut = cx.slice(uleaf, t * mp->dims.nu, (t + 1) * mp->dims.nu, 0, 1);
      auto out = ren_step_ctx(cx, hv, mp->act, mp->dims, x, ut);
      Mat wt = slice(w, t * mp->dims.ny, (t + 1) * mp->dims.ny, 0, 1);
      Var term = cx.matmul(cx.constant(transpose(wt)), out.y);
      acc = t == 0 ? term : cx.add(acc, term);
      x = out.xnext;
    }
    tape.backward(acc);
    return tape.grad(uleaf);
  };
  return map;
}

// Lower bound on the true Lipschitz constant: random difference quotients
// plus power iteration on J(x)' J(x) at random base points (J v by central
// differences, J' z exactly through the tape).
inline double empirical_lipschitz(const DiffMap& map, int npairs, int npoints, int power_iters,
                                  uint64_t seed) {
  Rng rng(sub_seed(seed, kSeedProbe));
  double best = 0.0;
  for (int k = 0; k < npairs; ++k) {
    Mat ua = rng.normal_mat(map.in_dim, 1, 1.0);
    Mat ub = rng.normal_mat(map.in_dim, 1, 1.0);
    double du = norm_fro(sub(ua, ub));
    if (du < 1e-12) continue;
    double dy = norm_fro(sub(map.f(ua), map.f(ub)));
    best = std::max(best, dy / du);
  }
  for (int k = 0; k < npoints; ++k) {
    Mat x = rng.normal_mat(map.in_dim, 1, 1.0);
    Mat v = rng.normal_mat(map.in_dim, 1, 1.0);
    double nv = norm_fro(v);
    if (nv == 0.0) continue;
    v = scale(v, 1.0 / nv);
    const double h = 1e-6;
    for (int it = 0; it < power_iters; ++it) {
      Mat z = scale(sub(map.f(add(x, scale(v, h))), map.f(sub(x, scale(v, h)))), 0.5 / h);
      best = std::max(best, norm_fro(z));
      Mat v2 = map.vjp(x, z);
      double n2 = norm_fro(v2);
      if (n2 < 1e-300) break;
      v = scale(v2, 1.0 / n2);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Trajectory probes

struct ContractionTrace {
  std::vector<double> r;  // metric distance sqrt(dx' P dx) at t = 0..T
  bool ok = false;        // r_{t+1} <= alpha r_t + 1e-9 * max(1, r_0) throughout
};

inline double metric_norm(const Mat& P, const Mat& dx) {
  return std::sqrt(std::max(0.0, dot(dx, matmul(P, dx))));
}

// Runs the pair of trajectories under shared inputs and records the
// certificate-metric distance between them.
inline ContractionTrace contraction_probe(const ExplicitRen& m, const Certificate& cert,
                                          const Mat& x0a, const Mat& x0b,
                                          const std::vector<Mat>& us) {
  ContractionTrace tr;
  Mat xa = x0a, xb = x0b;
  tr.r.push_back(metric_norm(cert.P, sub(xa, xb)));
  for (const Mat& u : us) {
    xa = ren_step(m, xa, u).xnext;
    xb = ren_step(m, xb, u).xnext;
    tr.r.push_back(metric_norm(cert.P, sub(xa, xb)));
  }
  tr.ok = true;
  const double slack = 1e-9 * std::max(1.0, tr.r.front());
  for (size_t t = 0; t + 1 < tr.r.size(); ++t)
    if (tr.r[t + 1] > m.spec.alpha * tr.r[t] + slack) tr.ok = false;
  return tr;
}

struct IqcTrace {
  double v0 = 0.0;                    // dx0' P dx0
  std::vector<double> supply_partial; // running sums of the per-step supply
  double min_margin = 0.0;            // min_T normalized (sum_T + v0)
};

// Accumulates the quadratic supply along a pair of trajectories; for a model
// satisfying the constraint every partial sum obeys  sum_{t<T} s_t >= -v0.
inline IqcTrace iqc_accumulate(const ExplicitRen& m, const Certificate& cert, const Mat& x0a,
                               const Mat& x0b, const std::vector<Mat>& usa,
                               const std::vector<Mat>& usb) {
  if (usa.size() != usb.size()) throw DimensionError("iqc_accumulate: input lengths differ");
  SupplyTriple st = supply_of(m.spec, m.dims);
  IqcTrace tr;
  Mat dx0 = sub(x0a, x0b);
  tr.v0 = dot(dx0, matmul(cert.P, dx0));
  Mat xa = x0a, xb = x0b;
  double sum = 0.0;
  tr.min_margin = 1e300;
  for (size_t t = 0; t < usa.size(); ++t) {
    auto oa = ren_step(m, xa, usa[t]);
    auto ob = ren_step(m, xb, usb[t]);
    Mat dy = sub(oa.y, ob.y);
    Mat du = sub(usa[t], usb[t]);
    double s = dot(dy, matmul(st.Q, dy)) + 2.0 * dot(du, matmul(st.S, dy)) +
               dot(du, matmul(st.R, du));
    sum += s;
    tr.supply_partial.push_back(sum);
    double margin = (sum + tr.v0) / (1.0 + std::abs(sum) + tr.v0);
    tr.min_margin = std::min(tr.min_margin, margin);
    xa = oa.xnext;
    xb = ob.xnext;
  }
  return tr;
}

// Dedicated passivity check: pairs share the initial state (v0 = 0), so the
// accumulated supply itself must stay above -1e-8 in normalized terms.
inline double passivity_probe(const ExplicitRen& m, const Certificate& cert, int npairs, int T,
                              uint64_t seed) {
  Rng rng(sub_seed(seed, kSeedProbe));
  double worst = 1e300;
  for (int k = 0; k < npairs; ++k) {
    Mat x0 = rng.normal_mat(m.dims.nx, 1, 1.0);
    std::vector<Mat> usa, usb;
    for (int t = 0; t < T; ++t) {
      usa.push_back(rng.normal_mat(m.dims.nu, 1, 1.0));
      usb.push_back(rng.normal_mat(m.dims.nu, 1, 1.0));
    }
    IqcTrace tr = iqc_accumulate(m, cert, x0, x0, usa, usb);
    worst = std::min(worst, tr.min_margin);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Feedforward certificate: the sandwich factors must satisfy
// A A' + B B' = I, which bounds every layer's gain.

struct LbdnReport {
  bool passed = false;
  double max_residual = 0.0;  // worst ||At' At + Bt' Bt - I||_F over layers
  double tolerance = 1e-10;
  double gamma_bound = 0.0;
};

inline LbdnReport certify_lbdn(const LbdnDirectParams& p) {
  ValueCtx cx;
  LbdnReport rep;
  rep.gamma_bound = p.gamma;
  // Non-finite parameters (or an unsolvable Cayley system) must read as an
  // infinite residual, never as zero: NaN would otherwise vanish in max().
  auto residual_of = [&](const Mat& X, const Mat& Y) {
    try {
      auto [At, Bt] = cayley_ctx(cx, X, Y);
      Mat r = sub(add(matmul(transpose(At), At), matmul(transpose(Bt), Bt)),
                  Mat::identity(At.cols));
      double n = norm_fro(r);
      return std::isfinite(n) ? n : std::numeric_limits<double>::infinity();
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  for (const auto& l : p.layers)
    rep.max_residual = std::max(rep.max_residual, residual_of(l.X, l.Y));
  rep.max_residual = std::max(rep.max_residual, residual_of(p.XL, p.YL));
  rep.passed = rep.max_residual <= rep.tolerance;
  return rep;
}

}  // namespace robnet
