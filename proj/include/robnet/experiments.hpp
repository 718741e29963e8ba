#pragma once
// The four studies as reproducible procedures: a contraction demonstration,
// image classification with a robustness sweep, box-control policy learning
// with the construction-caching benchmark, and observer design. Every
// experiment is a pure function of (config, seed) and writes CSVs under the
// given output directory.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "robnet/certify.hpp"
#include "robnet/context.hpp"
#include "robnet/data.hpp"
#include "robnet/lbdn.hpp"
#include "robnet/linalg.hpp"
#include "robnet/ren.hpp"
#include "robnet/rng.hpp"
#include "robnet/train.hpp"

namespace robnet {

// Additional sub-seed counters (extending the scheme in ren.hpp).
enum : uint64_t { kSeedDataTest = 6, kSeedShuffle = 7, kSeedDenseInit = 8, kSeedBenchRetry = 9 };

// ---------------------------------------------------------------------------
// Box dynamics: mass on a spring with quadratic drag, driven by a force.
//   qddot = (u - k q - mu qdot^2) / m

struct BoxParams {
  double m = 1.0;    // kg
  double k = 5.0;    // N/m
  double mu = 0.5;   // kg/m
  double dt = 0.02;  // s
  double Tmax = 4.0; // s
  int steps() const { return static_cast<int>(std::lround(Tmax / dt)); }
};

template <class Ctx>
typename Ctx::H box_f_ctx(Ctx& cx, typename Ctx::H x, typename Ctx::H u, const BoxParams& p) {
  const Mat& xv = cx.value(x);
  if (xv.rows != 2 || cx.value(u).rows != 1 || cx.value(u).cols != xv.cols)
    throw DimensionError("box_f: need x 2xB and u 1xB");
  auto q = cx.slice(x, 0, 1, 0, xv.cols);
  auto qd = cx.slice(x, 1, 2, 0, xv.cols);
  auto qdd = cx.scale(cx.sub(cx.sub(u, cx.scale(q, p.k)), cx.scale(cx.square(qd), p.mu)),
                      1.0 / p.m);
  return cx.vcat(qd, qdd);
}

template <class Ctx>
typename Ctx::H box_fd_ctx(Ctx& cx, typename Ctx::H x, typename Ctx::H u, const BoxParams& p) {
  return cx.add(x, cx.scale(box_f_ctx(cx, x, u, p), p.dt));
}

inline Mat box_f(const Mat& x, const Mat& u, const BoxParams& p) {
  ValueCtx cx;
  return box_f_ctx(cx, x, u, p);
}

inline Mat box_fd(const Mat& x, const Mat& u, const BoxParams& p) {
  ValueCtx cx;
  return box_fd_ctx(cx, x, u, p);
}

// Position measurement: the only observable of the box.
inline Mat obs_measure(const Mat& x) {
  if (x.rows != 2) throw DimensionError("obs_measure: need 2-row state");
  return slice(x, 0, 1, 0, x.cols);
}

// Free oscillation under zero input: returns nsteps+1 states starting at x0.
inline std::vector<Mat> box_simulate(const BoxParams& p, const Mat& x0, int nsteps) {
  std::vector<Mat> xs{x0};
  Mat u0(1, x0.cols);
  for (int t = 0; t < nsteps; ++t) xs.push_back(box_fd(xs.back(), u0, p));
  return xs;
}

// ---------------------------------------------------------------------------
// Reference-tracking control of the box

struct RlConfig {
  double c1 = 10.0, c2 = 1.0, c3 = 0.1;  // cost weights on dq, qdot, du
  int batches = 80;                      // training goals
  double gamma = 20.0;                   // policy Lipschitz bound
  std::vector<int> hidden{32, 32};
  int epochs = 250;
  double lr = 1e-3;
  BoxParams box;  // dt = 0.02, Tmax = 4
  int test_goals = 60;
};

// Weighted tracking cost on a recorded trajectory: mean over time of the
// batch-mean of c1 (q - qref)^2 + c2 qdot^2 + c3 (u - uref)^2.
inline double rl_cost(const std::vector<Mat>& zs, const Mat& qref, const Mat& uref, double c1,
                      double c2, double c3) {
  if (zs.empty()) throw DimensionError("rl_cost: empty trajectory");
  double total = 0.0;
  for (const Mat& z : zs) {
    if (z.rows != 3 || z.cols != qref.cols) throw DimensionError("rl_cost: bad snapshot shape");
    double bsum = 0.0;
    for (int j = 0; j < z.cols; ++j) {
      double dq = z(0, j) - qref(0, j);
      double qd = z(1, j);
      double du = z(2, j) - uref(0, j);
      bsum += c1 * dq * dq + c2 * qd * qd + c3 * du * du;
    }
    total += bsum / z.cols;
  }
  return total / static_cast<double>(zs.size());
}

// Tape rollout of the closed loop with the given policy closure; returns the
// scalar tracking cost. policy(cx, inp) maps [x; qref] (3xB) to u (1xB).
template <class PolicyFn>
Var rl_cost_tape(TapeCtx& cx, PolicyFn&& policy, const Mat& x0, const Mat& qref,
                 const RlConfig& cfg) {
  const int T = cfg.box.steps();
  const int B = qref.cols;
  Mat zref(3, B);
  for (int j = 0; j < B; ++j) {
    zref(0, j) = qref(0, j);
    zref(2, j) = cfg.box.k * qref(0, j);
  }
  Var zref_c = cx.constant(zref);
  Var wrow = cx.constant(Mat(1, 3, {cfg.c1, cfg.c2, cfg.c3}));
  Var qref_c = cx.constant(qref);
  Var x = cx.constant(x0);
  Var acc{};
  for (int t = 0; t < T; ++t) {
    Var u = policy(cx, cx.vcat(x, qref_c));
    Var z = cx.vcat(x, u);
    Var ct = cx.mean(cx.matmul(wrow, cx.square(cx.sub(z, zref_c))));
    acc = t == 0 ? ct : cx.add(acc, ct);
    x = box_fd_ctx(cx, x, u, cfg.box);
  }
  return cx.scale(acc, 1.0 / T);
}

struct RlTrajectory {
  std::vector<Mat> zs;  // T snapshots [x; u], 3xB
  Mat x_final;          // state after the last step
  Mat u_final;          // policy evaluated at the final state
};

inline RlTrajectory rl_rollout(const ExplicitLbdn& policy, const Mat& x0, const Mat& qref,
                               const BoxParams& box) {
  RlTrajectory tr;
  Mat x = x0;
  const int T = box.steps();
  for (int t = 0; t < T; ++t) {
    Mat u = lbdn_forward(policy, vcat(x, qref));
    tr.zs.push_back(vcat(x, u));
    x = box_fd(x, u, box);
  }
  tr.x_final = x;
  tr.u_final = lbdn_forward(policy, vcat(x, qref));
  return tr;
}

struct RlResult {
  LbdnDirectParams policy;
  TrainHistory history;
  double mean_terminal_pos_err = 0.0;
  double mean_terminal_force_err = 0.0;
  bool pass_pos = false;
  bool pass_force = false;
  bool loss_decreased = false;
};

inline RlResult exp_rl_train(const RlConfig& cfg, uint64_t seed, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Rng goal_rng(sub_seed(seed, kSeedData));
  Mat qref_train = goal_rng.uniform_mat(1, cfg.batches, -1.0, 1.0);
  Mat qref_test = goal_rng.uniform_mat(1, cfg.test_goals, -1.0, 1.0);

  RlResult res;
  res.policy = init_lbdn(3, cfg.hidden, 1, cfg.gamma, Act::Relu, seed);
  LbdnAccess acc(res.policy, TrainMode::CachedExplicit);
  Adam opt(acc.ptrs(), AdamConfig{cfg.lr});
  Mat x0(2, cfg.batches);
  auto loss_fn = [&](TapeCtx& cx, LbdnAccess& a, int, int) {
    auto policy = [&](TapeCtx& pcx, Var inp) {
      auto m = a.model();
      return lbdn_forward_ctx(pcx, m, a.params().act, a.params().gamma, inp);
    };
    return rl_cost_tape(cx, policy, x0, qref_train, cfg);
  };
  res.history = train_loop(acc, cfg.epochs, 1, opt, LrSchedule{}, loss_fn);

  ExplicitLbdn pol = lbdn_to_explicit(res.policy);
  RlTrajectory tr = rl_rollout(pol, Mat(2, cfg.test_goals), qref_test, cfg.box);
  double pos = 0.0, force = 0.0;
  for (int j = 0; j < cfg.test_goals; ++j) {
    pos += std::abs(tr.x_final(0, j) - qref_test(0, j));
    force += std::abs(tr.u_final(0, j) - cfg.box.k * qref_test(0, j));
  }
  res.mean_terminal_pos_err = pos / cfg.test_goals;
  res.mean_terminal_force_err = force / cfg.test_goals;
  res.pass_pos = res.mean_terminal_pos_err < 0.05;
  res.pass_force = res.mean_terminal_force_err < 0.1;
  res.loss_decreased = !res.history.epoch_mean_loss.empty() &&
                       res.history.epoch_mean_loss.back() < res.history.epoch_mean_loss.front();

  std::vector<std::vector<double>> rows;
  for (size_t t = 0; t < tr.zs.size(); ++t)
    for (int j = 0; j < cfg.test_goals; ++j)
      rows.push_back({static_cast<double>(t), static_cast<double>(j), tr.zs[t](0, j),
                      tr.zs[t](1, j), tr.zs[t](2, j), qref_test(0, j)});
  write_csv(out_dir + "/rl_traj.csv", {"t", "batch", "q", "qdot", "u", "qref"}, rows);
  std::vector<std::vector<double>> lrows;
  for (size_t e = 0; e < res.history.epoch_mean_loss.size(); ++e)
    lrows.push_back({static_cast<double>(e), res.history.epoch_mean_loss[e]});
  write_csv(out_dir + "/rl_loss.csv", {"epoch", "mean_loss"}, lrows);
  return res;
}

// ---------------------------------------------------------------------------
// Construction-caching benchmark on the control task

struct BenchRow {
  int n = 0;
  double t_cached = 0.0, t_rebuild = 0.0;
  int64_t conv_cached = 0, conv_rebuild = 0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  int steps_per_epoch = 0;  // expected conversion ratio rebuild/cached
};

inline BenchResult bench_modes(const std::vector<int>& sizes, int epochs, uint64_t seed,
                               const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  RlConfig base;
  base.epochs = epochs;
  Rng goal_rng(sub_seed(seed, kSeedData));
  Mat qref = goal_rng.uniform_mat(1, base.batches, -1.0, 1.0);
  Mat x0(2, base.batches);

  // One timed training run at width n. The benchmark must complete for any
  // master seed, but an unlucky policy draw can destabilize the closed loop
  // (narrow hidden layers especially) and make the training loop abort on a
  // non-finite loss. Such draws are discarded and the width is retried with
  // the next derived draw; the recorded time and conversion counts cover the
  // completed run only. The retry sequence is deterministic, depends only on
  // (seed, n, attempt), and both training modes settle on the same draw, so
  // their histories stay identical. Attempt 0 uses the master seed directly.
  auto run_one = [&](int n, TrainMode mode, int nepochs, int64_t* conversions) {
    RlConfig cfg = base;
    cfg.hidden = {n};
    cfg.epochs = nepochs;
    for (uint64_t attempt = 0; attempt < 100; ++attempt) {
      uint64_t draw =
          attempt == 0
              ? seed
              : sub_seed(sub_seed(sub_seed(seed, kSeedBenchRetry), static_cast<uint64_t>(n)),
                         attempt);
      LbdnDirectParams params = init_lbdn(3, cfg.hidden, 1, cfg.gamma, Act::Relu, draw);
      LbdnAccess acc(params, mode);
      Adam opt(acc.ptrs(), AdamConfig{cfg.lr});
      auto loss_fn = [&](TapeCtx& cx, LbdnAccess& a, int, int) {
        auto policy = [&](TapeCtx& pcx, Var inp) {
          auto m = a.model();
          return lbdn_forward_ctx(pcx, m, a.params().act, a.params().gamma, inp);
        };
        return rl_cost_tape(cx, policy, x0, qref, cfg);
      };
      auto start = std::chrono::steady_clock::now();
      try {
        train_loop(acc, cfg.epochs, 1, opt, LrSchedule{}, loss_fn);
      } catch (const TrainError&) {
        continue;
      }
      auto stop = std::chrono::steady_clock::now();
      if (conversions) *conversions = acc.conversion_count();
      return std::chrono::duration<double>(stop - start).count();
    }
    throw Error("bench_modes: no stable policy draw found at width " + std::to_string(n));
  };

  // Warm-up pass so first-touch effects don't land in the first timed row.
  run_one(2, TrainMode::CachedExplicit, 1, nullptr);
  run_one(2, TrainMode::RebuildPerCall, 1, nullptr);

  BenchResult res;
  res.steps_per_epoch = base.box.steps();
  for (int n : sizes) {
    BenchRow row;
    row.n = n;
    row.t_cached = run_one(n, TrainMode::CachedExplicit, epochs, &row.conv_cached);
    row.t_rebuild = run_one(n, TrainMode::RebuildPerCall, epochs, &row.conv_rebuild);
    res.rows.push_back(row);
  }
  std::vector<std::vector<double>> rows;
  for (const auto& r : res.rows)
    rows.push_back({static_cast<double>(r.n), r.t_cached, r.t_rebuild});
  write_csv(out_dir + "/bench.csv", {"n", "t_cached", "t_rebuild"}, rows);
  return res;
}

// ---------------------------------------------------------------------------
// Contraction demonstration

struct ContractionDemoResult {
  ContractionTrace trace;
  std::vector<double> ys_a, ys_b;
  double alpha = 0.95;
  bool pass_monotone = false;
  bool pass_geometric = false;
};

inline ContractionDemoResult exp_contraction_demo(uint64_t seed, const std::string& out_dir,
                                                  double alpha = 0.95, int T = 500) {
  std::filesystem::create_directories(out_dir);
  RenDims dims{1, 1, 20, 1};
  RenDirectParams p =
      init_ren(dims, IqcSpec::contracting(alpha), Act::Relu, RenInit::ScaledRandom, seed);
  auto [m, cert] = ren_to_explicit(p);

  std::vector<Mat> us;
  for (int t = 0; t < T; ++t) us.push_back(Mat::filled(1, 1, std::sin(0.1 * t)));
  Mat x0a = Mat::filled(1, 1, 1.0);
  Mat x0b = Mat::filled(1, 1, -1.0);
  RenTrajectory tra = ren_simulate(m, x0a, us);
  RenTrajectory trb = ren_simulate(m, x0b, us);

  ContractionDemoResult res;
  res.alpha = alpha;
  for (int t = 0; t <= T; ++t)
    res.trace.r.push_back(metric_norm(cert.P, sub(tra.xs[t], trb.xs[t])));
  res.trace.ok = true;
  const double slack = 1e-9 * std::max(1.0, res.trace.r.front());
  for (int t = 0; t < T; ++t)
    if (res.trace.r[t + 1] > alpha * res.trace.r[t] + slack) res.trace.ok = false;
  res.pass_monotone = res.trace.ok;
  res.pass_geometric =
      res.trace.r[T] <= std::pow(alpha, T) * res.trace.r[0] * (1.0 + 1e-6);
  for (int t = 0; t < T; ++t) {
    res.ys_a.push_back(tra.ys[t](0, 0));
    res.ys_b.push_back(trb.ys[t](0, 0));
  }

  std::vector<std::vector<double>> rows;
  for (int t = 0; t < T; ++t)
    rows.push_back({static_cast<double>(t), res.ys_a[t], res.ys_b[t], res.trace.r[t]});
  write_csv(out_dir + "/contraction.csv", {"t", "y_a", "y_b", "gap"}, rows);
  return res;
}

// ---------------------------------------------------------------------------
// Image classification with a robustness sweep

struct MnistConfig {
  std::string data_dir;  // empty: requires synth
  bool synth = false;
  double gamma = 5.0;
  std::vector<int> hidden{64, 64};
  int batch = 256;
  int epochs1 = 40, epochs2 = 10;
  double lr1 = 1e-3, lr2 = 1e-4;
  int sweep_points = 10;
  double eps_max = 200.0 / 255.0;
  int synth_train_per_class = 500;
  int synth_test_per_class = 100;
  double synth_separation = 10.0;
};

struct MnistResult {
  LbdnDirectParams lbdn;
  DenseParams dense;
  bool used_synth = false;
  double lbdn_train_acc = 0.0, lbdn_test_acc = 0.0;
  double dense_train_acc = 0.0, dense_test_acc = 0.0;
  std::vector<std::array<double, 3>> sweep;  // epsilon, lbdn_acc, dense_acc
  LbdnReport cert;
  TrainHistory lbdn_history, dense_history;
};

namespace detail {

inline std::string resolve_idx_path(const std::string& dir, const std::string& base) {
  namespace fs = std::filesystem;
  std::string plain = dir + "/" + base;
  if (fs::exists(plain)) return plain;
  std::string gz = plain + ".gz";
  if (fs::exists(gz)) return gz;
  throw DataError("missing dataset file '" + plain + "' (or .gz)");
}

}  // namespace detail

inline MnistResult exp_mnist(const MnistConfig& cfg, uint64_t seed, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Dataset train, test;
  MnistResult res;
  if (!cfg.data_dir.empty()) {
    train = load_idx(detail::resolve_idx_path(cfg.data_dir, "train-images-idx3-ubyte"),
                     detail::resolve_idx_path(cfg.data_dir, "train-labels-idx1-ubyte"));
    test = load_idx(detail::resolve_idx_path(cfg.data_dir, "t10k-images-idx3-ubyte"),
                    detail::resolve_idx_path(cfg.data_dir, "t10k-labels-idx1-ubyte"));
    int classes = std::max(train.classes, test.classes);
    train.classes = test.classes = classes;
  } else if (cfg.synth) {
    res.used_synth = true;
    train = synth_blobs(784, 10, cfg.synth_train_per_class, cfg.synth_separation, seed);
    test = synth_blobs(784, 10, cfg.synth_test_per_class, cfg.synth_separation,
                       sub_seed(seed, kSeedDataTest));
  } else {
    throw DataError("no dataset: pass a data directory or enable the synthetic fallback");
  }
  const int dim = train.x.rows;
  const int classes = train.classes;
  const Mat train_onehot = one_hot(train.y, classes);
  const int nb = (train.x.cols + cfg.batch - 1) / cfg.batch;

  // Both models see identical batch sequences (same shuffle stream).
  auto make_loss = [&](int epoch_offset) {
    return [&train, &train_onehot, &cfg, seed, epoch_offset, built_for = -1,
            batches = std::vector<Batch>{}](TapeCtx& cx, auto& a, int e, int b) mutable {
      int ge = e + epoch_offset;
      if (built_for != ge) {
        batches = shuffle_batches(train.x, train_onehot, cfg.batch,
                                  sub_seed(sub_seed(seed, kSeedShuffle), ge));
        built_for = ge;
      }
      Var logits = a.forward(cx, cx.constant(batches[b].x));
      return cx.softmax_xent(logits, cx.constant(batches[b].y));
    };
  };

  res.lbdn = init_lbdn(dim, cfg.hidden, classes, cfg.gamma, Act::Relu, seed);
  {
    LbdnAccess acc(res.lbdn, TrainMode::CachedExplicit);
    Adam opt(acc.ptrs(), AdamConfig{cfg.lr1});
    res.lbdn_history = train_loop(acc, cfg.epochs1, nb, opt, LrSchedule{}, make_loss(0));
    opt.set_lr(cfg.lr2);
    TrainHistory h2 = train_loop(acc, cfg.epochs2, nb, opt, LrSchedule{}, make_loss(cfg.epochs1));
    res.lbdn_history.epoch_mean_loss.insert(res.lbdn_history.epoch_mean_loss.end(),
                                            h2.epoch_mean_loss.begin(), h2.epoch_mean_loss.end());
    res.lbdn_history.epoch_lr.insert(res.lbdn_history.epoch_lr.end(), h2.epoch_lr.begin(),
                                     h2.epoch_lr.end());
  }
  res.dense = init_dense(dim, cfg.hidden, classes, Act::Relu, sub_seed(seed, kSeedDenseInit));
  {
    DenseAccess acc(res.dense);
    Adam opt(acc.ptrs(), AdamConfig{cfg.lr1});
    res.dense_history = train_loop(acc, cfg.epochs1, nb, opt, LrSchedule{}, make_loss(0));
    opt.set_lr(cfg.lr2);
    TrainHistory h2 = train_loop(acc, cfg.epochs2, nb, opt, LrSchedule{}, make_loss(cfg.epochs1));
    res.dense_history.epoch_mean_loss.insert(res.dense_history.epoch_mean_loss.end(),
                                             h2.epoch_mean_loss.begin(),
                                             h2.epoch_mean_loss.end());
    res.dense_history.epoch_lr.insert(res.dense_history.epoch_lr.end(), h2.epoch_lr.begin(),
                                      h2.epoch_lr.end());
  }

  ExplicitLbdn lbdn = lbdn_to_explicit(res.lbdn);
  res.lbdn_train_acc = accuracy(lbdn_forward(lbdn, train.x), train.y);
  res.lbdn_test_acc = accuracy(lbdn_forward(lbdn, test.x), test.y);
  res.dense_train_acc = accuracy(dense_forward(res.dense, train.x), train.y);
  res.dense_test_acc = accuracy(dense_forward(res.dense, test.x), test.y);

  for (int i = 0; i < cfg.sweep_points; ++i) {
    double eps = cfg.sweep_points > 1 ? cfg.eps_max * i / (cfg.sweep_points - 1) : 0.0;
    Mat xp = add_uniform_noise(test.x, eps, sub_seed(sub_seed(seed, kSeedNoise), i));
    res.sweep.push_back({eps, accuracy(lbdn_forward(lbdn, xp), test.y),
                         accuracy(dense_forward(res.dense, xp), test.y)});
  }
  res.cert = certify_lbdn(res.lbdn);
  save_lbdn(out_dir + "/mnist_lbdn.txt", res.lbdn);

  std::vector<std::vector<double>> rows;
  for (const auto& s : res.sweep) rows.push_back({s[0], s[1], s[2]});
  write_csv(out_dir + "/mnist_sweep.csv", {"epsilon", "lbdn_acc", "dense_acc"}, rows);
  auto hist_rows = [](const TrainHistory& h) {
    std::vector<std::vector<double>> r;
    for (size_t e = 0; e < h.epoch_mean_loss.size(); ++e)
      r.push_back({static_cast<double>(e), h.epoch_mean_loss[e]});
    return r;
  };
  write_csv(out_dir + "/mnist_lbdn_loss.csv", {"epoch", "mean_loss"}, hist_rows(res.lbdn_history));
  write_csv(out_dir + "/mnist_dense_loss.csv", {"epoch", "mean_loss"},
            hist_rows(res.dense_history));
  return res;
}

// ---------------------------------------------------------------------------
// Observer design: estimate the box state from force and position only.

struct ObserverConfig {
  BoxParams box{1.0, 5.0, 0.5, 0.01, 10.0};
  int nbatch = 200;  // training trajectories; also columns per update
  int nv = 100;
  int epochs = 100;
  double lr = 1e-3, min_lr = 1e-4;
  double x0_range = 0.5;
  int test_batches = 50;
  double test_x0_range = 0.2;
  double alpha = 1.0;
};

struct ObserverResult {
  RenDirectParams model;
  TrainHistory history;
  double mean_final_err = 0.0;
  bool pass = false;
  ContractionTrace premise_untrained, premise_trained;
};

// One-step prediction loss: mean over columns of the squared-error column
// sums between the model's state update and the true next state.
inline Var obs_loss(TapeCtx& cx, const RenHandlesT<Var>& m, Act act, const RenDims& dims,
                    const Mat& xt, const Mat& xn, const Mat& inp) {
  auto out = ren_step_ctx(cx, m, act, dims, cx.constant(xt), cx.constant(inp));
  return cx.scale(cx.sum(cx.square(cx.sub(out.xnext, cx.constant(xn)))), 1.0 / xt.cols);
}

inline ObserverResult exp_observer(const ObserverConfig& cfg, uint64_t seed,
                                   const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const int state_count = cfg.box.steps();      // states per trajectory
  const int pairs_per_traj = state_count - 1;   // consecutive-state pairs
  const int N = pairs_per_traj * cfg.nbatch;

  // Free oscillations; the measurement is the position, the force is zero.
  Rng data_rng(sub_seed(seed, kSeedData));
  Mat x0 = data_rng.uniform_mat(2, cfg.nbatch, -cfg.x0_range, cfg.x0_range);
  std::vector<Mat> xs = box_simulate(cfg.box, x0, pairs_per_traj);

  Mat xt(2, N), xn(2, N), inp(2, N);
  for (int t = 0; t < pairs_per_traj; ++t)
    for (int j = 0; j < cfg.nbatch; ++j) {
      int c = t * cfg.nbatch + j;
      xt(0, c) = xs[t](0, j);
      xt(1, c) = xs[t](1, j);
      xn(0, c) = xs[t + 1](0, j);
      xn(1, c) = xs[t + 1](1, j);
      inp(0, c) = 0.0;            // force input
      inp(1, c) = xs[t](0, j);    // measured position
    }

  // One global shuffle of the pairs, then fixed batches of nbatch columns.
  std::vector<int> perm(N);
  for (int i = 0; i < N; ++i) perm[i] = i;
  Rng shuffle_rng(sub_seed(seed, kSeedShuffle));
  for (int i = N - 1; i > 0; --i) {
    int j = static_cast<int>(shuffle_rng.below(static_cast<uint64_t>(i) + 1));
    std::swap(perm[i], perm[j]);
  }
  struct ObsBatch {
    Mat xt, xn, inp;
  };
  std::vector<ObsBatch> batches;
  for (int start = 0; start < N; start += cfg.nbatch) {
    int b = std::min(cfg.nbatch, N - start);
    ObsBatch ob{Mat(2, b), Mat(2, b), Mat(2, b)};
    for (int j = 0; j < b; ++j) {
      int src = perm[start + j];
      for (int i = 0; i < 2; ++i) {
        ob.xt(i, j) = xt(i, src);
        ob.xn(i, j) = xn(i, src);
        ob.inp(i, j) = inp(i, src);
      }
    }
    batches.push_back(std::move(ob));
  }

  ObserverResult res;
  RenDims dims{2, 2, cfg.nv, 2};
  res.model = init_ren(dims, IqcSpec::contracting(cfg.alpha), Act::Relu, RenInit::IdentityH,
                       seed, 1e-6, /*output_map=*/false);
  RenDirectParams untrained = res.model;

  RenAccess acc(res.model, TrainMode::RebuildPerCall);
  Adam opt(acc.ptrs(), AdamConfig{cfg.lr});
  LrSchedule sched{true, 0.1, cfg.min_lr};
  auto loss_fn = [&](TapeCtx& cx, RenAccess& a, int, int b) {
    auto m = a.model();
    return obs_loss(cx, m, a.act(), a.dims(), batches[b].xt, batches[b].xn, batches[b].inp);
  };
  res.history =
      train_loop(acc, cfg.epochs, static_cast<int>(batches.size()), opt, sched, loss_fn);

  // Closed-loop evaluation: fresh trajectories, estimator started at zero and
  // fed only the force (zero) and the measured position.
  auto [m, cert] = ren_to_explicit(res.model);
  Rng test_rng(sub_seed(seed, kSeedDataTest));
  Mat tx0 = test_rng.uniform_mat(2, cfg.test_batches, -cfg.test_x0_range, cfg.test_x0_range);
  std::vector<Mat> txs = box_simulate(cfg.box, tx0, pairs_per_traj);
  std::vector<Mat> xhat{Mat(2, cfg.test_batches)};
  for (int t = 0; t < pairs_per_traj; ++t) {
    Mat u(2, cfg.test_batches);
    for (int j = 0; j < cfg.test_batches; ++j) u(1, j) = txs[t](0, j);
    xhat.push_back(ren_step(m, xhat.back(), u).xnext);
  }
  double final_err = 0.0;
  for (int j = 0; j < cfg.test_batches; ++j) {
    double dq = txs.back()(0, j) - xhat.back()(0, j);
    double dqd = txs.back()(1, j) - xhat.back()(1, j);
    final_err += std::sqrt(dq * dq + dqd * dqd);
  }
  res.mean_final_err = final_err / cfg.test_batches;
  res.pass = res.mean_final_err < 0.05;

  // Contraction premise: two estimator copies under the measurement stream of
  // the first test trajectory, for the untrained and the trained model.
  std::vector<Mat> probe_us;
  for (int t = 0; t < pairs_per_traj; ++t) {
    Mat u(2, 1);
    u(1, 0) = txs[t](0, 0);
    probe_us.push_back(u);
  }
  Mat pa(2, 1, {1.0, -1.0});
  Mat pb(2, 1);
  {
    auto [mu_, cu] = ren_to_explicit(untrained);
    res.premise_untrained = contraction_probe(mu_, cu, pa, pb, probe_us);
  }
  res.premise_trained = contraction_probe(m, cert, pa, pb, probe_us);

  std::vector<std::vector<double>> rows;
  for (int t = 0; t < state_count; ++t)
    for (int j = 0; j < cfg.test_batches; ++j) {
      double dq = txs[t](0, j) - xhat[t](0, j);
      double dqd = txs[t](1, j) - xhat[t](1, j);
      rows.push_back({static_cast<double>(t), static_cast<double>(j), txs[t](0, j), txs[t](1, j),
                      xhat[t](0, j), xhat[t](1, j), std::sqrt(dq * dq + dqd * dqd)});
    }
  write_csv(out_dir + "/observer.csv",
            {"t", "batch", "q", "qdot", "qhat", "qdothat", "err_norm"}, rows);
  std::vector<std::vector<double>> lrows;
  for (size_t e = 0; e < res.history.epoch_mean_loss.size(); ++e)
    lrows.push_back({static_cast<double>(e), res.history.epoch_mean_loss[e]});
  write_csv(out_dir + "/observer_loss.csv", {"epoch", "mean_loss"}, lrows);
  save_ren(out_dir + "/observer_ren.txt", res.model);
  return res;
}

}  // namespace robnet
