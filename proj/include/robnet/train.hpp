#pragma once
// Training utilities: Adam, model accessors that place the direct
// parameters on a tape, and a generic epoch/batch loop.
//
// Two training modes differ only in when the direct parameters are mapped to
// the explicit model on the tape:
//   CachedExplicit  - one construction per loss evaluation, reused by every
//                     model application inside it (the construction is part
//                     of the same tape, so gradients still reach the direct
//                     parameters);
//   RebuildPerCall  - a fresh construction for every model application.
// Both produce the same loss values and the same gradients up to summation
// order, so training histories agree to tight tolerances; their costs differ
// sharply on long rollouts, which the benchmark experiment measures.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "robnet/autodiff.hpp"
#include "robnet/context.hpp"
#include "robnet/data.hpp"
#include "robnet/lbdn.hpp"
#include "robnet/linalg.hpp"
#include "robnet/ren.hpp"
#include "robnet/rng.hpp"

namespace robnet {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double delta = 1e-8;
};

class Adam {
 public:
  Adam(const std::vector<Mat*>& params, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const Mat* p : params) {
      m_.emplace_back(p->rows, p->cols);
      v_.emplace_back(p->rows, p->cols);
    }
  }

  // Changing the learning rate keeps the moments and the step count.
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  int64_t steps() const { return t_; }

  void step(const std::vector<Mat*>& params, const std::vector<Mat>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw TrainError("adam: parameter/gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t k = 0; k < params.size(); ++k) {
      Mat& p = *params[k];
      const Mat& g = grads[k];
      if (g.rows != p.rows || g.cols != p.cols)
        throw TrainError("adam: gradient shape mismatch at parameter " + std::to_string(k));
      Mat& m = m_[k];
      Mat& v = v_[k];
      for (size_t i = 0; i < p.size(); ++i) {
        m.a[i] = cfg_.beta1 * m.a[i] + (1.0 - cfg_.beta1) * g.a[i];
        v.a[i] = cfg_.beta2 * v.a[i] + (1.0 - cfg_.beta2) * g.a[i] * g.a[i];
        double mhat = m.a[i] / bc1;
        double vhat = v.a[i] / bc2;
        p.a[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.delta);
      }
    }
  }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<Mat> m_, v_;
};

// ---------------------------------------------------------------------------
// Model accessors

enum class TrainMode { CachedExplicit, RebuildPerCall };

class RenAccess {
 public:
  RenAccess(RenDirectParams& p, TrainMode mode) : p_(&p), mode_(mode) {}

  void begin(Tape& tape) {
    tape_ = &tape;
    TapeCtx cx{tape};
    leaves_ = ren_make_leaves(cx, *p_);
    vars_ = ren_learnable_vars(*p_, leaves_);
    if (mode_ == TrainMode::CachedExplicit) {
      cached_ = ren_to_explicit_ctx(cx, *p_, leaves_);
      ++conversions_;
    }
  }

  RenHandlesT<Var> model() {
    if (mode_ == TrainMode::CachedExplicit) return cached_;
    TapeCtx cx{*tape_};
    ++conversions_;
    return ren_to_explicit_ctx(cx, *p_, leaves_);
  }

  const std::vector<Var>& leaves() const { return vars_; }
  std::vector<Mat*> ptrs() { return ren_learnable_ptrs(*p_); }
  int64_t conversion_count() const { return conversions_; }
  RenDirectParams& params() { return *p_; }
  const RenDims& dims() const { return p_->dims; }
  Act act() const { return p_->act; }
  TrainMode mode() const { return mode_; }

 private:
  RenDirectParams* p_;
  TrainMode mode_;
  Tape* tape_ = nullptr;
  RenLeaves<TapeCtx> leaves_;
  std::vector<Var> vars_;
  RenHandlesT<Var> cached_{};
  int64_t conversions_ = 0;
};

class LbdnAccess {
 public:
  LbdnAccess(LbdnDirectParams& p, TrainMode mode) : p_(&p), mode_(mode) {}

  void begin(Tape& tape) {
    tape_ = &tape;
    TapeCtx cx{tape};
    leaves_ = lbdn_make_leaves(cx, *p_);
    vars_ = lbdn_learnable_vars(leaves_);
    if (mode_ == TrainMode::CachedExplicit) {
      cached_ = lbdn_to_explicit_ctx(cx, *p_, leaves_);
      ++conversions_;
    }
  }

  LbdnHandlesT<Var> model() {
    if (mode_ == TrainMode::CachedExplicit) return cached_;
    TapeCtx cx{*tape_};
    ++conversions_;
    return lbdn_to_explicit_ctx(cx, *p_, leaves_);
  }

  Var forward(TapeCtx& cx, Var x) {
    auto m = model();
    return lbdn_forward_ctx(cx, m, p_->act, p_->gamma, x);
  }

  const std::vector<Var>& leaves() const { return vars_; }
  std::vector<Mat*> ptrs() { return lbdn_learnable_ptrs(*p_); }
  int64_t conversion_count() const { return conversions_; }
  LbdnDirectParams& params() { return *p_; }

 private:
  LbdnDirectParams* p_;
  TrainMode mode_;
  Tape* tape_ = nullptr;
  LbdnLeaves<TapeCtx> leaves_;
  std::vector<Var> vars_;
  LbdnHandlesT<Var> cached_{};
  int64_t conversions_ = 0;
};

// Unconstrained fully connected baseline (used for comparisons).
struct DenseParams {
  int nu = 1, ny = 1;
  std::vector<int> hidden;
  Act act = Act::Relu;
  std::vector<Mat> W, b;
};

inline DenseParams init_dense(int nu, const std::vector<int>& hidden, int ny, Act act,
                              uint64_t seed) {
  DenseParams p;
  p.nu = nu;
  p.ny = ny;
  p.hidden = hidden;
  p.act = act;
  Rng rng(sub_seed(seed, kSeedLbdnInit));
  std::vector<int> ws{nu};
  ws.insert(ws.end(), hidden.begin(), hidden.end());
  ws.push_back(ny);
  for (size_t k = 0; k + 1 < ws.size(); ++k) {
    double stddev = std::sqrt(2.0 / static_cast<double>(ws[k] + ws[k + 1]));
    p.W.push_back(rng.normal_mat(ws[k + 1], ws[k], stddev));
    p.b.push_back(Mat(ws[k + 1], 1));
  }
  return p;
}

inline Mat dense_forward(const DenseParams& p, const Mat& x) {
  ValueCtx cx;
  Mat h = x;
  for (size_t k = 0; k < p.W.size(); ++k) {
    h = cx.add_col_broadcast(cx.matmul(p.W[k], h), p.b[k]);
    if (k + 1 < p.W.size()) h = apply_act(cx, p.act, h);
  }
  return h;
}

class DenseAccess {
 public:
  DenseAccess(DenseParams& p, TrainMode mode = TrainMode::CachedExplicit) : p_(&p) {
    (void)mode;  // no construction step: both modes coincide
  }

  void begin(Tape& tape) {
    tape_ = &tape;
    TapeCtx cx{tape};
    wl_.clear();
    bl_.clear();
    vars_.clear();
    for (size_t k = 0; k < p_->W.size(); ++k) {
      wl_.push_back(cx.leaf(p_->W[k]));
      bl_.push_back(cx.leaf(p_->b[k]));
      vars_.push_back(wl_.back());
      vars_.push_back(bl_.back());
    }
  }

  Var forward(TapeCtx& cx, Var x) {
    Var h = x;
    for (size_t k = 0; k < wl_.size(); ++k) {
      h = cx.add_col_broadcast(cx.matmul(wl_[k], h), bl_[k]);
      if (k + 1 < wl_.size()) h = apply_act(cx, p_->act, h);
    }
    return h;
  }

  const std::vector<Var>& leaves() const { return vars_; }
  std::vector<Mat*> ptrs() {
    std::vector<Mat*> ps;
    for (size_t k = 0; k < p_->W.size(); ++k) {
      ps.push_back(&p_->W[k]);
      ps.push_back(&p_->b[k]);
    }
    return ps;
  }
  int64_t conversion_count() const { return 0; }
  DenseParams& params() { return *p_; }

 private:
  DenseParams* p_;
  Tape* tape_ = nullptr;
  std::vector<Var> wl_, bl_, vars_;
};

// ---------------------------------------------------------------------------
// Losses and metrics

inline Var loss_mse(TapeCtx& cx, Var pred, const Mat& target) {
  return cx.mean(cx.square(cx.sub(pred, cx.constant(target))));
}

// Mean cross-entropy over columns; z holds logits or probabilities.
inline double loss_crossentropy(const Mat& z, const Mat& onehot, bool from_logits) {
  check_same_shape(z, onehot, "loss_crossentropy");
  if (z.cols < 1) throw DimensionError("loss_crossentropy: empty batch");
  double total = 0.0;
  for (int j = 0; j < z.cols; ++j) {
    if (from_logits) {
      double m = z(0, j);
      for (int i = 1; i < z.rows; ++i) m = std::max(m, z(i, j));
      double denom = 0.0;
      for (int i = 0; i < z.rows; ++i) denom += std::exp(z(i, j) - m);
      double lse = m + std::log(denom);
      for (int i = 0; i < z.rows; ++i) total += onehot(i, j) * (lse - z(i, j));
    } else {
      for (int i = 0; i < z.rows; ++i)
        total -= onehot(i, j) * std::log(std::max(z(i, j), 1e-12));
    }
  }
  return total / z.cols;
}

// Fraction of columns whose top score row matches the label; ties go to the
// lowest index.
inline double accuracy(const Mat& scores, const std::vector<int>& labels) {
  if (scores.cols != static_cast<int>(labels.size()))
    throw DimensionError("accuracy: column/label count mismatch");
  if (scores.cols == 0) return 0.0;
  int hits = 0;
  for (int j = 0; j < scores.cols; ++j) {
    int arg = 0;
    for (int i = 1; i < scores.rows; ++i)
      if (scores(i, j) > scores(arg, j)) arg = i;
    if (arg == labels[j]) ++hits;
  }
  return static_cast<double>(hits) / scores.cols;
}

// ---------------------------------------------------------------------------
// Generic training loop

struct LrSchedule {
  bool enabled = false;
  double factor = 0.1;
  double min_lr = 0.0;
};

struct TrainHistory {
  std::vector<double> epoch_mean_loss;
  std::vector<double> epoch_lr;
};

// loss_fn(cx, access, epoch, batch) builds the scalar loss on the tape; it
// must call access.model()/forward() to touch the parameters.
template <class Access, class LossFn>
TrainHistory train_loop(Access& acc, int epochs, int nbatches, Adam& opt,
                        const LrSchedule& sched, LossFn&& loss_fn) {
  if (nbatches < 1) throw TrainError("train_loop: need at least one batch");
  TrainHistory hist;
  double prev_mean = 1e5;
  for (int e = 0; e < epochs; ++e) {
    double total = 0.0;
    for (int b = 0; b < nbatches; ++b) {
      Tape tape;
      TapeCtx cx{tape};
      acc.begin(tape);
      Var loss = loss_fn(cx, acc, e, b);
      double lval = tape.val(loss)(0, 0);
      if (!std::isfinite(lval))
        throw TrainError("non-finite loss at epoch " + std::to_string(e) + ", batch " +
                         std::to_string(b));
      // Only leaf gradients are read below, so let the sweep drop every
      // intermediate as it goes: rollouts that rebuild the construction per
      // step would otherwise double their footprint during backward.
      tape.backward(loss, /*release_memory=*/true);
      std::vector<Mat> grads;
      grads.reserve(acc.leaves().size());
      for (Var v : acc.leaves()) grads.push_back(tape.grad(v));
      auto ptrs = acc.ptrs();
      opt.step(ptrs, grads);
      total += lval;
    }
    double mean = total / nbatches;
    if (sched.enabled) {
      if (mean >= prev_mean) opt.set_lr(std::max(opt.lr() * sched.factor, sched.min_lr));
      prev_mean = mean;
    }
    hist.epoch_mean_loss.push_back(mean);
    hist.epoch_lr.push_back(opt.lr());
  }
  return hist;
}

}  // namespace robnet
