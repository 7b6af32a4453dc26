#pragma once

// Minimal numerical kernel for the sequence classifier: GRU cell and
// masked-batch BPTT, dense softmax heads, cross-entropy, inverted dropout,
// Adam, Glorot init, and a finite-difference oracle. Everything is
// templated on the scalar so the exact production code paths can be run at
// 64-bit for gradient checks.
//
// Batched layout: matrices carry one sample per column (d x B inputs,
// H x B hidden states), which turns the time loop into GEMMs.

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "sigrec/common.hpp"
#include "sigrec/linalg.hpp"
#include "sigrec/rng.hpp"

namespace sigrec::nn {

template <typename T>
void glorot_fill(MatX<T>& m, Eigen::Index fan_in, Eigen::Index fan_out,
                 Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      m(r, c) = static_cast<T>(rng.uniform(-limit, limit));
}

// ---------------------------------------------------------------------------
// GRU layer
// ---------------------------------------------------------------------------

/// Gate parameters. Update gate z and reset gate r use
///   z = sigma(Wz^T x + Uz^T h_prev + bz)
///   r = sigma(Wr^T x + Ur^T h_prev + br)
///   hbar = tanh(Wh^T x + Uh^T (r . h_prev) + bh)
///   h = (1 - z) . h_prev + z . hbar
/// (reset gate applied to h_prev before Uh; h is the z-weighted blend).
template <typename T>
struct GruParams {
  MatX<T> Wz, Wr, Wh;  // d_in x H
  MatX<T> Uz, Ur, Uh;  // H x H
  VecX<T> bz, br, bh;  // H

  Eigen::Index input_dim() const { return Wz.rows(); }
  Eigen::Index hidden_dim() const { return Wz.cols(); }

  static GruParams glorot(Eigen::Index d_in, Eigen::Index h, Rng& rng) {
    GruParams p;
    p.Wz.resize(d_in, h);
    p.Wr.resize(d_in, h);
    p.Wh.resize(d_in, h);
    p.Uz.resize(h, h);
    p.Ur.resize(h, h);
    p.Uh.resize(h, h);
    glorot_fill(p.Wz, d_in, h, rng);
    glorot_fill(p.Wr, d_in, h, rng);
    glorot_fill(p.Wh, d_in, h, rng);
    glorot_fill(p.Uz, h, h, rng);
    glorot_fill(p.Ur, h, h, rng);
    glorot_fill(p.Uh, h, h, rng);
    p.bz = VecX<T>::Zero(h);
    p.br = VecX<T>::Zero(h);
    p.bh = VecX<T>::Zero(h);
    return p;
  }
};

template <typename T>
struct GruGrads {
  MatX<T> Wz, Wr, Wh, Uz, Ur, Uh;
  VecX<T> bz, br, bh;

  static GruGrads zeros_like(const GruParams<T>& p) {
    GruGrads g;
    g.Wz = MatX<T>::Zero(p.Wz.rows(), p.Wz.cols());
    g.Wr = MatX<T>::Zero(p.Wr.rows(), p.Wr.cols());
    g.Wh = MatX<T>::Zero(p.Wh.rows(), p.Wh.cols());
    g.Uz = MatX<T>::Zero(p.Uz.rows(), p.Uz.cols());
    g.Ur = MatX<T>::Zero(p.Ur.rows(), p.Ur.cols());
    g.Uh = MatX<T>::Zero(p.Uh.rows(), p.Uh.cols());
    g.bz = VecX<T>::Zero(p.bz.size());
    g.br = VecX<T>::Zero(p.br.size());
    g.bh = VecX<T>::Zero(p.bh.size());
    return g;
  }
};

/// Per-step intermediates kept for backward. h is post-mask (what the next
/// step saw as h_prev).
template <typename T>
struct GruStepCache {
  MatX<T> x, h_prev, z, r, rh, hbar, h;
};

namespace detail {

template <typename T>
MatX<T> sigmoid(const MatX<T>& a) {
  return a.unaryExpr([](T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    T e = std::exp(v);
    return e / (T(1) + e);
  });
}

}  // namespace detail

/// One batched cell step (columns are samples). No masking here; callers
/// sequence/mask around it.
template <typename T>
std::pair<MatX<T>, GruStepCache<T>> gru_cell_forward(const MatX<T>& x,
                                                     const MatX<T>& h_prev,
                                                     const GruParams<T>& p) {
  if (x.rows() != p.input_dim() || h_prev.rows() != p.hidden_dim() ||
      x.cols() != h_prev.cols())
    throw InvalidArgument("gru_cell_forward: inconsistent shapes");
  if (!x.allFinite() || !h_prev.allFinite())
    throw InvalidArgument("gru_cell_forward: non-finite input");

  GruStepCache<T> cache;
  cache.x = x;
  cache.h_prev = h_prev;
  cache.z = detail::sigmoid<T>(((p.Wz.transpose() * x + p.Uz.transpose() * h_prev)
                                    .colwise() +
                                p.bz)
                                   .eval());
  cache.r = detail::sigmoid<T>(((p.Wr.transpose() * x + p.Ur.transpose() * h_prev)
                                    .colwise() +
                                p.br)
                                   .eval());
  cache.rh = cache.r.cwiseProduct(h_prev);
  cache.hbar = ((p.Wh.transpose() * x + p.Uh.transpose() * cache.rh).colwise() +
                p.bh)
                   .array()
                   .tanh()
                   .matrix();
  cache.h = (MatX<T>::Ones(h_prev.rows(), h_prev.cols()) - cache.z)
                .cwiseProduct(h_prev) +
            cache.z.cwiseProduct(cache.hbar);
  return {cache.h, cache};
}

/// Single-sample convenience form.
template <typename T>
std::pair<VecX<T>, GruStepCache<T>> gru_cell_forward(const VecX<T>& x,
                                                     const VecX<T>& h_prev,
                                                     const GruParams<T>& p) {
  auto [h, cache] = gru_cell_forward(MatX<T>(x), MatX<T>(h_prev), p);
  return {VecX<T>(h.col(0)), std::move(cache)};
}

/// Reverse of one cell step. Accumulates parameter gradients into `grads`,
/// returns dL/dh_prev, and (when dx is non-null) writes dL/dx. The caller
/// must already have zeroed dh columns of masked-out samples; this routine
/// is the pure unmasked cell adjoint.
template <typename T>
MatX<T> gru_cell_backward(const MatX<T>& dh, const GruStepCache<T>& cache,
                          const GruParams<T>& p, GruGrads<T>& grads,
                          MatX<T>* dx = nullptr) {
  const auto ones = MatX<T>::Ones(dh.rows(), dh.cols());

  MatX<T> dz = dh.cwiseProduct(cache.hbar - cache.h_prev);
  MatX<T> dhbar = dh.cwiseProduct(cache.z);
  MatX<T> dh_prev = dh.cwiseProduct(ones - cache.z);

  MatX<T> da_h =
      dhbar.cwiseProduct(ones - cache.hbar.cwiseProduct(cache.hbar));
  grads.Wh.noalias() += cache.x * da_h.transpose();
  grads.Uh.noalias() += cache.rh * da_h.transpose();
  grads.bh.noalias() += da_h.rowwise().sum();

  MatX<T> drh = p.Uh * da_h;
  MatX<T> dr = drh.cwiseProduct(cache.h_prev);
  dh_prev.noalias() += drh.cwiseProduct(cache.r);

  MatX<T> da_r =
      dr.cwiseProduct(cache.r).cwiseProduct(ones - cache.r);
  grads.Wr.noalias() += cache.x * da_r.transpose();
  grads.Ur.noalias() += cache.h_prev * da_r.transpose();
  grads.br.noalias() += da_r.rowwise().sum();
  dh_prev.noalias() += p.Ur * da_r;

  MatX<T> da_z =
      dz.cwiseProduct(cache.z).cwiseProduct(ones - cache.z);
  grads.Wz.noalias() += cache.x * da_z.transpose();
  grads.Uz.noalias() += cache.h_prev * da_z.transpose();
  grads.bz.noalias() += da_z.rowwise().sum();
  dh_prev.noalias() += p.Uz * da_z;

  if (dx) {
    dx->noalias() = p.Wz * da_z;
    dx->noalias() += p.Wr * da_r;
    dx->noalias() += p.Wh * da_h;
  }
  return dh_prev;
}

template <typename T>
struct GruSequenceCache {
  std::vector<GruStepCache<T>> steps;
  std::vector<Eigen::Index> lengths;  // per-column true step counts
};

template <typename T>
struct GruSequenceResult {
  MatX<T> h_final;  // H x B
  GruSequenceCache<T> cache;
};

/// Runs the cell over xs[0..T) from h0 = 0 with per-column masking: column
/// i stops updating after lengths[i] steps, so h_final(:, i) is the state
/// after exactly lengths[i] cell applications. With want_cache = false the
/// cache is left empty (forward-only mode).
template <typename T>
GruSequenceResult<T> gru_sequence_forward(const std::vector<MatX<T>>& xs,
                                          const std::vector<Eigen::Index>& lengths,
                                          const GruParams<T>& p,
                                          bool want_cache = true) {
  if (xs.empty()) throw InvalidArgument("gru_sequence_forward: empty sequence");
  const auto batch = xs[0].cols();
  if (static_cast<Eigen::Index>(lengths.size()) != batch)
    throw InvalidArgument("gru_sequence_forward: lengths/batch mismatch");
  const auto steps = static_cast<Eigen::Index>(xs.size());
  for (auto len : lengths) {
    if (len < 1) throw InvalidArgument("gru_sequence_forward: zero true length");
    if (len > steps)
      throw InvalidArgument("gru_sequence_forward: true length exceeds sequence");
  }

  GruSequenceResult<T> out;
  out.cache.lengths = lengths;
  if (want_cache) out.cache.steps.reserve(static_cast<std::size_t>(steps));

  MatX<T> h = MatX<T>::Zero(p.hidden_dim(), batch);
  for (Eigen::Index t = 0; t < steps; ++t) {
    auto [h_new, cache] = gru_cell_forward(xs[static_cast<std::size_t>(t)], h, p);
    // Masked columns keep their previous state.
    for (Eigen::Index i = 0; i < batch; ++i)
      if (t >= lengths[static_cast<std::size_t>(i)]) h_new.col(i) = h.col(i);
    cache.h = h_new;
    h = std::move(h_new);
    if (want_cache) out.cache.steps.push_back(std::move(cache));
  }
  out.h_final = std::move(h);
  return out;
}

/// Single-sample form per the module contract.
template <typename T>
GruSequenceResult<T> gru_sequence_forward(const std::vector<VecX<T>>& xs,
                                          Eigen::Index true_length,
                                          const GruParams<T>& p,
                                          bool want_cache = true) {
  std::vector<MatX<T>> cols;
  cols.reserve(xs.size());
  for (const auto& x : xs) cols.emplace_back(x);
  return gru_sequence_forward(cols, std::vector<Eigen::Index>{true_length}, p,
                              want_cache);
}

/// BPTT with a gradient injected at every step: dh_steps[t] is the direct
/// dL/dh_t contribution (e.g. from a following layer consuming the whole
/// output sequence). Returns parameter gradients; when dxs is non-null it
/// receives dL/dxs[t] for every step (zero at masked-out positions).
/// Throws when the forward ran cache-less.
template <typename T>
GruGrads<T> gru_sequence_backward_per_step(const std::vector<MatX<T>>& dh_steps,
                                           const GruSequenceCache<T>& cache,
                                           const GruParams<T>& p,
                                           std::vector<MatX<T>>* dxs = nullptr) {
  if (cache.steps.empty())
    throw InvalidArgument("gru_sequence_backward: missing forward cache");
  if (dh_steps.size() != cache.steps.size())
    throw InvalidArgument("gru_sequence_backward: gradient/step count mismatch");
  const auto steps = static_cast<Eigen::Index>(cache.steps.size());
  const auto batch = dh_steps.back().cols();

  GruGrads<T> grads = GruGrads<T>::zeros_like(p);
  if (dxs) dxs->assign(static_cast<std::size_t>(steps), MatX<T>());

  MatX<T> dh = MatX<T>::Zero(dh_steps.back().rows(), batch);
  MatX<T> dx_step;
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const auto& step = cache.steps[static_cast<std::size_t>(t)];
    dh += dh_steps[static_cast<std::size_t>(t)];
    // Split incoming dh into the cell path (active columns) and the
    // identity bypass (masked columns).
    MatX<T> dh_cell = dh;
    MatX<T> dh_bypass = MatX<T>::Zero(dh.rows(), batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
      if (t >= cache.lengths[static_cast<std::size_t>(i)]) {
        dh_bypass.col(i) = dh.col(i);
        dh_cell.col(i).setZero();
      }
    }
    MatX<T> dh_prev =
        gru_cell_backward(dh_cell, step, p, grads, dxs ? &dx_step : nullptr);
    if (dxs) (*dxs)[static_cast<std::size_t>(t)] = dx_step;
    dh = dh_prev + dh_bypass;
  }
  return grads;
}

/// BPTT with dL/dh supplied only at the final state.
template <typename T>
GruGrads<T> gru_sequence_backward(const MatX<T>& dh_final,
                                  const GruSequenceCache<T>& cache,
                                  const GruParams<T>& p,
                                  std::vector<MatX<T>>* dxs = nullptr) {
  if (cache.steps.empty())
    throw InvalidArgument("gru_sequence_backward: missing forward cache");
  std::vector<MatX<T>> dh_steps(
      cache.steps.size(),
      MatX<T>::Zero(dh_final.rows(), dh_final.cols()));
  dh_steps.back() = dh_final;
  return gru_sequence_backward_per_step(dh_steps, cache, p, dxs);
}

// ---------------------------------------------------------------------------
// Dense softmax head + cross-entropy
// ---------------------------------------------------------------------------

template <typename T>
struct DenseParams {
  MatX<T> W;  // H x K
  VecX<T> b;  // K

  Eigen::Index input_dim() const { return W.rows(); }
  Eigen::Index classes() const { return W.cols(); }

  static DenseParams glorot(Eigen::Index h, Eigen::Index k, Rng& rng) {
    DenseParams p;
    p.W.resize(h, k);
    glorot_fill(p.W, h, k, rng);
    p.b = VecX<T>::Zero(k);
    return p;
  }
};

template <typename T>
struct DenseGrads {
  MatX<T> W;
  VecX<T> b;
};

/// softmax(W^T h + b) per column, max-subtracted for stability. Outputs are
/// strictly positive and each column sums to 1.
template <typename T>
MatX<T> dense_softmax_forward(const MatX<T>& h, const DenseParams<T>& p) {
  if (h.rows() != p.input_dim())
    throw InvalidArgument("dense_softmax_forward: shape mismatch");
  MatX<T> logits = (p.W.transpose() * h).colwise() + p.b;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    auto col = logits.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp();
    col /= col.sum();
  }
  return logits;
}

template <typename T>
VecX<T> dense_softmax_forward(const VecX<T>& h, const DenseParams<T>& p) {
  return VecX<T>(dense_softmax_forward(MatX<T>(h), p).col(0));
}

/// -ln of the probability assigned to the true class, floored at 1e-12.
template <typename T>
T cross_entropy(const VecX<T>& probs, Eigen::Index true_class) {
  if (true_class < 0 || true_class >= probs.size())
    throw InvalidArgument("cross_entropy: class out of range");
  return -std::log(std::max(probs(true_class), T(1e-12)));
}

/// Mean cross-entropy over the batch (columns of probs).
template <typename T>
T cross_entropy_mean(const MatX<T>& probs, const std::vector<Eigen::Index>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.cols())
    throw InvalidArgument("cross_entropy_mean: labels/batch mismatch");
  T total = T(0);
  for (Eigen::Index i = 0; i < probs.cols(); ++i)
    total += cross_entropy<T>(probs.col(i), labels[static_cast<std::size_t>(i)]);
  return total / static_cast<T>(probs.cols());
}

/// Adjoint of softmax∘cross-entropy through the dense layer:
/// dlogits = scale * (probs - onehot). Returns gradients and writes dL/dh
/// into dh (accumulating, so several heads can share one representation).
template <typename T>
DenseGrads<T> dense_softmax_ce_backward(const MatX<T>& probs,
                                        const std::vector<Eigen::Index>& labels,
                                        const MatX<T>& h, const DenseParams<T>& p,
                                        T scale, MatX<T>& dh) {
  MatX<T> dlogits = probs;
  for (Eigen::Index i = 0; i < dlogits.cols(); ++i)
    dlogits(labels[static_cast<std::size_t>(i)], i) -= T(1);
  dlogits *= scale;

  DenseGrads<T> g;
  g.W.noalias() = h * dlogits.transpose();
  g.b = dlogits.rowwise().sum();
  dh.noalias() += p.W * dlogits;
  return g;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// 1/(1-rate), so the expected mask value is 1 and inference needs no
/// rescaling (inference simply skips masking). Entries are drawn in
/// column-major order from `rng`.
template <typename T>
MatX<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw InvalidArgument("dropout rate must be in [0, 1)");
  MatX<T> mask(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      mask(r, c) = rng.uniform() < rate ? T(0) : keep_scale;
  return mask;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators for one parameter tensor. The caller updates each
/// tensor exactly once per optimizer step, so the per-tensor counter t
/// equals the global step count.
template <typename M>
struct AdamState {
  M m, v;
  long t = 0;
  AdamConfig hyper;

  static AdamState zeros_like(const M& param, const AdamConfig& hyper) {
    AdamState s;
    s.m = M::Zero(param.rows(), param.cols());
    s.v = M::Zero(param.rows(), param.cols());
    s.hyper = hyper;
    return s;
  }
};

/// One bias-corrected Adam step:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename M>
void adam_update(M& theta, const M& grad, AdamState<M>& state) {
  using T = typename M::Scalar;
  if (theta.rows() != grad.rows() || theta.cols() != grad.cols())
    throw InvalidArgument("adam_update: shape mismatch");
  ++state.t;
  const T b1 = static_cast<T>(state.hyper.beta1);
  const T b2 = static_cast<T>(state.hyper.beta2);
  state.m = b1 * state.m + (T(1) - b1) * grad;
  state.v = b2 * state.v + (T(1) - b2) * grad.cwiseProduct(grad);
  const T corr1 = T(1) - static_cast<T>(std::pow(state.hyper.beta1, state.t));
  const T corr2 = T(1) - static_cast<T>(std::pow(state.hyper.beta2, state.t));
  const T lr = static_cast<T>(state.hyper.lr);
  const T eps = static_cast<T>(state.hyper.eps);
  theta.array() -= lr * (state.m.array() / corr1) /
                   ((state.v.array() / corr2).sqrt() + eps);
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient of loss_fn() with respect to theta; loss_fn
/// must read theta by reference. eps defaults to 1e-5 (64-bit use).
template <typename M, typename F>
M finite_difference_gradient(F&& loss_fn, M& theta,
                             typename M::Scalar eps = typename M::Scalar(1e-5)) {
  M grad(theta.rows(), theta.cols());
  for (Eigen::Index c = 0; c < theta.cols(); ++c) {
    for (Eigen::Index r = 0; r < theta.rows(); ++r) {
      auto saved = theta(r, c);
      theta(r, c) = saved + eps;
      auto up = loss_fn();
      theta(r, c) = saved - eps;
      auto down = loss_fn();
      theta(r, c) = saved;
      grad(r, c) = (up - down) / (2 * eps);
    }
  }
  return grad;
}

}  // namespace sigrec::nn
