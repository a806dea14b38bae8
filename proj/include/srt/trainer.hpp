// SPDX-License-Identifier: Apache-2.0
#pragma once
// Mini-batch gradients and the synchronous data-parallel training step.
//
// Per-sample gradients are folded with a balanced pairwise tree (split at
// (lo + hi) / 2) instead of a running left-to-right sum. The group
// all-reduce merges per-rank partial sums pairwise in rank order, so for a
// power-of-two world the union batch folded serially and the per-rank
// batches folded then all-reduced perform the same floating-point additions
// in the same order. Dividing by the local shard size only after the
// cross-rank mean keeps the two paths aligned, because the all-reduce's own
// division by the (power-of-two) world size commutes with rounding. That is
// what makes serial / distributed equivalence a bitwise property in double
// precision rather than an approximation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "srt/batching.hpp"
#include "srt/collective.hpp"
#include "srt/error.hpp"
#include "srt/model.hpp"
#include "srt/optim.hpp"

namespace srt {

template <typename S>
struct BatchGrad {
  Gradients<S> grads;  // pairwise-tree sum over samples, not yet divided
  S loss_sum = S(0);   // matching sum of per-sample mean absolute errors
};

namespace detail {

template <typename S>
Tensor<S> sample_slice(const Tensor<S>& t, std::size_t b) {
  const std::size_t rows = t.shape()[1], cols = t.shape()[2];
  Tensor<S> out({rows, cols});
  const std::size_t base = b * rows * cols;
  std::copy(t.data().begin() + base, t.data().begin() + base + rows * cols, out.data().begin());
  return out;
}

template <typename S>
S fold_grad_range(const ModelParams<S>& p, const MiniBatch<S>& mb, std::size_t lo, std::size_t hi,
                  Gradients<S>& out) {
  if (hi - lo == 1) {
    const Tensor<S> x = sample_slice(mb.observations, lo);
    const ForwardCache<S> fc = forward(p, x);
    const MaeResult<S> m = mae_loss(fc.pred, sample_slice(mb.targets, lo));
    out = backward(p, fc, m.d_pred);
    return static_cast<S>(m.loss);
  }
  const std::size_t mid = (lo + hi) / 2;
  const S left = fold_grad_range(p, mb, lo, mid, out);
  Gradients<S> right_g;
  const S right = fold_grad_range(p, mb, mid, hi, right_g);
  accumulate(out, right_g);
  return left + right;
}

template <typename S>
S fold_loss_range(const ModelParams<S>& p, const MiniBatch<S>& mb, std::size_t lo,
                  std::size_t hi) {
  if (hi - lo == 1) {
    const Tensor<S> x = sample_slice(mb.observations, lo);
    const ForwardCache<S> fc = forward(p, x);
    return static_cast<S>(mae_loss(fc.pred, sample_slice(mb.targets, lo)).loss);
  }
  const std::size_t mid = (lo + hi) / 2;
  return fold_loss_range(p, mb, lo, mid) + fold_loss_range(p, mb, mid, hi);
}

}  // namespace detail

template <typename S>
BatchGrad<S> batch_backward(const ModelParams<S>& p, const MiniBatch<S>& mb) {
  const std::size_t n = mb.observations.shape().empty() ? 0 : mb.observations.shape()[0];
  if (n == 0) throw DimError("batch_backward: empty batch");
  BatchGrad<S> bg;
  bg.loss_sum = detail::fold_grad_range(p, mb, 0, n, bg.grads);
  return bg;
}

// Forward-only counterpart for validation passes.
template <typename S>
S batch_loss_sum(const ModelParams<S>& p, const MiniBatch<S>& mb) {
  const std::size_t n = mb.observations.shape().empty() ? 0 : mb.observations.shape()[0];
  if (n == 0) throw DimError("batch_loss_sum: empty batch");
  return detail::fold_loss_range(p, mb, 0, n);
}

struct StepStats {
  double loss = 0.0;  // mean per-sample MAE across every contributing rank
};

// One synchronous step: local tree-folded gradient, group mean (the loss sum
// rides along as one extra buffer element), rescale to the shard size, Adam.
// With group == nullptr or world 1 this is plain serial SGD on the batch.
template <typename S>
StepStats train_step(ModelParams<S>& params, AdamState<S>& opt, const MiniBatch<S>& batch,
                     WorkerGroup* group = nullptr) {
  BatchGrad<S> bg = batch_backward(params, batch);
  const std::size_t n_local = batch.observations.shape()[0];

  auto tensors = bg.grads.tensor_list();
  std::size_t total = 0;
  for (const auto* t : tensors) total += t->size();
  std::vector<S> flat(total + 1);
  std::size_t off = 0;
  for (const auto* t : tensors) {
    std::copy(t->data().begin(), t->data().end(), flat.begin() + static_cast<long>(off));
    off += t->size();
  }
  flat[total] = bg.loss_sum;

  if (group != nullptr && group->world() > 1) group->allreduce_mean(std::span<S>(flat));

  const S inv = S(1) / static_cast<S>(n_local);
  for (auto& v : flat) v *= inv;

  off = 0;
  for (auto* t : tensors) {
    std::copy(flat.begin() + static_cast<long>(off),
              flat.begin() + static_cast<long>(off + t->size()), t->data().begin());
    off += t->size();
  }

  adam_step(params, bg.grads, opt);

  StepStats st;
  st.loss = static_cast<double>(flat[total]);
  return st;
}

}  // namespace srt
