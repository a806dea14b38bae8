// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "srt/error.hpp"
#include "srt/model.hpp"
#include "srt/tensor.hpp"

namespace srt {

// Mean absolute error over all entries, and its subgradient with respect to
// the prediction: sign(pred - target) / n, with sign(0) = 0.
template <typename S>
struct MaeResult {
  double loss = 0.0;
  Tensor<S> d_pred;
};

template <typename S>
MaeResult<S> mae_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  if (!pred.same_shape(target)) {
    throw DimError("mae_loss: shapes differ: " + Tensor<S>::shape_str(pred.shape()) + " vs " +
                   Tensor<S>::shape_str(target.shape()));
  }
  if (pred.size() == 0) throw DimError("mae_loss: empty tensors");
  MaeResult<S> r;
  r.d_pred = Tensor<S>::zeros_like(pred);
  const S inv_n = S(1) / static_cast<S>(pred.size());
  S acc = S(0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const S d = pred[i] - target[i];
    acc += d > S(0) ? d : -d;
    r.d_pred[i] = d > S(0) ? inv_n : (d < S(0) ? -inv_n : S(0));
  }
  r.loss = static_cast<double>(acc * inv_n);
  return r;
}

// Adam with bias correction; epsilon sits outside the square root:
//   m <- b1 m + (1-b1) g        mhat = m / (1 - b1^t)
//   v <- b2 v + (1-b2) g^2      vhat = v / (1 - b2^t)
//   theta <- theta - lr * mhat / (sqrt(vhat) + eps)
template <typename S>
struct AdamState {
  double lr = 0.00025;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::uint64_t step = 0;
  Gradients<S> m;
  Gradients<S> v;

  static AdamState like(const ModelParams<S>& p, double lr = 0.00025, double beta1 = 0.9,
                        double beta2 = 0.999, double epsilon = 1e-7) {
    AdamState s;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    s.m = zero_gradients(p);
    s.v = zero_gradients(p);
    return s;
  }
};

template <typename S>
void adam_step(ModelParams<S>& params, const Gradients<S>& grads, AdamState<S>& st) {
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const S b1 = static_cast<S>(st.beta1), b2 = static_cast<S>(st.beta2);
  const S one_m_b1 = static_cast<S>(1.0 - st.beta1), one_m_b2 = static_cast<S>(1.0 - st.beta2);
  const S inv_bc1 = static_cast<S>(1.0 / bc1), inv_bc2 = static_cast<S>(1.0 / bc2);
  const S lr = static_cast<S>(st.lr), eps = static_cast<S>(st.epsilon);

  auto pt = params.tensor_list();
  auto mt = st.m.tensor_list();
  auto vt = st.v.tensor_list();
  auto gt = grads.tensor_list();
  for (std::size_t k = 0; k < pt.size(); ++k) {
    Tensor<S>& theta = *pt[k];
    Tensor<S>& m = *mt[k];
    Tensor<S>& v = *vt[k];
    const Tensor<S>& g = *gt[k];
    if (!theta.same_shape(g)) {
      throw DimError("adam_step: gradient shape " + Tensor<S>::shape_str(g.shape()) +
                     " does not match parameter " + Tensor<S>::shape_str(theta.shape()));
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + one_m_b1 * g[i];
      v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
      const S mhat = m[i] * inv_bc1;
      const S vhat = v[i] * inv_bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace srt
