// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sequence-to-sequence regression model:
//   encoder LSTM -> repeat final state H times -> decoder LSTM
//   -> per-step dense head (ReLU) -> per-step dense output (linear).
// Forward consumes one window [W, F] and emits [H, F]. Backpropagation
// through time is written out by hand; there is no autodiff.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "srt/error.hpp"
#include "srt/rng.hpp"
#include "srt/tensor.hpp"

namespace srt {

struct ModelDims {
  std::size_t flat_dim = 0;  // cells * components, the F axis
  std::size_t window = 3;
  std::size_t horizon = 1;
  std::size_t encoder_units = 200;
  std::size_t decoder_units = 200;
  std::size_t head_units = 100;

  void validate() const {
    if (flat_dim == 0 || window == 0 || horizon == 0 || encoder_units == 0 ||
        decoder_units == 0 || head_units == 0) {
      throw DimError("model dims: all extents must be positive");
    }
  }

  bool operator==(const ModelDims&) const = default;
};

inline std::uint64_t lstm_param_count(std::uint64_t in, std::uint64_t units) {
  return 4 * (in * units + units * units + units);
}

inline std::uint64_t dense_param_count(std::uint64_t in, std::uint64_t out) {
  return in * out + out;
}

// Closed-form parameter count; never allocates, so it is safe to ask about
// full-scale configurations (flat_dim in the hundreds of thousands).
inline std::uint64_t param_count(const ModelDims& d) {
  return lstm_param_count(d.flat_dim, d.encoder_units) +
         lstm_param_count(d.encoder_units, d.decoder_units) +
         dense_param_count(d.decoder_units, d.head_units) +
         dense_param_count(d.head_units, d.flat_dim);
}

// Gate order along the 4u axis is i | f | g | o:
// input gate, forget gate, cell candidate, output gate.
template <typename S>
struct LstmLayer {
  Tensor<S> kernel;     // [in, 4u]
  Tensor<S> recurrent;  // [u, 4u]
  Tensor<S> bias;       // [4u]

  std::size_t units() const { return bias.size() / 4; }
  std::size_t in_dim() const { return kernel.rows(); }
};

template <typename S>
struct DenseLayer {
  Tensor<S> weight;  // [in, out]
  Tensor<S> bias;    // [out]
};

template <typename S>
struct ModelParams {
  ModelDims dims;
  LstmLayer<S> encoder;
  LstmLayer<S> decoder;
  DenseLayer<S> head;
  DenseLayer<S> out;

  // Canonical tensor order. Checkpointing, gradient flattening and the
  // optimizer all iterate through here, so the order is fixed for good.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("encoder/kernel", encoder.kernel);
    fn("encoder/recurrent", encoder.recurrent);
    fn("encoder/bias", encoder.bias);
    fn("decoder/kernel", decoder.kernel);
    fn("decoder/recurrent", decoder.recurrent);
    fn("decoder/bias", decoder.bias);
    fn("head/weight", head.weight);
    fn("head/bias", head.bias);
    fn("output/weight", out.weight);
    fn("output/bias", out.bias);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const char* name, Tensor<S>& t) { fn(name, static_cast<const Tensor<S>&>(t)); });
  }

  std::vector<Tensor<S>*> tensor_list() {
    return {&encoder.kernel, &encoder.recurrent, &encoder.bias,
            &decoder.kernel, &decoder.recurrent, &decoder.bias,
            &head.weight,    &head.bias,         &out.weight,
            &out.bias};
  }
  std::vector<const Tensor<S>*> tensor_list() const {
    return {&encoder.kernel, &encoder.recurrent, &encoder.bias,
            &decoder.kernel, &decoder.recurrent, &decoder.bias,
            &head.weight,    &head.bias,         &out.weight,
            &out.bias};
  }
};

// Gradients are shape-congruent with the parameters.
template <typename S>
using Gradients = ModelParams<S>;

template <typename S>
Gradients<S> zero_gradients(const ModelParams<S>& p) {
  Gradients<S> g;
  g.dims = p.dims;
  g.encoder.kernel = Tensor<S>::zeros_like(p.encoder.kernel);
  g.encoder.recurrent = Tensor<S>::zeros_like(p.encoder.recurrent);
  g.encoder.bias = Tensor<S>::zeros_like(p.encoder.bias);
  g.decoder.kernel = Tensor<S>::zeros_like(p.decoder.kernel);
  g.decoder.recurrent = Tensor<S>::zeros_like(p.decoder.recurrent);
  g.decoder.bias = Tensor<S>::zeros_like(p.decoder.bias);
  g.head.weight = Tensor<S>::zeros_like(p.head.weight);
  g.head.bias = Tensor<S>::zeros_like(p.head.bias);
  g.out.weight = Tensor<S>::zeros_like(p.out.weight);
  g.out.bias = Tensor<S>::zeros_like(p.out.bias);
  return g;
}

template <typename S>
void accumulate(Gradients<S>& into, const Gradients<S>& from) {
  auto dst = into.tensor_list();
  auto src = from.tensor_list();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    Tensor<S>& t = *dst[k];
    const Tensor<S>& o = *src[k];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += o[i];
  }
}

namespace detail {

// y[out] = x[in] . M[in, out] -- deterministic: k ascends for each j.
template <typename S>
void matvec(const Tensor<S>& m, std::span<const S> x, std::span<S> y) {
  const std::size_t in = m.rows(), out = m.cols();
  for (std::size_t j = 0; j < out; ++j) y[j] = S(0);
  for (std::size_t k = 0; k < in; ++k) {
    const S xk = x[k];
    const S* row = &m.at(k, 0);
    for (std::size_t j = 0; j < out; ++j) y[j] += xk * row[j];
  }
}

// y[in] = M[in, out] . d[out] (multiply by the transpose).
template <typename S>
void matvec_t(const Tensor<S>& m, std::span<const S> d, std::span<S> y) {
  const std::size_t in = m.rows(), out = m.cols();
  for (std::size_t k = 0; k < in; ++k) {
    const S* row = &m.at(k, 0);
    S acc = S(0);
    for (std::size_t j = 0; j < out; ++j) acc += row[j] * d[j];
    y[k] = acc;
  }
}

// G[in, out] += x[in] outer d[out].
template <typename S>
void outer_acc(Tensor<S>& g, std::span<const S> x, std::span<const S> d) {
  const std::size_t in = g.rows(), out = g.cols();
  for (std::size_t k = 0; k < in; ++k) {
    const S xk = x[k];
    S* row = &g.at(k, 0);
    for (std::size_t j = 0; j < out; ++j) row[j] += xk * d[j];
  }
}

template <typename S>
S sigmoid_s(S v) {
  return S(1) / (S(1) + std::exp(-v));
}

}  // namespace detail

// One LSTM cell step with everything the backward pass needs.
template <typename S>
struct LstmStepCache {
  std::vector<S> x;       // input at this step
  std::vector<S> h_prev;  // incoming hidden state
  std::vector<S> c_prev;  // incoming cell state
  std::vector<S> i, f, g, o;  // post-activation gates
  std::vector<S> c;       // new cell state
  std::vector<S> tanh_c;  // tanh of new cell state
  std::vector<S> h;       // new hidden state
};

template <typename S>
void lstm_cell(const LstmLayer<S>& layer, std::span<const S> x, std::span<const S> h_prev,
               std::span<const S> c_prev, LstmStepCache<S>& cache) {
  const std::size_t u = layer.units();
  if (x.size() != layer.in_dim() || h_prev.size() != u || c_prev.size() != u) {
    throw DimError("lstm_cell: input/state extents do not match layer [" +
                   std::to_string(layer.in_dim()) + " -> " + std::to_string(u) + "]");
  }
  std::vector<S> z(4 * u), zr(4 * u);
  detail::matvec(layer.kernel, x, std::span<S>(z));
  detail::matvec(layer.recurrent, h_prev, std::span<S>(zr));
  for (std::size_t j = 0; j < 4 * u; ++j) z[j] += zr[j] + layer.bias[j];

  cache.x.assign(x.begin(), x.end());
  cache.h_prev.assign(h_prev.begin(), h_prev.end());
  cache.c_prev.assign(c_prev.begin(), c_prev.end());
  cache.i.resize(u);
  cache.f.resize(u);
  cache.g.resize(u);
  cache.o.resize(u);
  cache.c.resize(u);
  cache.tanh_c.resize(u);
  cache.h.resize(u);
  for (std::size_t j = 0; j < u; ++j) {
    cache.i[j] = detail::sigmoid_s(z[j]);
    cache.f[j] = detail::sigmoid_s(z[u + j]);
    cache.g[j] = std::tanh(z[2 * u + j]);
    cache.o[j] = detail::sigmoid_s(z[3 * u + j]);
    cache.c[j] = cache.f[j] * c_prev[j] + cache.i[j] * cache.g[j];
    cache.tanh_c[j] = std::tanh(cache.c[j]);
    cache.h[j] = cache.o[j] * cache.tanh_c[j];
  }
}

// Public single-step API: (x, h, c) -> (h', c').
template <typename S>
std::pair<Tensor<S>, Tensor<S>> lstm_step(const LstmLayer<S>& layer, const Tensor<S>& x,
                                          const Tensor<S>& h, const Tensor<S>& c) {
  LstmStepCache<S> cache;
  lstm_cell(layer, x.data(), h.data(), c.data(), cache);
  return {Tensor<S>({layer.units()}, cache.h), Tensor<S>({layer.units()}, cache.c)};
}

template <typename S>
struct ForwardCache {
  std::vector<LstmStepCache<S>> enc;   // one per window step
  std::vector<LstmStepCache<S>> dec;   // one per horizon step
  std::vector<std::vector<S>> head_z;  // pre-ReLU head activations per step
  std::vector<std::vector<S>> head_a;  // post-ReLU head activations per step
  Tensor<S> pred;                      // [H, F]
};

// Window [W, F] in, prediction [H, F] out. The encoder's final hidden state
// is repeated as the decoder input at every horizon step.
template <typename S>
ForwardCache<S> forward(const ModelParams<S>& p, const Tensor<S>& window) {
  p.dims.validate();
  const std::size_t W = p.dims.window, F = p.dims.flat_dim, H = p.dims.horizon;
  const std::size_t eu = p.dims.encoder_units, du = p.dims.decoder_units;
  const std::size_t hu = p.dims.head_units;
  if (window.rank() != 2 || window.shape()[0] != W || window.shape()[1] != F) {
    throw DimError("forward: window shape " + Tensor<S>::shape_str(window.shape()) +
                   ", expected [" + std::to_string(W) + "," + std::to_string(F) + "]");
  }

  ForwardCache<S> fc;
  fc.enc.resize(W);
  std::vector<S> h(eu, S(0)), c(eu, S(0));
  for (std::size_t t = 0; t < W; ++t) {
    lstm_cell(p.encoder, std::span<const S>(&window.at(t, 0), F), std::span<const S>(h),
              std::span<const S>(c), fc.enc[t]);
    h = fc.enc[t].h;
    c = fc.enc[t].c;
  }
  const std::vector<S> repeat = h;  // encoder summary, fed at every decoder step

  fc.dec.resize(H);
  fc.head_z.resize(H);
  fc.head_a.resize(H);
  fc.pred = Tensor<S>({H, F});
  std::vector<S> hd(du, S(0)), cd(du, S(0));
  for (std::size_t j = 0; j < H; ++j) {
    lstm_cell(p.decoder, std::span<const S>(repeat), std::span<const S>(hd),
              std::span<const S>(cd), fc.dec[j]);
    hd = fc.dec[j].h;
    cd = fc.dec[j].c;

    std::vector<S> z(hu);
    detail::matvec(p.head.weight, std::span<const S>(hd), std::span<S>(z));
    for (std::size_t k = 0; k < hu; ++k) z[k] += p.head.bias[k];
    fc.head_z[j] = z;
    std::vector<S> a(hu);
    for (std::size_t k = 0; k < hu; ++k) a[k] = z[k] > S(0) ? z[k] : S(0);
    fc.head_a[j] = a;

    std::vector<S> y(F);
    detail::matvec(p.out.weight, std::span<const S>(a), std::span<S>(y));
    for (std::size_t k = 0; k < F; ++k) fc.pred.at(j, k) = y[k] + p.out.bias[k];
  }
  return fc;
}

namespace detail {

// Backward through one LSTM step. d_h/d_c are the incoming state cotangents;
// on return they hold the cotangents for the previous step's state, and d_x
// receives the input cotangent.
template <typename S>
void lstm_cell_backward(const LstmLayer<S>& layer, const LstmStepCache<S>& sc,
                        std::vector<S>& d_h, std::vector<S>& d_c, std::span<S> d_x,
                        LstmLayer<S>& grads) {
  const std::size_t u = layer.units();
  std::vector<S> dz(4 * u);
  for (std::size_t j = 0; j < u; ++j) {
    const S d_o = d_h[j] * sc.tanh_c[j];
    const S dc = d_c[j] + d_h[j] * sc.o[j] * (S(1) - sc.tanh_c[j] * sc.tanh_c[j]);
    const S d_i = dc * sc.g[j];
    const S d_f = dc * sc.c_prev[j];
    const S d_g = dc * sc.i[j];
    d_c[j] = dc * sc.f[j];
    dz[j] = d_i * sc.i[j] * (S(1) - sc.i[j]);
    dz[u + j] = d_f * sc.f[j] * (S(1) - sc.f[j]);
    dz[2 * u + j] = d_g * (S(1) - sc.g[j] * sc.g[j]);
    dz[3 * u + j] = d_o * sc.o[j] * (S(1) - sc.o[j]);
  }
  outer_acc(grads.kernel, std::span<const S>(sc.x), std::span<const S>(dz));
  outer_acc(grads.recurrent, std::span<const S>(sc.h_prev), std::span<const S>(dz));
  for (std::size_t j = 0; j < 4 * u; ++j) grads.bias[j] += dz[j];
  matvec_t(layer.kernel, std::span<const S>(dz), d_x);
  std::vector<S> d_hp(u);
  matvec_t(layer.recurrent, std::span<const S>(dz), std::span<S>(d_hp));
  d_h = std::move(d_hp);
}

}  // namespace detail

// Exact gradients of the forward map contracted with d_pred, for every
// parameter tensor. Optionally reports the cotangent that reaches the
// encoder's repeated final state (index 0 of d_repeat is the decoder's
// first-step input cotangent).
template <typename S>
Gradients<S> backward(const ModelParams<S>& p, const ForwardCache<S>& fc,
                      const Tensor<S>& d_pred, Tensor<S>* d_repeat_out = nullptr,
                      Tensor<S>* d_enc_state_out = nullptr) {
  const std::size_t F = p.dims.flat_dim, H = p.dims.horizon, W = p.dims.window;
  const std::size_t eu = p.dims.encoder_units, du = p.dims.decoder_units;
  const std::size_t hu = p.dims.head_units;
  if (!d_pred.same_shape(fc.pred)) {
    throw DimError("backward: d_pred shape " + Tensor<S>::shape_str(d_pred.shape()) +
                   " does not match prediction " + Tensor<S>::shape_str(fc.pred.shape()));
  }

  Gradients<S> g = zero_gradients(p);
  Tensor<S> d_repeat({H, eu});

  // Dense head and output, per horizon step (independent across steps).
  std::vector<std::vector<S>> d_hd(H, std::vector<S>(du, S(0)));
  for (std::size_t j = H; j-- > 0;) {
    std::span<const S> dy(&d_pred.at(j, 0), F);
    detail::outer_acc(g.out.weight, std::span<const S>(fc.head_a[j]), dy);
    for (std::size_t k = 0; k < F; ++k) g.out.bias[k] += dy[k];
    std::vector<S> d_a(hu);
    detail::matvec_t(p.out.weight, dy, std::span<S>(d_a));
    // ReLU applies to the head layer only; its subgradient at 0 is 0.
    std::vector<S> d_z(hu);
    for (std::size_t k = 0; k < hu; ++k) d_z[k] = fc.head_z[j][k] > S(0) ? d_a[k] : S(0);
    detail::outer_acc(g.head.weight, std::span<const S>(fc.dec[j].h), std::span<const S>(d_z));
    for (std::size_t k = 0; k < hu; ++k) g.head.bias[k] += d_z[k];
    detail::matvec_t(p.head.weight, std::span<const S>(d_z), std::span<S>(d_hd[j]));
  }

  // Decoder BPTT, newest step first.
  std::vector<S> dh(du, S(0)), dc(du, S(0));
  for (std::size_t j = H; j-- > 0;) {
    for (std::size_t k = 0; k < du; ++k) dh[k] += d_hd[j][k];
    detail::lstm_cell_backward(p.decoder, fc.dec[j], dh, dc,
                               std::span<S>(&d_repeat.at(j, 0), eu), g.decoder);
  }

  // The repeat of the encoder state fans out to every decoder step, so its
  // cotangents sum; with H = 1 this sum is the single decoder-input cotangent.
  std::vector<S> dhe(eu, S(0)), dce(eu, S(0));
  for (std::size_t j = H; j-- > 0;)
    for (std::size_t k = 0; k < eu; ++k) dhe[k] += d_repeat.at(j, k);
  if (d_repeat_out) *d_repeat_out = d_repeat;
  if (d_enc_state_out) *d_enc_state_out = Tensor<S>({eu}, dhe);

  // Encoder BPTT. Input cotangents are dropped: windows are data.
  std::vector<S> d_x(F);
  for (std::size_t t = W; t-- > 0;) {
    detail::lstm_cell_backward(p.encoder, fc.enc[t], dhe, dce, std::span<S>(d_x), g.encoder);
  }
  return g;
}

// Glorot-uniform kernels (bound sqrt(6 / (rows + cols))), zero biases except
// the forget-gate slice, which starts at one. Plain uniform init is also used
// for the recurrent kernels. Fill order is fixed, so a seed pins every weight.
template <typename S>
ModelParams<S> init_params(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  ModelParams<S> p;
  p.dims = dims;
  Rng rng(mix64(seed, 0x6d6f64656cULL));

  auto glorot = [&rng](std::size_t rows, std::size_t cols) {
    Tensor<S> t({rows, cols});
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<S>(rng.uniform(-bound, bound));
    return t;
  };
  auto lstm_init = [&](std::size_t in, std::size_t u) {
    LstmLayer<S> l;
    l.kernel = glorot(in, 4 * u);
    l.recurrent = glorot(u, 4 * u);
    l.bias = Tensor<S>({4 * u});
    for (std::size_t j = 0; j < u; ++j) l.bias[u + j] = S(1);  // forget gate
    return l;
  };

  p.encoder = lstm_init(dims.flat_dim, dims.encoder_units);
  p.decoder = lstm_init(dims.encoder_units, dims.decoder_units);
  p.head.weight = glorot(dims.decoder_units, dims.head_units);
  p.head.bias = Tensor<S>({dims.head_units});
  p.out.weight = glorot(dims.head_units, dims.flat_dim);
  p.out.bias = Tensor<S>({dims.flat_dim});
  return p;
}

}  // namespace srt
