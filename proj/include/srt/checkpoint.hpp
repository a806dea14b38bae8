// SPDX-License-Identifier: Apache-2.0
#pragma once

// Model checkpoint format (all little-endian):
//   magic "SRTCKPT1"                                   8 bytes
//   u64 x8: flat_dim, window, horizon, encoder_units,
//           decoder_units, head_units, precision flag
//           (0 = f32, 1 = f64), tensor count
//   per tensor, in a fixed canonical order:
//     u64 name length, UTF-8 name bytes,
//     u64 rank, u64 extents[rank],
//     raw IEEE-754 payload in the file precision
//
// Checkpoints carry the parameters, the full optimizer state (first and
// second moments plus the step counter) and the normalization stats, so a
// run can resume deterministically and evaluation can undo the normalization.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "srt/datagen.hpp"
#include "srt/error.hpp"
#include "srt/model.hpp"
#include "srt/optim.hpp"

namespace srt {

inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'T', 'C', 'K', 'P', 'T', '1'};

struct TensorRecord {
  std::string name;
  std::vector<std::uint64_t> extents;
  std::vector<double> values;  // held in double, written in the file precision

  std::uint64_t count() const {
    std::uint64_t n = 1;
    for (auto e : extents) n *= e;
    return n;
  }
};

struct CheckpointFile {
  ModelDims dims;
  bool f64 = false;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

void write_checkpoint(const CheckpointFile& ck, const std::string& path);
CheckpointFile read_checkpoint(const std::string& path);

// Bundled training state <-> checkpoint records.
template <typename S>
struct TrainingState {
  ModelParams<S> params;
  AdamState<S> opt;
  NormStats norm;
};

template <typename S>
CheckpointFile pack_checkpoint(const TrainingState<S>& ts) {
  CheckpointFile ck;
  ck.dims = ts.params.dims;
  ck.f64 = sizeof(S) == 8;

  auto push = [&ck](const std::string& name, const Tensor<S>& t) {
    TensorRecord r;
    r.name = name;
    for (std::size_t e : t.shape()) r.extents.push_back(e);
    r.values.reserve(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) r.values.push_back(static_cast<double>(t[i]));
    ck.tensors.push_back(std::move(r));
  };

  ts.params.for_each_tensor([&](const char* name, const Tensor<S>& t) { push(name, t); });
  ts.opt.m.for_each_tensor(
      [&](const char* name, const Tensor<S>& t) { push(std::string("adam/m/") + name, t); });
  ts.opt.v.for_each_tensor(
      [&](const char* name, const Tensor<S>& t) { push(std::string("adam/v/") + name, t); });

  TensorRecord step;
  step.name = "adam/step";
  step.extents = {1};
  step.values = {static_cast<double>(ts.opt.step)};
  ck.tensors.push_back(std::move(step));

  TensorRecord mean, sd;
  mean.name = "norm/mean";
  mean.extents = {kComponents};
  sd.name = "norm/std";
  sd.extents = {kComponents};
  for (std::size_t d = 0; d < kComponents; ++d) {
    mean.values.push_back(ts.norm.mean[d]);
    sd.values.push_back(ts.norm.stddev[d]);
  }
  ck.tensors.push_back(std::move(mean));
  ck.tensors.push_back(std::move(sd));
  return ck;
}

template <typename S>
TrainingState<S> unpack_checkpoint(const CheckpointFile& ck, double lr = 0.00025) {
  if (ck.f64 != (sizeof(S) == 8)) {
    throw FormatError(std::string("checkpoint precision is ") + (ck.f64 ? "f64" : "f32") +
                      ", requested " + (sizeof(S) == 8 ? "f64" : "f32"));
  }
  TrainingState<S> ts;
  ts.params.dims = ck.dims;
  ts.params = init_params<S>(ck.dims, 0);  // shapes only; values overwritten below
  ts.opt = AdamState<S>::like(ts.params, lr);

  auto pull = [&ck](const std::string& name, Tensor<S>& t) {
    const TensorRecord* r = ck.find(name);
    if (!r) throw FormatError("checkpoint: missing tensor " + name);
    if (r->count() != t.size()) {
      throw FormatError("checkpoint: tensor " + name + " has " + std::to_string(r->count()) +
                        " values, expected " + std::to_string(t.size()));
    }
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(r->values[i]);
  };

  ts.params.for_each_tensor([&](const char* name, Tensor<S>& t) { pull(name, t); });
  ts.opt.m.for_each_tensor(
      [&](const char* name, Tensor<S>& t) { pull(std::string("adam/m/") + name, t); });
  ts.opt.v.for_each_tensor(
      [&](const char* name, Tensor<S>& t) { pull(std::string("adam/v/") + name, t); });

  const TensorRecord* step = ck.find("adam/step");
  if (!step || step->values.size() != 1) throw FormatError("checkpoint: missing adam/step");
  ts.opt.step = static_cast<std::uint64_t>(step->values[0]);

  const TensorRecord* mean = ck.find("norm/mean");
  const TensorRecord* sd = ck.find("norm/std");
  if (!mean || !sd || mean->values.size() != kComponents || sd->values.size() != kComponents) {
    throw FormatError("checkpoint: missing normalization stats");
  }
  for (std::size_t d = 0; d < kComponents; ++d) {
    ts.norm.mean[d] = mean->values[d];
    ts.norm.stddev[d] = sd->values[d];
  }
  return ts;
}

}  // namespace srt
