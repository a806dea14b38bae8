// SPDX-License-Identifier: Apache-2.0
#pragma once

// Stateless windowed sampling in the style of a keras.utils.Sequence:
// init builds and shuffles a global index array, get_item materializes one
// mini-batch, on_epoch_end reshuffles. Sample ids enumerate every window
// that fits inside a single case: id -> (case slot, start offset) via
// div/mod by the per-case sample count. Windows never straddle cases.
//
// Sharding: every rank holds the same shuffled array (same seed, same epoch
// stream); rank r of world P consumes positions congruent to r mod P. The
// per-rank batch size stays fixed, so the global batch grows with P, and the
// final partial batch of an epoch is dropped.

#include <cstdint>
#include <vector>

#include "srt/datagen.hpp"
#include "srt/error.hpp"
#include "srt/rng.hpp"
#include "srt/tensor.hpp"

namespace srt {

inline std::size_t samples_per_case(std::size_t timesteps, std::size_t window,
                                    std::size_t horizon) {
  if (timesteps < window + horizon) {
    throw ConfigError("samples_per_case: timesteps " + std::to_string(timesteps) +
                      " shorter than window + horizon " + std::to_string(window + horizon));
  }
  return timesteps - (window + horizon) + 1;
}

struct GeneratorState {
  const Dataset* ds = nullptr;
  std::vector<std::size_t> case_index;  // dataset case slots in this split
  std::size_t timesteps = 0;
  std::size_t spc = 0;    // samples per case
  std::size_t total = 0;  // spc * case count
  std::size_t batch = 0;  // per-rank batch size
  std::size_t window = 0;
  std::size_t horizon = 0;
  std::size_t rank = 0;
  std::size_t world = 1;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;  // shuffle-stream index
  bool frozen = false;      // sanity mode: keep the epoch-0 permutation
  std::vector<std::uint64_t> order;  // permutation of sample ids
};

template <typename S>
struct MiniBatch {
  Tensor<S> observations;  // [B, W, F]
  Tensor<S> targets;       // [B, H, F]
  std::vector<std::uint64_t> ids;
};

GeneratorState gen_init(const Dataset& ds, Split split, std::size_t batch, std::size_t window,
                        std::size_t horizon, std::uint64_t seed, std::size_t rank,
                        std::size_t world, bool frozen = false);

// Full batches only; the tail of the permutation (shorter than batch * world
// positions) is not consumed this epoch.
std::size_t batches_per_epoch(const GeneratorState& st);

// Sample ids feeding rank `st.rank` for batch k of the current epoch.
std::vector<std::uint64_t> gen_batch_ids(const GeneratorState& st, std::size_t k);

void gen_on_epoch_end(GeneratorState& st);

// id -> (case slot within the split, start offset).
inline std::pair<std::size_t, std::size_t> decode_sample(const GeneratorState& st,
                                                         std::uint64_t id) {
  return {static_cast<std::size_t>(id / st.spc), static_cast<std::size_t>(id % st.spc)};
}

// Materialize one mini-batch in the training precision. Observation rows are
// the W timesteps starting at the sample offset; target rows are the next H.
template <typename S>
MiniBatch<S> gen_get_item(const GeneratorState& st, std::size_t k) {
  const std::size_t F = st.ds->flat_dim();
  MiniBatch<S> mb;
  mb.ids = gen_batch_ids(st, k);
  mb.observations = Tensor<S>({st.batch, st.window, F});
  mb.targets = Tensor<S>({st.batch, st.horizon, F});
  for (std::size_t b = 0; b < st.batch; ++b) {
    const auto [slot, off] = decode_sample(st, mb.ids[b]);
    const auto& field = st.ds->cases[st.case_index[slot]].field;
    for (std::size_t w = 0; w < st.window; ++w)
      for (std::size_t j = 0; j < F; ++j)
        mb.observations[(b * st.window + w) * F + j] = static_cast<S>(field[(off + w) * F + j]);
    for (std::size_t h = 0; h < st.horizon; ++h)
      for (std::size_t j = 0; j < F; ++j)
        mb.targets[(b * st.horizon + h) * F + j] =
            static_cast<S>(field[(off + st.window + h) * F + j]);
  }
  return mb;
}

}  // namespace srt
