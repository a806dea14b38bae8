// SPDX-License-Identifier: Apache-2.0
#include "srt/batching.hpp"

#include <algorithm>
#include <string>

namespace srt {

namespace {

// Fisher-Yates with a stream derived from (seed, epoch): every rank of a run
// lands on the identical permutation for a given epoch.
void shuffle_order(std::vector<std::uint64_t>& order, std::uint64_t seed, std::uint64_t epoch) {
  Rng rng(mix64(seed, mix64(0x657068ULL, epoch)));
  for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
}

}  // namespace

GeneratorState gen_init(const Dataset& ds, Split split, std::size_t batch, std::size_t window,
                        std::size_t horizon, std::uint64_t seed, std::size_t rank,
                        std::size_t world, bool frozen) {
  if (batch == 0 || window == 0 || horizon == 0 || world == 0 || rank >= world) {
    throw ConfigError("gen_init: bad batch/window/horizon/rank/world");
  }
  GeneratorState st;
  st.ds = &ds;
  st.case_index = ds.case_indexes(split);
  if (st.case_index.empty()) throw ConfigError("gen_init: split has no cases");

  st.timesteps = ds.timesteps();
  for (std::size_t ci : st.case_index) {
    if (ds.cases[ci].field.shape()[0] != st.timesteps ||
        ds.cases[ci].field.shape()[1] != ds.cells()) {
      throw ConfigError("gen_init: case " + std::to_string(ci) +
                        " has mismatched extents; all cases must share [T, cells, components]");
    }
  }
  st.spc = samples_per_case(st.timesteps, window, horizon);
  st.total = st.spc * st.case_index.size();
  st.batch = batch;
  st.window = window;
  st.horizon = horizon;
  st.rank = rank;
  st.world = world;
  st.seed = seed;
  st.epoch = 0;
  st.frozen = frozen;
  if (st.total < batch * world) {
    throw ConfigError("gen_init: split yields " + std::to_string(st.total) +
                      " samples, fewer than one global batch of " +
                      std::to_string(batch * world));
  }

  st.order.resize(st.total);
  for (std::size_t i = 0; i < st.total; ++i) st.order[i] = i;
  shuffle_order(st.order, st.seed, st.epoch);  // init performs the first shuffle
  return st;
}

std::size_t batches_per_epoch(const GeneratorState& st) {
  return st.total / (st.batch * st.world);
}

std::vector<std::uint64_t> gen_batch_ids(const GeneratorState& st, std::size_t k) {
  if (k >= batches_per_epoch(st)) {
    throw ConfigError("gen_batch_ids: batch index " + std::to_string(k) + " out of range (" +
                      std::to_string(batches_per_epoch(st)) + " per epoch)");
  }
  std::vector<std::uint64_t> ids(st.batch);
  const std::size_t base = k * st.batch * st.world;
  for (std::size_t j = 0; j < st.batch; ++j) ids[j] = st.order[base + j * st.world + st.rank];
  return ids;
}

void gen_on_epoch_end(GeneratorState& st) {
  st.epoch += 1;
  if (st.frozen) return;
  shuffle_order(st.order, st.seed, st.epoch);
}

}  // namespace srt
