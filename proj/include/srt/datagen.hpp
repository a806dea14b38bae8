// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic quasi-steady flow series and the on-disk dataset format.
//
// Each case is parameterized by two physical knobs (q1, q2) and evolves as
//   field[t] = steady(cell; q1, q2) + transient(cell) * exp(-t / tau) + noise
// with tau = timesteps / 5, so the series settles into a quasi-steady state
// well before the final timestep.
//
// File layout (all little-endian):
//   magic   "SRTDATA1"                      8 bytes
//   version u32 (currently 1)
//   extents u64 x4: cases, timesteps, cells, components
//   per-case q1, q2 as f32, in case order
//   field data f32, [case][timestep][cell][component]
//   optional trailer: 6 x f32 per-component normalization stats
//                     (mean x3, std x3)

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "srt/error.hpp"
#include "srt/tensor.hpp"

namespace srt {

inline constexpr char kDatasetMagic[8] = {'S', 'R', 'T', 'D', 'A', 'T', 'A', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kComponents = 3;

enum class Split { train, val, test };

struct NormStats {
  std::array<double, kComponents> mean{};
  std::array<double, kComponents> stddev{};
};

struct CaseSeries {
  float q1 = 0.0f;
  float q2 = 0.0f;
  Tensor<float> field;  // [timesteps, cells, components]
};

struct Dataset {
  std::vector<CaseSeries> cases;
  std::vector<Split> split;          // per case, derived from the case count
  std::optional<NormStats> norm;     // set once normalize() has run

  std::size_t case_count() const { return cases.size(); }
  std::size_t timesteps() const { return cases.empty() ? 0 : cases[0].field.shape()[0]; }
  std::size_t cells() const { return cases.empty() ? 0 : cases[0].field.shape()[1]; }
  std::size_t flat_dim() const { return cells() * kComponents; }

  std::vector<std::size_t> case_indexes(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }
};

// 80% of cases train, the rounding remainder test; 20% of the train block is
// carved off as validation. Derived from the case count alone, so a reread
// file lands on the same assignment.
std::vector<Split> assign_splits(std::size_t n_cases);

// Deterministic in (q1, q2, seed): same inputs, bitwise-identical series.
CaseSeries generate_case(double q1, double q2, std::size_t cells, std::size_t timesteps,
                         std::uint64_t seed);

// (q1, q2) pairs are laid out on a grid over the given ranges, then case
// order is shuffled with the seed before splits are assigned.
Dataset build_dataset(std::size_t n_cases, std::size_t cells, std::size_t timesteps,
                      std::pair<double, double> q1_range, std::pair<double, double> q2_range,
                      std::uint64_t seed);

// Per-component z-score over the train split only; the same transform is then
// applied to every case. Returns the stats and records them on the dataset.
// A component with zero spread raises an error.
NormStats normalize(Dataset& ds);

inline double apply_norm(const NormStats& n, std::size_t component, double v) {
  return (v - n.mean[component]) / n.stddev[component];
}
inline double invert_norm(const NormStats& n, std::size_t component, double v) {
  return v * n.stddev[component] + n.mean[component];
}

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

// Header codec, exposed so format tests can exercise full-scale extents
// without materializing the payload.
struct DatasetHeader {
  std::uint32_t version = kDatasetVersion;
  std::uint64_t cases = 0;
  std::uint64_t timesteps = 0;
  std::uint64_t cells = 0;
  std::uint64_t components = kComponents;
};

std::vector<unsigned char> encode_dataset_header(const DatasetHeader& h);
DatasetHeader parse_dataset_header(const std::vector<unsigned char>& bytes);

}  // namespace srt
