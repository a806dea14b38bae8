// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "srt/error.hpp"

namespace srt {

// All metrics run in double precision on flattened paired series.

double pearson(std::span<const double> x, std::span<const double> y);

// Ranks with ties replaced by the average of the tied positions (1-based).
std::vector<double> average_ranks(std::span<const double> x);

// Pearson correlation of the rank vectors.
double spearman(std::span<const double> x, std::span<const double> y);

double rmse(std::span<const double> x, std::span<const double> y);

// Histogram similarity: both series are counted into `bins` equal-width bins
// over the shared range [min(x u y), max(x u y)], then
//   r2 = 1 - sum((hy - hx)^2) / sum((hx - mean(hx))^2).
// Returned as a percentage clamped at 0; the raw (unclamped) percentage is
// written to raw_pct when given. A degenerate denominator or a zero-width
// shared range raises an error.
double hist_r2(std::span<const double> x, std::span<const double> y, std::size_t bins = 64,
               double* raw_pct = nullptr);

// CSV with header "cfd,ai"; values are printed with enough digits to
// round-trip single precision.
void scatter_export(std::span<const double> x, std::span<const double> y,
                    const std::string& path);

struct MetricsReport {
  double pearson = 0.0;
  double spearman = 0.0;
  double rmse = 0.0;
  double hist_r2_pct = 0.0;  // clamped at 0
  double hist_r2_raw = 0.0;  // unclamped percentage
  std::size_t n = 0;
};

MetricsReport compute_report(std::span<const double> x, std::span<const double> y,
                             std::size_t bins = 64);

}  // namespace srt
