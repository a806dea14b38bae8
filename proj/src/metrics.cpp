// SPDX-License-Identifier: Apache-2.0
#include "srt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace srt {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y, const char* who) {
  if (x.size() != y.size()) {
    throw DimError(std::string(who) + ": series lengths differ: " + std::to_string(x.size()) +
                   " vs " + std::to_string(y.size()));
  }
  if (x.size() < 2) {
    throw DimError(std::string(who) + ": need at least 2 points, got " +
                   std::to_string(x.size()));
  }
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "pearson");
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw DimError("pearson: zero variance, correlation undefined");
  }
  // Multiply the variances before the square root: keeps exact cases exact
  // (e.g. sqrt(2*2) == 2) and avoids an extra rounding.
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    // Positions i..j (0-based) share the value; assign the mean 1-based rank.
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "spearman");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

double rmse(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "rmse");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double hist_r2(std::span<const double> x, std::span<const double> y, std::size_t bins,
               double* raw_pct) {
  check_pair(x, y, "hist_r2");
  if (bins < 2) throw DimError("hist_r2: need at least 2 bins");

  double lo = x[0], hi = x[0];
  for (double v : x) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : y) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) throw DimError("hist_r2: shared range is a single point, bins undefined");

  std::vector<double> hx(bins, 0.0), hy(bins, 0.0);
  const double scale = static_cast<double>(bins) / (hi - lo);
  auto bin_of = [&](double v) {
    auto b = static_cast<std::size_t>((v - lo) * scale);
    return b >= bins ? bins - 1 : b;  // v == hi lands in the last bin
  };
  for (double v : x) hx[bin_of(v)] += 1.0;
  for (double v : y) hy[bin_of(v)] += 1.0;

  double mean = 0.0;
  for (double c : hx) mean += c;
  mean /= static_cast<double>(bins);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    ss_res += (hy[b] - hx[b]) * (hy[b] - hx[b]);
    ss_tot += (hx[b] - mean) * (hx[b] - mean);
  }
  if (ss_tot <= 0.0) {
    throw DimError("hist_r2: reference histogram has zero variance, r2 undefined");
  }
  const double pct = 100.0 * (1.0 - ss_res / ss_tot);
  if (raw_pct) *raw_pct = pct;
  return std::max(0.0, pct);
}

void scatter_export(std::span<const double> x, std::span<const double> y,
                    const std::string& path) {
  check_pair(x, y, "scatter_export");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("scatter_export: cannot open " + path);
  out << "cfd,ai\n";
  char line[80];
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::snprintf(line, sizeof line, "%.9g,%.9g\n", x[i], y[i]);
    out << line;
  }
  out.flush();
  if (!out) throw FormatError("scatter_export: write failed for " + path);
}

MetricsReport compute_report(std::span<const double> x, std::span<const double> y,
                             std::size_t bins) {
  MetricsReport r;
  r.pearson = pearson(x, y);
  r.spearman = spearman(x, y);
  r.rmse = rmse(x, y);
  r.hist_r2_pct = hist_r2(x, y, bins, &r.hist_r2_raw);
  r.n = x.size();
  return r;
}

}  // namespace srt
