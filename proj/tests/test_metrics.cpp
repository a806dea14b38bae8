// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "srt/metrics.hpp"
#include "srt/rng.hpp"

using srt::average_ranks;
using srt::compute_report;
using srt::DimError;
using srt::hist_r2;
using srt::pearson;
using srt::rmse;
using srt::spearman;

namespace {

// Brute-force references, deliberately structured differently from the
// library (two square roots, O(n^2) rank counting, no incremental state).

double ref_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n;
  for (std::size_t i = 0; i < y.size(); ++i) my += y[i] / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / (std::sqrt(sxx) * std::sqrt(syy));
}

std::vector<double> ref_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0.0, equal = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) less += 1.0;
      if (x[j] == x[i]) equal += 1.0;
    }
    r[i] = less + 0.5 * (equal + 1.0);
  }
  return r;
}

double ref_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return ref_pearson(ref_ranks(x), ref_ranks(y));
}

double ref_rmse(const std::vector<double>& x, const std::vector<double>& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double ref_hist_r2_raw(const std::vector<double>& x, const std::vector<double>& y,
                       std::size_t bins) {
  double lo = x[0], hi = x[0];
  for (double v : x) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : y) lo = std::min(lo, v), hi = std::max(hi, v);
  std::vector<double> hx(bins, 0.0), hy(bins, 0.0);
  // Same edge convention as the implementation: quantized inputs can land
  // exactly on a bin boundary, where a different rounding order would flip
  // the bin and shift the histogram by a whole count.
  const double scale = static_cast<double>(bins) / (hi - lo);
  for (double v : x) {
    auto b = static_cast<std::size_t>((v - lo) * scale);
    hx[std::min(b, bins - 1)] += 1.0;
  }
  for (double v : y) {
    auto b = static_cast<std::size_t>((v - lo) * scale);
    hy[std::min(b, bins - 1)] += 1.0;
  }
  const double mean = static_cast<double>(x.size()) / static_cast<double>(bins);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    ss_res += (hy[b] - hx[b]) * (hy[b] - hx[b]);
    ss_tot += (hx[b] - mean) * (hx[b] - mean);
  }
  return 100.0 * (1.0 - ss_res / ss_tot);
}

bool close(double a, double b, double tol = 1e-9) {
  return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("hand case: spearman of one transposition is one half") {
    std::vector<double> x{1.0, 2.0, 3.0};
    std::vector<double> y{2.0, 1.0, 3.0};
    CHECK(spearman(x, y) == 0.5);  // exact: 1 / sqrt(2 * 2)
  }

  TEST_CASE("hand case: tied values share the average rank") {
    auto r = average_ranks(std::vector<double>{1.0, 1.0, 2.0});
    REQUIRE(r.size() == 3);
    CHECK(r[0] == 1.5);
    CHECK(r[1] == 1.5);
    CHECK(r[2] == 3.0);

    auto all_tied = average_ranks(std::vector<double>{4.0, 4.0, 4.0, 4.0});
    for (double v : all_tied) CHECK(v == 2.5);
  }

  TEST_CASE("hand case: rmse of a single miss of 2 over 3 points") {
    std::vector<double> pred{1.0, 1.0, 0.0};
    std::vector<double> target{1.0, 1.0, 2.0};
    CHECK(rmse(pred, target) == std::sqrt(4.0 / 3.0));
  }

  TEST_CASE("perfect agreement scores perfectly") {
    std::vector<double> x{0.3, -1.2, 2.4, 0.0, 5.5, -2.2, 1.1, 0.7};
    auto rep = compute_report(x, x, 4);
    CHECK(rep.pearson == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.spearman == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.rmse == 0.0);
    CHECK(rep.hist_r2_pct == 100.0);
    CHECK(rep.hist_r2_raw == 100.0);
    CHECK(rep.n == x.size());
  }

  TEST_CASE("histogram r2 clamps the reported percentage at zero") {
    std::vector<double> x{0.0, 0.0, 0.0, 1.0};
    std::vector<double> y{1.0, 1.0, 1.0, 0.0};
    double raw = 0.0;
    const double pct = hist_r2(x, y, 2, &raw);
    CHECK(pct == 0.0);
    CHECK(raw == -300.0);  // ss_res 8 vs ss_tot 2
  }

  TEST_CASE("degenerate inputs raise") {
    std::vector<double> flat{2.0, 2.0, 2.0};
    std::vector<double> ramp{1.0, 2.0, 3.0};
    CHECK_THROWS_WITH_AS(pearson(flat, ramp), doctest::Contains("zero variance"), DimError);
    CHECK_THROWS_WITH_AS(pearson(ramp, flat), doctest::Contains("zero variance"), DimError);
    CHECK_THROWS_AS(spearman(flat, flat), DimError);

    std::vector<double> a{1.0, 2.0};
    std::vector<double> b{1.0, 2.0, 3.0};
    CHECK_THROWS_WITH_AS(rmse(a, b), doctest::Contains("lengths differ"), DimError);
    std::vector<double> single{1.0};
    CHECK_THROWS_WITH_AS(rmse(single, single), doctest::Contains("at least 2"), DimError);

    // Single shared point: bins undefined.
    CHECK_THROWS_WITH_AS(hist_r2(flat, flat, 4, nullptr), doctest::Contains("single point"),
                         DimError);
    // Perfectly uniform reference histogram: zero variance.
    std::vector<double> uniform{0.0, 1.0, 2.0, 3.0};
    CHECK_THROWS_WITH_AS(hist_r2(uniform, uniform, 2, nullptr), doctest::Contains("zero variance"),
                         DimError);
    CHECK_THROWS_AS(hist_r2(ramp, ramp, 1, nullptr), DimError);
  }

  TEST_CASE("all four metrics track brute-force references on random pairs") {
    srt::Rng rng(20260814);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + rng.below(999);  // lengths 2..1000
      std::vector<double> x(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.uniform(-5.0, 5.0);
        // Correlated with noise; every third trial quantized to force ties.
        y[i] = 0.7 * x[i] + rng.uniform(-2.0, 2.0);
        if (trial % 3 == 0) {
          x[i] = std::round(x[i] * 4.0) / 4.0;
          y[i] = std::round(y[i] * 4.0) / 4.0;
        }
      }
      CAPTURE(trial);
      CAPTURE(n);
      CHECK(close(pearson(x, y), ref_pearson(x, y)));
      CHECK(close(spearman(x, y), ref_spearman(x, y)));
      CHECK(close(rmse(x, y), ref_rmse(x, y)));
      if (n >= 3) {
        double raw = 0.0;
        try {
          hist_r2(x, y, 8, &raw);
        } catch (const DimError&) {
          continue;  // perfectly flat reference histogram, r2 undefined
        }
        CHECK(close(raw, ref_hist_r2_raw(x, y, 8)));
      }
    }
  }

  TEST_CASE("report bundles the same numbers as the standalone calls") {
    srt::Rng rng(7);
    std::vector<double> x(257), y(257);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = rng.uniform(-1.0, 1.0);
      y[i] = 0.9 * x[i] + rng.uniform(-0.1, 0.1);
    }
    auto rep = compute_report(x, y, 16);
    CHECK(rep.pearson == pearson(x, y));
    CHECK(rep.spearman == spearman(x, y));
    CHECK(rep.rmse == rmse(x, y));
    double raw = 0.0;
    CHECK(rep.hist_r2_pct == hist_r2(x, y, 16, &raw));
    CHECK(rep.hist_r2_raw == raw);
    CHECK(rep.n == 257);
  }

  TEST_CASE("scatter export writes a cfd,ai header and 9-digit rows") {
    std::vector<double> x{0.125, -3.75, 1e-7};
    std::vector<double> y{1.0, 2.5, -0.000244140625};
    auto path = std::filesystem::temp_directory_path() / "srt_scatter_test.csv";
    srt::scatter_export(x, y, path.string());

    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "cfd,ai");
    for (std::size_t i = 0; i < x.size(); ++i) {
      REQUIRE(std::getline(in, line));
      double a = 0.0, b = 0.0;
      REQUIRE(std::sscanf(line.c_str(), "%lf,%lf", &a, &b) == 2);
      CHECK(a == doctest::Approx(x[i]).epsilon(1e-9));
      CHECK(b == doctest::Approx(y[i]).epsilon(1e-9));
    }
    CHECK_FALSE(std::getline(in, line));
    std::filesystem::remove(path);

    std::vector<double> shorter{1.0, 2.0};
    CHECK_THROWS_AS(srt::scatter_export(x, shorter, "/tmp/never_written.csv"), DimError);
  }
}
