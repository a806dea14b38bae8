// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "srt/datagen.hpp"

using srt::assign_splits;
using srt::build_dataset;
using srt::CaseSeries;
using srt::ConfigError;
using srt::Dataset;
using srt::FormatError;
using srt::generate_case;
using srt::kComponents;
using srt::normalize;
using srt::read_dataset;
using srt::Split;
using srt::write_dataset;

namespace {

constexpr std::pair<double, double> kQ1Range{0.1666, 0.3389};
constexpr std::pair<double, double> kQ2Range{0.3333, 0.4443};

std::array<std::size_t, 3> split_sizes(const std::vector<Split>& s) {
  std::array<std::size_t, 3> n{};
  for (Split x : s) ++n[static_cast<std::size_t>(x)];
  return n;
}

std::filesystem::path temp_file(const char* stem) {
  static int counter = 0;
  return std::filesystem::temp_directory_path() /
         (std::string(stem) + "_" + std::to_string(++counter) + ".srt");
}

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  REQUIRE(out.good());
}

bool bitwise_equal(const srt::Tensor<float>& a, const srt::Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_SUITE("datagen") {
  TEST_CASE("splits follow the 80/20 rule with validation carved from train") {
    auto s = assign_splits(131);
    auto n = split_sizes(s);
    CHECK(n[static_cast<std::size_t>(Split::train)] == 84);  // 104 total train incl. val
    CHECK(n[static_cast<std::size_t>(Split::val)] == 20);
    CHECK(n[static_cast<std::size_t>(Split::test)] == 27);

    // Block layout: train cases first, then validation, then test.
    for (std::size_t i = 0; i < 84; ++i) CHECK(s[i] == Split::train);
    for (std::size_t i = 84; i < 104; ++i) CHECK(s[i] == Split::val);
    for (std::size_t i = 104; i < 131; ++i) CHECK(s[i] == Split::test);
  }

  TEST_CASE("split sizes at small counts") {
    auto n10 = split_sizes(assign_splits(10));  // train_total 8, of which 1 val
    CHECK(n10 == std::array<std::size_t, 3>{7, 1, 2});
    auto n16 = split_sizes(assign_splits(16));  // train_total 12, of which 2 val
    CHECK(n16 == std::array<std::size_t, 3>{10, 2, 4});
    auto n5 = split_sizes(assign_splits(5));  // train_total 4, no val yet
    CHECK(n5 == std::array<std::size_t, 3>{4, 0, 1});
  }

  TEST_CASE("split is a partition covering every case") {
    for (std::size_t n : {5u, 10u, 16u, 131u}) {
      auto s = assign_splits(n);
      REQUIRE(s.size() == n);
      auto c = split_sizes(s);
      CHECK(c[0] + c[1] + c[2] == n);
      CHECK(c[0] > 0);
      CHECK(c[2] > 0);
    }
  }

  TEST_CASE("too few cases to split") {
    CHECK_THROWS_AS(assign_splits(0), ConfigError);
    CHECK_THROWS_AS(assign_splits(2), ConfigError);
  }

  TEST_CASE("generate_case is deterministic in its arguments") {
    auto a = generate_case(0.2, 0.4, 32, 24, 7);
    auto b = generate_case(0.2, 0.4, 32, 24, 7);
    CHECK(a.q1 == b.q1);
    CHECK(a.q2 == b.q2);
    CHECK(bitwise_equal(a.field, b.field));

    auto c = generate_case(0.2, 0.4, 32, 24, 8);
    CHECK_FALSE(bitwise_equal(a.field, c.field));
  }

  TEST_CASE("generate_case shape and finiteness") {
    auto cs = generate_case(0.25, 0.35, 17, 12, 3);
    REQUIRE(cs.field.shape() == std::vector<std::size_t>{12, 17, kComponents});
    for (std::size_t i = 0; i < cs.field.size(); ++i) CHECK(std::isfinite(cs.field[i]));
  }

  TEST_CASE("series settles into a quasi-steady tail") {
    const std::size_t T = 80, C = 48;
    auto cs = generate_case(0.3, 0.4, C, T, 11);

    float lo = cs.field[0], hi = cs.field[0];
    for (std::size_t i = 0; i < cs.field.size(); ++i) {
      lo = std::min(lo, cs.field[i]);
      hi = std::max(hi, cs.field[i]);
    }
    const double range = static_cast<double>(hi) - static_cast<double>(lo);
    REQUIRE(range > 0.0);

    // Last 10% of timesteps stay within 1% of range of the final snapshot.
    const std::size_t per_t = C * kComponents;
    const std::size_t tail_start = T - T / 10;
    double worst = 0.0;
    for (std::size_t t = tail_start; t < T; ++t) {
      for (std::size_t j = 0; j < per_t; ++j) {
        const double d = std::abs(static_cast<double>(cs.field[t * per_t + j]) -
                                  static_cast<double>(cs.field[(T - 1) * per_t + j]));
        worst = std::max(worst, d);
      }
    }
    CHECK(worst < 0.01 * range);

    // The transient is actually there: the first snapshot sits far off the tail.
    double early = 0.0;
    for (std::size_t j = 0; j < per_t; ++j) {
      early = std::max(early, std::abs(static_cast<double>(cs.field[j]) -
                                       static_cast<double>(cs.field[(T - 1) * per_t + j])));
    }
    CHECK(early > 10.0 * worst);
  }

  TEST_CASE("steady field responds to the flow parameters") {
    const std::size_t T = 60, C = 40;
    auto a = generate_case(0.17, 0.40, C, T, 5);
    auto b = generate_case(0.33, 0.40, C, T, 5);

    // Compare the settled tails so the difference reflects the steady field,
    // not the transient.
    const std::size_t per_t = C * kComponents;
    double diff = 0.0;
    for (std::size_t j = 0; j < per_t; ++j) {
      diff = std::max(diff, std::abs(static_cast<double>(a.field[(T - 1) * per_t + j]) -
                                     static_cast<double>(b.field[(T - 1) * per_t + j])));
    }
    CHECK(diff > 0.01);
  }

  TEST_CASE("seed only moves the noise term") {
    const std::size_t T = 30, C = 25;
    auto a = generate_case(0.2, 0.4, C, T, 1);
    auto b = generate_case(0.2, 0.4, C, T, 2);

    float lo = a.field[0], hi = a.field[0];
    for (std::size_t i = 0; i < a.field.size(); ++i) {
      lo = std::min(lo, a.field[i]);
      hi = std::max(hi, a.field[i]);
    }
    const double range = static_cast<double>(hi) - static_cast<double>(lo);

    double diff = 0.0;
    for (std::size_t i = 0; i < a.field.size(); ++i) {
      diff = std::max(diff,
                      std::abs(static_cast<double>(a.field[i]) - static_cast<double>(b.field[i])));
    }
    CHECK(diff > 0.0);
    CHECK(diff < 0.01 * range);  // noise amplitude is 1e-3 of the envelope
  }

  TEST_CASE("generate_case rejects degenerate extents") {
    CHECK_THROWS_AS(generate_case(0.2, 0.4, 0, 16, 1), ConfigError);
    CHECK_THROWS_AS(generate_case(0.2, 0.4, 16, 3, 1), ConfigError);
  }

  TEST_CASE("build_dataset extents, splits and determinism") {
    auto ds = build_dataset(16, 24, 40, kQ1Range, kQ2Range, 9);
    CHECK(ds.case_count() == 16);
    CHECK(ds.timesteps() == 40);
    CHECK(ds.cells() == 24);
    CHECK(ds.flat_dim() == 24 * kComponents);
    CHECK(split_sizes(ds.split) == std::array<std::size_t, 3>{10, 2, 4});

    auto again = build_dataset(16, 24, 40, kQ1Range, kQ2Range, 9);
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(ds.cases[i].q1 == again.cases[i].q1);
      CHECK(ds.cases[i].q2 == again.cases[i].q2);
      CHECK(bitwise_equal(ds.cases[i].field, again.cases[i].field));
    }

    // Parameter points are distinct across the grid.
    for (std::size_t i = 0; i < 16; ++i) {
      for (std::size_t j = i + 1; j < 16; ++j) {
        CHECK((ds.cases[i].q1 != ds.cases[j].q1 || ds.cases[i].q2 != ds.cases[j].q2));
      }
    }

    // Parameters honor the configured ranges.
    for (const auto& cs : ds.cases) {
      CHECK(cs.q1 >= kQ1Range.first - 1e-6);
      CHECK(cs.q1 <= kQ1Range.second + 1e-6);
      CHECK(cs.q2 >= kQ2Range.first - 1e-6);
      CHECK(cs.q2 <= kQ2Range.second + 1e-6);
    }

    CHECK_THROWS_AS(build_dataset(2, 8, 16, kQ1Range, kQ2Range, 1), ConfigError);
  }

  TEST_CASE("shuffle differs across seeds but splits stay fixed") {
    auto a = build_dataset(16, 8, 20, kQ1Range, kQ2Range, 1);
    auto b = build_dataset(16, 8, 20, kQ1Range, kQ2Range, 2);
    CHECK(a.split == b.split);
    bool any_moved = false;
    for (std::size_t i = 0; i < 16; ++i) {
      if (a.cases[i].q1 != b.cases[i].q1 || a.cases[i].q2 != b.cases[i].q2) any_moved = true;
    }
    CHECK(any_moved);
  }

  TEST_CASE("normalize zero-means the train split per component") {
    auto ds = build_dataset(16, 32, 48, kQ1Range, kQ2Range, 4);
    auto st = normalize(ds);
    REQUIRE(ds.norm.has_value());

    std::array<double, kComponents> sum{}, sumsq{};
    std::uint64_t n = 0;
    for (std::size_t ci : ds.case_indexes(Split::train)) {
      const auto& f = ds.cases[ci].field;
      for (std::size_t i = 0; i < f.size(); ++i) {
        const double v = f[i];
        sum[i % kComponents] += v;
        sumsq[i % kComponents] += v * v;
      }
      n += f.size() / kComponents;
    }
    for (std::size_t d = 0; d < kComponents; ++d) {
      const double mean = sum[d] / static_cast<double>(n);
      const double sd = std::sqrt(sumsq[d] / static_cast<double>(n) - mean * mean);
      CHECK(std::abs(mean) < 1e-5);
      CHECK(std::abs(sd - 1.0) < 1e-4);
      CHECK(st.stddev[d] > 0.0);
    }
  }

  TEST_CASE("normalize round-trips through the inverse transform") {
    auto ds = build_dataset(10, 16, 24, kQ1Range, kQ2Range, 6);
    auto raw = ds;  // keep pre-normalization values
    auto st = normalize(ds);
    for (std::size_t c = 0; c < ds.case_count(); ++c) {
      const auto& f = ds.cases[c].field;
      for (std::size_t i = 0; i < f.size(); ++i) {
        const double back = srt::invert_norm(st, i % kComponents, f[i]);
        const double orig = raw.cases[c].field[i];
        CHECK(std::abs(back - orig) <= 1e-5 * std::max(1.0, std::abs(orig)));
        const double fwd = srt::apply_norm(st, i % kComponents, orig);
        CHECK(fwd == doctest::Approx(static_cast<double>(f[i])).epsilon(1e-5));
      }
    }
  }

  TEST_CASE("normalization statistics ignore val and test data") {
    auto a = build_dataset(10, 12, 20, kQ1Range, kQ2Range, 3);
    auto b = a;
    for (std::size_t ci : b.case_indexes(Split::val)) {
      for (std::size_t i = 0; i < b.cases[ci].field.size(); ++i) b.cases[ci].field[i] += 100.0f;
    }
    for (std::size_t ci : b.case_indexes(Split::test)) {
      for (std::size_t i = 0; i < b.cases[ci].field.size(); ++i) b.cases[ci].field[i] += 100.0f;
    }
    auto sa = normalize(a);
    auto sb = normalize(b);
    for (std::size_t d = 0; d < kComponents; ++d) {
      CHECK(sa.mean[d] == sb.mean[d]);
      CHECK(sa.stddev[d] == sb.stddev[d]);
    }
  }

  TEST_CASE("constant component raises a degenerate-spread error") {
    Dataset ds;
    ds.cases.resize(3);
    ds.split = {Split::train, Split::val, Split::test};
    for (auto& cs : ds.cases) {
      cs.field = srt::Tensor<float>({6, 4, kComponents});
      for (std::size_t i = 0; i < cs.field.size(); ++i) {
        // Component 0 constant, others varying.
        cs.field[i] = (i % kComponents == 0) ? 5.0f : static_cast<float>(i % 17);
      }
    }
    CHECK_THROWS_WITH_AS(normalize(ds), doctest::Contains("zero spread"), ConfigError);
  }

  TEST_CASE("dataset file round trip is byte-identical") {
    auto ds = build_dataset(5, 8, 16, kQ1Range, kQ2Range, 12);
    normalize(ds);

    auto p1 = temp_file("roundtrip_a");
    auto p2 = temp_file("roundtrip_b");
    write_dataset(ds, p1.string());
    auto back = read_dataset(p1.string());

    CHECK(back.case_count() == ds.case_count());
    CHECK(back.timesteps() == ds.timesteps());
    CHECK(back.cells() == ds.cells());
    REQUIRE(back.norm.has_value());
    CHECK(back.split == ds.split);
    for (std::size_t i = 0; i < ds.case_count(); ++i) {
      CHECK(back.cases[i].q1 == ds.cases[i].q1);
      CHECK(back.cases[i].q2 == ds.cases[i].q2);
      CHECK(bitwise_equal(back.cases[i].field, ds.cases[i].field));
    }

    write_dataset(back, p2.string());
    CHECK(slurp(p1) == slurp(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
  }

  TEST_CASE("round trip without a normalization trailer") {
    auto ds = build_dataset(5, 6, 12, kQ1Range, kQ2Range, 2);
    auto p = temp_file("no_trailer");
    write_dataset(ds, p.string());
    auto back = read_dataset(p.string());
    CHECK_FALSE(back.norm.has_value());
    std::filesystem::remove(p);
  }

  TEST_CASE("truncated file reports the byte offset and returns nothing") {
    auto ds = build_dataset(5, 6, 12, kQ1Range, kQ2Range, 2);
    auto p = temp_file("truncated");
    write_dataset(ds, p.string());
    auto bytes = slurp(p);

    // Cut inside the field payload.
    std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + 44 + 5 * 8 + 100);
    dump(p, cut);
    CHECK_THROWS_WITH_AS(read_dataset(p.string()), doctest::Contains("byte offset"), FormatError);

    // Cut inside the header.
    std::vector<unsigned char> head(bytes.begin(), bytes.begin() + 20);
    dump(p, head);
    CHECK_THROWS_AS(read_dataset(p.string()), FormatError);
    std::filesystem::remove(p);
  }

  TEST_CASE("corrupted magic and version are rejected") {
    auto ds = build_dataset(5, 4, 8, kQ1Range, kQ2Range, 2);
    auto p = temp_file("magic");
    write_dataset(ds, p.string());
    auto bytes = slurp(p);

    auto bad_magic = bytes;
    bad_magic[0] ^= 0xFF;
    dump(p, bad_magic);
    CHECK_THROWS_WITH_AS(read_dataset(p.string()), doctest::Contains("bad magic at byte offset 0"),
                         FormatError);

    auto bad_version = bytes;
    bad_version[8] = 99;
    dump(p, bad_version);
    CHECK_THROWS_WITH_AS(read_dataset(p.string()), doctest::Contains("version"), FormatError);
    std::filesystem::remove(p);
  }

  TEST_CASE("header codec carries full-scale extents") {
    srt::DatasetHeader h;
    h.cases = 131;
    h.timesteps = 420;
    h.cells = 125565;
    auto bytes = srt::encode_dataset_header(h);
    CHECK(bytes.size() == 44);
    auto back = srt::parse_dataset_header(bytes);
    CHECK(back.version == srt::kDatasetVersion);
    CHECK(back.cases == 131);
    CHECK(back.timesteps == 420);
    CHECK(back.cells == 125565);
    CHECK(back.components == kComponents);
  }
}
