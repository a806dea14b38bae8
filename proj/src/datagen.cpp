// SPDX-License-Identifier: Apache-2.0
#include "srt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "srt/bytes.hpp"
#include "srt/rng.hpp"

namespace srt {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Smooth per-component spatial modes. u is the cell coordinate in [0, 1).
double steady_value(double u, std::size_t d, double q1, double q2) {
  static constexpr double kBase[3] = {3.0, 2.0, 4.0};
  static constexpr double pBase[3] = {0.00, 0.25, 0.50};
  static constexpr double kQ1[3] = {2.0, 3.0, 2.0};
  static constexpr double pQ1[3] = {0.13, 0.31, 0.47};
  static constexpr double kQ2[3] = {4.0, 2.0, 3.0};
  static constexpr double pQ2[3] = {0.29, 0.11, 0.37};
  return std::sin(kTwoPi * (kBase[d] * u + pBase[d])) +
         q1 * std::sin(kTwoPi * (kQ1[d] * u + pQ1[d])) +
         q2 * std::cos(kTwoPi * (kQ2[d] * u + pQ2[d]));
}

double transient_value(double u, std::size_t d, double q1, double q2) {
  static constexpr double kAmp = 0.8;
  static constexpr double kT[3] = {1.0, 2.0, 3.0};
  static constexpr double pT[3] = {0.05, 0.55, 0.85};
  return kAmp * (0.5 + q1 + q2) * std::sin(kTwoPi * (kT[d] * u + pT[d]));
}

std::uint64_t case_seed(double q1, double q2, std::uint64_t seed) {
  const std::uint64_t a = std::bit_cast<std::uint64_t>(q1);
  const std::uint64_t b = std::bit_cast<std::uint64_t>(q2);
  return mix64(mix64(seed, a), b);
}

}  // namespace

std::vector<Split> assign_splits(std::size_t n) {
  if (n < 3) throw ConfigError("dataset: need at least 3 cases to split, got " + std::to_string(n));
  const std::size_t train_total = n * 4 / 5;        // floor(0.8 n)
  const std::size_t val = train_total / 5;          // floor(0.2 train)
  if (train_total == 0 || train_total == n) {
    throw ConfigError("dataset: split leaves an empty partition for " + std::to_string(n) +
                      " cases");
  }
  std::vector<Split> s(n, Split::test);
  for (std::size_t i = 0; i < train_total - val; ++i) s[i] = Split::train;
  for (std::size_t i = train_total - val; i < train_total; ++i) s[i] = Split::val;
  return s;
}

CaseSeries generate_case(double q1, double q2, std::size_t cells, std::size_t timesteps,
                         std::uint64_t seed) {
  if (cells == 0 || timesteps < 4) {
    throw ConfigError("generate_case: need cells > 0 and timesteps >= 4");
  }
  CaseSeries cs;
  cs.q1 = static_cast<float>(q1);
  cs.q2 = static_cast<float>(q2);
  cs.field = Tensor<float>({timesteps, cells, kComponents});

  std::vector<double> steady(cells * kComponents), trans(cells * kComponents);
  double hi = -1e300, lo = 1e300;
  for (std::size_t c = 0; c < cells; ++c) {
    const double u = static_cast<double>(c) / static_cast<double>(cells);
    for (std::size_t d = 0; d < kComponents; ++d) {
      const double s = steady_value(u, d, q1, q2);
      const double a = transient_value(u, d, q1, q2);
      steady[c * kComponents + d] = s;
      trans[c * kComponents + d] = a;
      hi = std::max(hi, s + std::abs(a));
      lo = std::min(lo, s - std::abs(a));
    }
  }
  const double noise_amp = 1e-3 * (hi - lo);

  const double tau = static_cast<double>(timesteps) / 5.0;
  Rng rng(case_seed(q1, q2, seed));
  std::size_t idx = 0;
  for (std::size_t t = 0; t < timesteps; ++t) {
    const double decay = std::exp(-static_cast<double>(t) / tau);
    for (std::size_t j = 0; j < cells * kComponents; ++j, ++idx) {
      const double eta = rng.uniform(-noise_amp, noise_amp);
      cs.field[idx] = static_cast<float>(steady[j] + trans[j] * decay + eta);
    }
  }
  return cs;
}

Dataset build_dataset(std::size_t n_cases, std::size_t cells, std::size_t timesteps,
                      std::pair<double, double> q1_range, std::pair<double, double> q2_range,
                      std::uint64_t seed) {
  if (n_cases < 3) throw ConfigError("build_dataset: need at least 3 cases");

  // Grid over the parameter plane, row-major, truncated to n_cases points.
  const std::size_t g2 = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_cases))));
  const std::size_t g1 = (n_cases + g2 - 1) / g2;
  auto lerp = [](std::pair<double, double> r, std::size_t i, std::size_t n) {
    if (n <= 1) return 0.5 * (r.first + r.second);
    return r.first + (r.second - r.first) * static_cast<double>(i) / static_cast<double>(n - 1);
  };

  std::vector<std::pair<double, double>> qs;
  qs.reserve(n_cases);
  for (std::size_t i = 0; i < g1 && qs.size() < n_cases; ++i)
    for (std::size_t j = 0; j < g2 && qs.size() < n_cases; ++j)
      qs.emplace_back(lerp(q1_range, i, g1), lerp(q2_range, j, g2));

  // Shuffle case order before splitting so the splits sample the whole grid.
  Rng rng(mix64(seed, 0x64617461ULL));
  for (std::size_t i = qs.size(); i-- > 1;) std::swap(qs[i], qs[rng.below(i + 1)]);

  Dataset ds;
  ds.cases.reserve(n_cases);
  for (const auto& [q1, q2] : qs) ds.cases.push_back(generate_case(q1, q2, cells, timesteps, seed));
  ds.split = assign_splits(n_cases);
  return ds;
}

NormStats normalize(Dataset& ds) {
  const auto train = ds.case_indexes(Split::train);
  if (train.empty()) throw ConfigError("normalize: dataset has no train cases");

  NormStats st;
  std::array<double, kComponents> sum{}, sumsq{};
  std::uint64_t n = 0;
  for (std::size_t ci : train) {
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
    const double var = sumsq[d] / static_cast<double>(n) - mean * mean;
    const double sd = std::sqrt(std::max(var, 0.0));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      throw ConfigError("normalize: component " + std::to_string(d) + " has zero spread");
    }
    st.mean[d] = mean;
    st.stddev[d] = sd;
  }

  for (auto& cs : ds.cases) {
    auto data = cs.field.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t d = i % kComponents;
      data[i] = static_cast<float>((static_cast<double>(data[i]) - st.mean[d]) / st.stddev[d]);
    }
  }
  ds.norm = st;
  return st;
}

std::vector<unsigned char> encode_dataset_header(const DatasetHeader& h) {
  std::vector<unsigned char> out;
  out.insert(out.end(), kDatasetMagic, kDatasetMagic + 8);
  put_u32le(out, h.version);
  put_u64le(out, h.cases);
  put_u64le(out, h.timesteps);
  put_u64le(out, h.cells);
  put_u64le(out, h.components);
  return out;
}

DatasetHeader parse_dataset_header(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 44) {
    throw FormatError("dataset header: truncated at byte offset " + std::to_string(bytes.size()) +
                      ", need 44");
  }
  if (!std::equal(kDatasetMagic, kDatasetMagic + 8, bytes.begin())) {
    throw FormatError("dataset header: bad magic at byte offset 0");
  }
  DatasetHeader h;
  h.version = get_u32le(bytes.data() + 8);
  if (h.version != kDatasetVersion) {
    throw FormatError("dataset header: unsupported version " + std::to_string(h.version) +
                      " at byte offset 8");
  }
  h.cases = get_u64le(bytes.data() + 12);
  h.timesteps = get_u64le(bytes.data() + 20);
  h.cells = get_u64le(bytes.data() + 28);
  h.components = get_u64le(bytes.data() + 36);
  return h;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  if (ds.cases.empty()) throw ConfigError("write_dataset: empty dataset");
  const std::size_t T = ds.timesteps(), C = ds.cells();
  for (const auto& cs : ds.cases) {
    if (cs.field.shape() != std::vector<std::size_t>{T, C, kComponents}) {
      throw DimError("write_dataset: ragged case shapes");
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("write_dataset: cannot open " + path);

  DatasetHeader h;
  h.cases = ds.cases.size();
  h.timesteps = T;
  h.cells = C;
  h.components = kComponents;
  auto buf = encode_dataset_header(h);
  for (const auto& cs : ds.cases) {
    put_f32le(buf, cs.q1);
    put_f32le(buf, cs.q2);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));

  // Field payload, case by case, to keep the staging buffer small.
  for (const auto& cs : ds.cases) {
    buf.clear();
    buf.reserve(cs.field.size() * 4);
    for (std::size_t i = 0; i < cs.field.size(); ++i) put_f32le(buf, cs.field[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }

  if (ds.norm) {
    buf.clear();
    for (std::size_t d = 0; d < kComponents; ++d) put_f32le(buf, static_cast<float>(ds.norm->mean[d]));
    for (std::size_t d = 0; d < kComponents; ++d)
      put_f32le(buf, static_cast<float>(ds.norm->stddev[d]));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  out.flush();
  if (!out) throw FormatError("write_dataset: write failed for " + path);
}

namespace {

std::vector<unsigned char> read_exact(std::ifstream& in, std::size_t n, std::uint64_t offset,
                                      const char* what) {
  std::vector<unsigned char> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(std::string("read_dataset: truncated ") + what + " at byte offset " +
                      std::to_string(offset + static_cast<std::uint64_t>(in.gcount())));
  }
  return buf;
}

}  // namespace

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("read_dataset: cannot open " + path);

  auto head = read_exact(in, 44, 0, "header");
  const DatasetHeader h = parse_dataset_header(head);
  if (h.components != kComponents) {
    throw FormatError("read_dataset: expected " + std::to_string(kComponents) +
                      " components, header says " + std::to_string(h.components));
  }
  if (h.cases == 0 || h.timesteps == 0 || h.cells == 0) {
    throw FormatError("read_dataset: zero extent in header");
  }

  std::uint64_t offset = 44;
  auto qbuf = read_exact(in, h.cases * 8, offset, "case parameters");
  offset += h.cases * 8;

  Dataset ds;
  ds.cases.resize(h.cases);
  for (std::size_t i = 0; i < h.cases; ++i) {
    ds.cases[i].q1 = get_f32le(qbuf.data() + i * 8);
    ds.cases[i].q2 = get_f32le(qbuf.data() + i * 8 + 4);
  }

  const std::size_t per_case = h.timesteps * h.cells * kComponents;
  for (std::size_t i = 0; i < h.cases; ++i) {
    auto fbuf = read_exact(in, per_case * 4, offset, "field data");
    offset += per_case * 4;
    ds.cases[i].field = Tensor<float>({h.timesteps, h.cells, kComponents});
    for (std::size_t j = 0; j < per_case; ++j) ds.cases[i].field[j] = get_f32le(fbuf.data() + j * 4);
  }

  // Optional normalization trailer.
  std::vector<unsigned char> tail(24);
  in.read(reinterpret_cast<char*>(tail.data()), 24);
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got == 24) {
    NormStats st;
    for (std::size_t d = 0; d < kComponents; ++d) st.mean[d] = get_f32le(tail.data() + d * 4);
    for (std::size_t d = 0; d < kComponents; ++d)
      st.stddev[d] = get_f32le(tail.data() + 12 + d * 4);
    ds.norm = st;
  } else if (got != 0) {
    throw FormatError("read_dataset: truncated normalization trailer at byte offset " +
                      std::to_string(offset + got));
  }

  ds.split = assign_splits(h.cases);
  return ds;
}

}  // namespace srt
