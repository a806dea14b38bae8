// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "srt/checkpoint.hpp"
#include "srt/rng.hpp"

using srt::CheckpointFile;
using srt::FormatError;
using srt::kComponents;
using srt::ModelDims;
using srt::pack_checkpoint;
using srt::read_checkpoint;
using srt::TrainingState;
using srt::unpack_checkpoint;
using srt::write_checkpoint;

namespace {

const ModelDims kDims{.flat_dim = 9,
                      .window = 3,
                      .horizon = 2,
                      .encoder_units = 5,
                      .decoder_units = 4,
                      .head_units = 6};

template <typename S>
TrainingState<S> sample_state(std::uint64_t seed) {
  TrainingState<S> ts;
  ts.params = srt::init_params<S>(kDims, seed);
  ts.opt = srt::AdamState<S>::like(ts.params, 0.00025);
  srt::Rng rng(srt::mix64(seed, 0xF00DULL));
  ts.opt.m.for_each_tensor([&](const char*, srt::Tensor<S>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(-0.1, 0.1));
  });
  ts.opt.v.for_each_tensor([&](const char*, srt::Tensor<S>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(0.0, 0.01));
  });
  ts.opt.step = 42;
  for (std::size_t d = 0; d < kComponents; ++d) {
    ts.norm.mean[d] = 0.25 * static_cast<double>(d + 1);
    ts.norm.stddev[d] = 1.5 + static_cast<double>(d);
  }
  return ts;
}

std::filesystem::path temp_ckpt(const char* stem) {
  static int counter = 0;
  return std::filesystem::temp_directory_path() /
         (std::string(stem) + "_" + std::to_string(++counter) + ".ckpt");
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

template <typename S>
void check_states_equal(const TrainingState<S>& a, const TrainingState<S>& b) {
  CHECK(a.params.dims == b.params.dims);
  auto pa = a.params.tensor_list();
  auto pb = b.params.tensor_list();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) {
    REQUIRE(pa[k]->size() == pb[k]->size());
    for (std::size_t i = 0; i < pa[k]->size(); ++i) CHECK((*pa[k])[i] == (*pb[k])[i]);
  }
  auto ma = a.opt.m.tensor_list();
  auto mb = b.opt.m.tensor_list();
  auto va = a.opt.v.tensor_list();
  auto vb = b.opt.v.tensor_list();
  for (std::size_t k = 0; k < ma.size(); ++k) {
    for (std::size_t i = 0; i < ma[k]->size(); ++i) CHECK((*ma[k])[i] == (*mb[k])[i]);
    for (std::size_t i = 0; i < va[k]->size(); ++i) CHECK((*va[k])[i] == (*vb[k])[i]);
  }
  CHECK(a.opt.step == b.opt.step);
  for (std::size_t d = 0; d < kComponents; ++d) {
    CHECK(a.norm.mean[d] == b.norm.mean[d]);
    CHECK(a.norm.stddev[d] == b.norm.stddev[d]);
  }
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("pack emits the canonical record list") {
    auto ck = pack_checkpoint(sample_state<double>(1));
    // 10 parameter tensors, their two moment sets, step and two norm records.
    REQUIRE(ck.tensors.size() == 33);
    CHECK(ck.f64);
    CHECK(ck.tensors[0].name == "encoder/kernel");
    CHECK(ck.tensors[1].name == "encoder/recurrent");
    CHECK(ck.tensors[2].name == "encoder/bias");
    CHECK(ck.tensors[9].name == "output/bias");
    CHECK(ck.tensors[10].name == "adam/m/encoder/kernel");
    CHECK(ck.tensors[20].name == "adam/v/encoder/kernel");
    CHECK(ck.tensors[30].name == "adam/step");
    CHECK(ck.tensors[31].name == "norm/mean");
    CHECK(ck.tensors[32].name == "norm/std");

    CHECK(ck.find("encoder/kernel") != nullptr);
    CHECK(ck.find("encoder/kernel")->extents ==
          std::vector<std::uint64_t>{kDims.flat_dim, 4 * kDims.encoder_units});
    CHECK(ck.find("no/such/tensor") == nullptr);
  }

  TEST_CASE("f64 state survives pack, write, read and unpack exactly") {
    auto ts = sample_state<double>(7);
    auto p = temp_ckpt("f64");
    write_checkpoint(pack_checkpoint(ts), p.string());

    auto ck = read_checkpoint(p.string());
    CHECK(ck.f64);
    CHECK(ck.dims == kDims);
    auto back = unpack_checkpoint<double>(ck);
    check_states_equal(ts, back);
    std::filesystem::remove(p);
  }

  TEST_CASE("f32 state survives the narrower payload exactly") {
    auto ts = sample_state<float>(9);
    auto p = temp_ckpt("f32");
    write_checkpoint(pack_checkpoint(ts), p.string());

    auto ck = read_checkpoint(p.string());
    CHECK_FALSE(ck.f64);
    auto back = unpack_checkpoint<float>(ck);
    check_states_equal(ts, back);
    std::filesystem::remove(p);
  }

  TEST_CASE("write, read, write again is byte-identical") {
    for (int wide = 0; wide < 2; ++wide) {
      auto p1 = temp_ckpt("bytes_a");
      auto p2 = temp_ckpt("bytes_b");
      if (wide) {
        write_checkpoint(pack_checkpoint(sample_state<double>(3)), p1.string());
      } else {
        write_checkpoint(pack_checkpoint(sample_state<float>(3)), p1.string());
      }
      write_checkpoint(read_checkpoint(p1.string()), p2.string());
      CHECK(slurp(p1) == slurp(p2));
      std::filesystem::remove(p1);
      std::filesystem::remove(p2);
    }
  }

  TEST_CASE("precision mismatch is rejected at unpack") {
    auto ck32 = pack_checkpoint(sample_state<float>(2));
    CHECK_THROWS_WITH_AS(unpack_checkpoint<double>(ck32), doctest::Contains("precision"),
                         FormatError);
    auto ck64 = pack_checkpoint(sample_state<double>(2));
    CHECK_THROWS_WITH_AS(unpack_checkpoint<float>(ck64), doctest::Contains("precision"),
                         FormatError);
  }

  TEST_CASE("missing records are named in the unpack error") {
    auto ck = pack_checkpoint(sample_state<double>(5));
    ck.tensors.erase(ck.tensors.begin() + 4);  // decoder/recurrent
    CHECK_THROWS_WITH_AS(unpack_checkpoint<double>(ck),
                         doctest::Contains("missing tensor decoder/recurrent"), FormatError);

    auto ck2 = pack_checkpoint(sample_state<double>(5));
    ck2.tensors[0].values.pop_back();
    ck2.tensors[0].extents = {1};  // now inconsistent with the model shape
    CHECK_THROWS_AS(unpack_checkpoint<double>(ck2), FormatError);
  }

  TEST_CASE("corrupted files are rejected with byte offsets") {
    auto p = temp_ckpt("corrupt");
    write_checkpoint(pack_checkpoint(sample_state<float>(4)), p.string());
    auto bytes = slurp(p);

    auto bad_magic = bytes;
    bad_magic[0] ^= 0x40;
    dump(p, bad_magic);
    CHECK_THROWS_WITH_AS(read_checkpoint(p.string()),
                         doctest::Contains("bad magic at byte offset 0"), FormatError);

    auto bad_prec = bytes;
    bad_prec[56] = 7;
    dump(p, bad_prec);
    CHECK_THROWS_WITH_AS(read_checkpoint(p.string()), doctest::Contains("precision flag"),
                         FormatError);

    std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + bytes.size() / 2);
    dump(p, cut);
    CHECK_THROWS_WITH_AS(read_checkpoint(p.string()), doctest::Contains("byte offset"),
                         FormatError);

    auto padded = bytes;
    padded.push_back(0);
    dump(p, padded);
    CHECK_THROWS_WITH_AS(read_checkpoint(p.string()), doctest::Contains("trailing bytes"),
                         FormatError);
    std::filesystem::remove(p);
  }

  TEST_CASE("write rejects a record whose payload disagrees with its extents") {
    auto ck = pack_checkpoint(sample_state<double>(6));
    ck.tensors[2].values.push_back(0.0);
    auto p = temp_ckpt("ragged");
    CHECK_THROWS_WITH_AS(write_checkpoint(ck, p.string()), doctest::Contains("extents say"),
                         FormatError);
    std::filesystem::remove(p);
  }
}
