// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian byte packing shared by the dataset format, the checkpoint
// format and the worker wire protocol. Everything on disk and on the wire
// is explicit LE regardless of host order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace srt {

inline void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 24));
}

inline void put_u64le(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f32le(std::vector<unsigned char>& out, float v) {
  put_u32le(out, std::bit_cast<std::uint32_t>(v));
}

inline void put_f64le(std::vector<unsigned char>& out, double v) {
  put_u64le(out, std::bit_cast<std::uint64_t>(v));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint64_t get_u64le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = v << 8 | p[i];
  return v;
}

inline float get_f32le(const unsigned char* p) {
  return std::bit_cast<float>(get_u32le(p));
}

inline double get_f64le(const unsigned char* p) {
  return std::bit_cast<double>(get_u64le(p));
}

}  // namespace srt
