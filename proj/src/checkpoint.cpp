// SPDX-License-Identifier: Apache-2.0
#include "srt/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "srt/bytes.hpp"

namespace srt {

void write_checkpoint(const CheckpointFile& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("write_checkpoint: cannot open " + path);

  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 8);
  put_u64le(buf, ck.dims.flat_dim);
  put_u64le(buf, ck.dims.window);
  put_u64le(buf, ck.dims.horizon);
  put_u64le(buf, ck.dims.encoder_units);
  put_u64le(buf, ck.dims.decoder_units);
  put_u64le(buf, ck.dims.head_units);
  put_u64le(buf, ck.f64 ? 1 : 0);
  put_u64le(buf, ck.tensors.size());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));

  for (const auto& t : ck.tensors) {
    buf.clear();
    put_u64le(buf, t.name.size());
    buf.insert(buf.end(), t.name.begin(), t.name.end());
    put_u64le(buf, t.extents.size());
    for (auto e : t.extents) put_u64le(buf, e);
    if (t.values.size() != t.count()) {
      throw FormatError("write_checkpoint: tensor " + t.name + " holds " +
                        std::to_string(t.values.size()) + " values, extents say " +
                        std::to_string(t.count()));
    }
    if (ck.f64) {
      for (double v : t.values) put_f64le(buf, v);
    } else {
      for (double v : t.values) put_f32le(buf, static_cast<float>(v));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  out.flush();
  if (!out) throw FormatError("write_checkpoint: write failed for " + path);
}

namespace {

std::vector<unsigned char> read_exact(std::ifstream& in, std::size_t n, std::uint64_t& offset,
                                      const char* what) {
  std::vector<unsigned char> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(std::string("read_checkpoint: truncated ") + what + " at byte offset " +
                      std::to_string(offset + static_cast<std::uint64_t>(in.gcount())));
  }
  offset += n;
  return buf;
}

}  // namespace

CheckpointFile read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("read_checkpoint: cannot open " + path);

  std::uint64_t offset = 0;
  auto head = read_exact(in, 72, offset, "header");
  if (!std::equal(kCheckpointMagic, kCheckpointMagic + 8, head.begin())) {
    throw FormatError("read_checkpoint: bad magic at byte offset 0");
  }
  CheckpointFile ck;
  ck.dims.flat_dim = get_u64le(head.data() + 8);
  ck.dims.window = get_u64le(head.data() + 16);
  ck.dims.horizon = get_u64le(head.data() + 24);
  ck.dims.encoder_units = get_u64le(head.data() + 32);
  ck.dims.decoder_units = get_u64le(head.data() + 40);
  ck.dims.head_units = get_u64le(head.data() + 48);
  const std::uint64_t prec = get_u64le(head.data() + 56);
  if (prec > 1) {
    throw FormatError("read_checkpoint: bad precision flag " + std::to_string(prec) +
                      " at byte offset 56");
  }
  ck.f64 = prec == 1;
  const std::uint64_t n_tensors = get_u64le(head.data() + 64);

  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    auto nlen = read_exact(in, 8, offset, "tensor name length");
    const std::uint64_t name_len = get_u64le(nlen.data());
    if (name_len > 4096) {
      throw FormatError("read_checkpoint: implausible name length " + std::to_string(name_len) +
                        " at byte offset " + std::to_string(offset - 8));
    }
    auto name = read_exact(in, name_len, offset, "tensor name");
    TensorRecord r;
    r.name.assign(name.begin(), name.end());

    auto rk = read_exact(in, 8, offset, "tensor rank");
    const std::uint64_t rank = get_u64le(rk.data());
    if (rank > 8) {
      throw FormatError("read_checkpoint: implausible rank " + std::to_string(rank) +
                        " for tensor " + r.name);
    }
    auto ext = read_exact(in, rank * 8, offset, "tensor extents");
    for (std::uint64_t k = 0; k < rank; ++k) r.extents.push_back(get_u64le(ext.data() + k * 8));

    const std::uint64_t count = r.count();
    const std::size_t width = ck.f64 ? 8 : 4;
    auto payload = read_exact(in, count * width, offset, "tensor payload");
    r.values.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) {
      r.values.push_back(ck.f64 ? get_f64le(payload.data() + k * 8)
                                : static_cast<double>(get_f32le(payload.data() + k * 4)));
    }
    ck.tensors.push_back(std::move(r));
  }

  char extra;
  in.read(&extra, 1);
  if (in.gcount() != 0) {
    throw FormatError("read_checkpoint: trailing bytes at byte offset " + std::to_string(offset));
  }
  return ck;
}

}  // namespace srt
