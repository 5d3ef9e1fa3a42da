// SPDX-License-Identifier: Apache-2.0
#include "r2g/container.hpp"

#include <zlib.h>

#include <bit>
#include <fstream>
#include <limits>
#include <string>

#include "r2g/errors.hpp"

namespace r2g {
namespace {

constexpr char kMagic[4] = {'R', '2', 'F', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
  }
  std::vector<std::byte> take() { return std::move(out_); }
  const std::vector<std::byte>& buf() const { return out_; }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  template <class U>
  U uint(const std::string& field) {
    need(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(std::to_integer<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  void need(std::size_t n, const std::string& field) const {
    if (in_.size() - pos_ < n) throw FormatError("R2FT: truncated while reading " + field);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::span<const std::byte> take(std::size_t n, const std::string& field) {
    need(n, field);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::byte> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  std::size_t off = 0;
  while (off < data.size()) {
    const std::size_t n = std::min<std::size_t>(data.size() - off, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data() + off), static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::byte> encode_r2ft(const R2ftFile& file) {
  if (file.tensors.size() > 255) throw FormatError("R2FT: more than 255 tensors");
  Writer w;
  w.bytes(kMagic, 4);
  w.uint<std::uint16_t>(kR2ftVersion);
  w.uint<std::uint8_t>(static_cast<std::uint8_t>(file.dtype));
  w.uint<std::uint8_t>(static_cast<std::uint8_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    if (t.shape.size() > 255) throw FormatError("R2FT: tensor rank above 255");
    if (shape_numel(t.shape) != t.values.size()) {
      throw FormatError("R2FT: payload of " + std::to_string(t.values.size()) + " values for shape " +
                        shape_str(t.shape));
    }
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (auto e : t.shape) w.uint<std::uint64_t>(e);
    for (double v : t.values) {
      if (file.dtype == DType::F64) w.uint<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
      else w.uint<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  w.uint<std::uint32_t>(crc_of(w.buf()));
  return w.take();
}

R2ftFile decode_r2ft(std::span<const std::byte> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  for (int i = 0; i < 4; ++i) {
    if (magic[static_cast<std::size_t>(i)] != static_cast<std::byte>(kMagic[i])) throw FormatError("R2FT: bad magic");
  }
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kR2ftVersion) throw FormatError("R2FT: version mismatch (file has " + std::to_string(version) + ")");
  const auto dtype_code = r.uint<std::uint8_t>("dtype");
  if (dtype_code > 1) throw FormatError("R2FT: unknown dtype code " + std::to_string(dtype_code));
  R2ftFile file;
  file.dtype = static_cast<DType>(dtype_code);
  const std::size_t width = file.dtype == DType::F64 ? 8 : 4;
  const auto count = r.uint<std::uint8_t>("tensor count");
  for (std::size_t k = 0; k < count; ++k) {
    const std::string tag = "tensor " + std::to_string(k);
    RawTensor t;
    const auto rank = r.uint<std::uint8_t>(tag + " rank");
    std::size_t numel = 1;
    for (std::size_t d = 0; d < rank; ++d) {
      const auto e = r.uint<std::uint64_t>(tag + " extents");
      if (e != 0 && numel > std::numeric_limits<std::size_t>::max() / e) {
        throw FormatError("R2FT: " + tag + " extents overflow");
      }
      t.shape.push_back(static_cast<std::size_t>(e));
      numel *= static_cast<std::size_t>(e);
    }
    if (numel > r.remaining() / width) throw FormatError("R2FT: " + tag + " payload truncated");
    t.values.resize(numel);
    for (auto& v : t.values) {
      if (file.dtype == DType::F64) v = std::bit_cast<double>(r.uint<std::uint64_t>(tag + " payload"));
      else v = static_cast<double>(std::bit_cast<float>(r.uint<std::uint32_t>(tag + " payload")));
    }
    file.tensors.push_back(std::move(t));
  }
  const std::size_t body = r.pos();
  const auto stored = r.uint<std::uint32_t>("crc32");
  if (r.remaining() != 0) throw FormatError("R2FT: trailing bytes after crc32");
  if (stored != crc_of(bytes.first(body))) throw FormatError("R2FT: crc32 mismatch");
  return file;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> buf(size);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("short read from " + path.string());
  return buf;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

void write_r2ft(const std::filesystem::path& path, const R2ftFile& file) { write_file_bytes(path, encode_r2ft(file)); }

R2ftFile read_r2ft(const std::filesystem::path& path) { return decode_r2ft(read_file_bytes(path)); }

}  // namespace r2g
