#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "sfad/error.hpp"
#include "sfad/tensor.hpp"

// Checkpoint layout (all integers little-endian):
//
//   "SFADCKPT"                  8-byte magic
//   u32 version                 currently 1
//   u32 record_count
//   record_count x {
//     u32 name_length, name bytes (UTF-8)
//     u8  dtype                 1 = float32, 2 = float64
//     u32 rank, rank x u64 dims
//     numel x value             IEEE-754, little-endian
//   }

namespace sfad {

inline constexpr char kCheckpointMagic[8] = {'S', 'F', 'A', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::Float32;
  Shape shape;
  std::vector<double> values;  // widened; narrowed back on write for Float32

  template <typename T>
  static CheckpointRecord from(std::string name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    CheckpointRecord r;
    r.name = std::move(name);
    r.dtype = std::is_same_v<T, float> ? DType::Float32 : DType::Float64;
    r.shape = t.shape();
    r.values.assign(t.data().begin(), t.data().end());
    return r;
  }
};

namespace detail {

template <typename U>
void put_le(std::vector<char>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::vector<char>& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint " + path_ + ": truncated at byte " + std::to_string(pos_));
  }

  const std::vector<char>& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::vector<char> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (numel(r.shape) != r.values.size()) throw StateError("checkpoint record " + r.name + ": shape/value mismatch");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<char>(r.dtype));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) detail::put_le<std::uint64_t>(out, d);
    for (double v : r.values) {
      if (r.dtype == DType::Float32) {
        detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        detail::put_le(out, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return out;
}

inline std::vector<CheckpointRecord> decode_checkpoint(const std::vector<char>& bytes, const std::string& path = "<memory>") {
  detail::ByteReader in(bytes, path);
  if (in.take(8) != std::string(kCheckpointMagic, 8)) throw IoError("checkpoint " + path + ": bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = in.take(in.get<std::uint32_t>());
    const auto tag = in.get<std::uint8_t>();
    if (tag != 1 && tag != 2) throw IoError("checkpoint " + path + ": record " + r.name + " has unknown dtype");
    r.dtype = static_cast<DType>(tag);
    const auto rank = in.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
    r.values.resize(numel(r.shape));
    for (auto& v : r.values) {
      v = r.dtype == DType::Float32 ? static_cast<double>(std::bit_cast<float>(in.get<std::uint32_t>()))
                                    : std::bit_cast<double>(in.get<std::uint64_t>());
    }
    records.push_back(std::move(r));
  }
  if (!in.done()) throw IoError("checkpoint " + path + ": trailing bytes");
  return records;
}

inline void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  const auto bytes = encode_checkpoint(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

inline std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

}  // namespace sfad
