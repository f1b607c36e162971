#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "eened/errors.hpp"
#include "eened/model.hpp"

// Checkpoint layout (all integers little-endian):
//
//   "EENEDCK1"                       8-byte magic
//   u32 n, n bytes                   ModelConfig::to_text()
//   u32 count                        number of tensor records
//   count × {
//     u32 n, n bytes                 tensor name
//     u32 rank, rank × u32           extents
//     f32 × prod(extents)            row-major payload
//   }
//
// Records are the trainable tensors in EenedModel::visit order followed by
// "input_norm" = [mean, stddev].

namespace eened {

inline constexpr std::string_view kCheckpointMagic = "EENEDCK1";

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("checkpoint truncated while reading ") + what);
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline void put_tensor(std::string& out, const std::string& name, const Shape& shape, auto values) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(shape.rank()));
  for (auto e : shape.extents()) put_u32(out, static_cast<std::uint32_t>(e));
  for (auto v : values) put_f32(out, static_cast<float>(v));
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const EenedModel<T>& m) {
  std::string out(kCheckpointMagic);
  const std::string cfg = m.config.to_text();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  std::uint32_t count = 1;
  m.visit("", [&](const std::string&, const Tensor<T>&) { ++count; });
  detail::put_u32(out, count);
  m.visit("", [&](const std::string& name, const Tensor<T>& t) { detail::put_tensor(out, name, t.shape(), t.data()); });
  const double norm[2] = {m.input_norm.mean, m.input_norm.stddev};
  detail::put_tensor(out, "input_norm", Shape{2}, std::span<const double>(norm));
  return out;
}

inline EenedModel<float> deserialize_checkpoint(std::string_view bytes) {
  using Kind = CheckpointError::Kind;
  detail::ByteReader in(bytes);
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError(Kind::bad_magic, "not an EENED checkpoint (bad magic or unsupported version)");
  }
  in.take(kCheckpointMagic.size(), "magic");
  const std::uint32_t cfg_len = in.u32("config length");
  const std::string_view cfg_text = in.take(cfg_len, "config");
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(cfg_text);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::bad_config, std::string("checkpoint config rejected: ") + e.what());
  }

  EenedModel<float> m = model_init<float>(cfg);
  std::vector<std::pair<std::string, Tensor<float>*>> expected;
  m.visit("", [&](const std::string& name, Tensor<float>& t) { expected.emplace_back(name, &t); });

  const std::uint32_t count = in.u32("tensor count");
  if (count != expected.size() + 1) {
    throw CheckpointError(Kind::shape_mismatch, "checkpoint holds " + std::to_string(count) +
                                                    " tensors, config implies " + std::to_string(expected.size() + 1));
  }
  auto read_tensor = [&](const std::string& want_name, const Shape& want_shape) {
    const std::uint32_t name_len = in.u32("tensor name length");
    const std::string name(in.take(name_len, "tensor name"));
    if (name != want_name) {
      throw CheckpointError(Kind::shape_mismatch, "expected tensor " + want_name + ", found " + name);
    }
    const std::uint32_t rank = in.u32("tensor rank");
    if (rank != want_shape.rank()) {
      throw CheckpointError(Kind::shape_mismatch, "tensor " + name + ": rank " + std::to_string(rank) +
                                                      ", expected " + std::to_string(want_shape.rank()));
    }
    for (std::size_t i = 0; i < rank; ++i) {
      if (in.u32("tensor extent") != want_shape[i]) {
        throw CheckpointError(Kind::shape_mismatch, "tensor " + name + ": shape differs from " + want_shape.str());
      }
    }
    std::vector<float> values(want_shape.size());
    for (auto& v : values) v = in.f32("tensor payload");
    return values;
  };
  for (auto& [name, tensor] : expected) {
    const Shape shape = tensor->shape();
    *tensor = Tensor<float>(shape, read_tensor(name, shape));
  }
  const auto norm = read_tensor("input_norm", Shape{2});
  m.input_norm = {norm[0], norm[1]};
  if (!in.done()) throw CheckpointError(Kind::trailing_data, "unexpected bytes after the last checkpoint tensor");
  return m;
}

template <typename T>
void save_checkpoint(const EenedModel<T>& m, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "failed writing " + path.string());
}

inline EenedModel<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace eened
