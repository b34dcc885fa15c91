#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "interloc/nn.hpp"

namespace interloc::checkpoint {

inline constexpr char kMagic[4] = {'I', 'L', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

struct NamedArray {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;
  bool operator==(const NamedArray&) const = default;
};

/// Layout: magic, u32 version, u32 metadata length, metadata bytes, u32 array count, then per
/// array u32 name length, name, u32 rows, u32 cols, rows*cols float32. All little-endian.
struct Checkpoint {
  std::string metadata;
  std::vector<NamedArray> arrays;
  bool operator==(const Checkpoint&) const = default;
};

std::string encode(const Checkpoint& ckpt);
/// Throws SchemaVersionMismatch or DataError.
Checkpoint decode(std::string_view bytes, std::string_view source = "checkpoint");

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

template <typename T>
void append(Checkpoint& ckpt, const nn::ParameterStore<T>& store) {
  for (const auto& p : store.params()) {
    NamedArray a{p.name(), static_cast<std::uint32_t>(p.rows()), static_cast<std::uint32_t>(p.cols()),
                 {}};
    a.data.reserve(p.value().size());
    for (auto v : p.value().data()) a.data.push_back(static_cast<float>(v));
    ckpt.arrays.push_back(std::move(a));
  }
}

/// Assigns every parameter of `store` from the array of the same name; DataError if absent.
template <typename T>
void restore(const Checkpoint& ckpt, nn::ParameterStore<T>& store) {
  for (auto p : store.params()) {
    const NamedArray* found = nullptr;
    for (const auto& a : ckpt.arrays)
      if (a.name == p.name()) found = &a;
    if (!found) throw DataError("checkpoint has no parameter '" + p.name() + "'");
    if (found->rows != p.rows() || found->cols != p.cols())
      throw DataError("checkpoint parameter '" + p.name() + "' has the wrong shape");
    auto dst = p.mutable_value().data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(found->data[i]);
  }
}

}  // namespace interloc::checkpoint
