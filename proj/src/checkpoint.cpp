#include "interloc/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "interloc/error.hpp"
#include "interloc/fileio.hpp"

namespace interloc::checkpoint {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string_view source) : bytes_(bytes), source_(source) {}

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4).data(), 4);
    return v;
  }
  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError(std::string(source_) + ": truncated checkpoint");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::string_view source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out += ckpt.metadata;
  put_u32(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_u32(out, a.rows);
    put_u32(out, a.cols);
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
  }
  return out;
}

Checkpoint decode(std::string_view bytes, std::string_view source) {
  Reader r(bytes, source);
  if (r.take(4) != std::string_view(kMagic, 4))
    throw DataError(std::string(source) + ": not a checkpoint file");
  if (auto v = r.u32(); v != kVersion)
    throw SchemaVersionMismatch(std::string(source) + ": checkpoint version " + std::to_string(v));
  Checkpoint ckpt;
  ckpt.metadata = std::string(r.take(r.u32()));
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = std::string(r.take(r.u32()));
    a.rows = r.u32();
    a.cols = r.u32();
    const std::size_t n = static_cast<std::size_t>(a.rows) * a.cols;
    auto raw = r.take(n * sizeof(float));
    a.data.resize(n);
    std::memcpy(a.data.data(), raw.data(), raw.size());
    ckpt.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw DataError(std::string(source) + ": trailing bytes after checkpoint");
  return ckpt;
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  fileio::write_atomic(path, encode(ckpt));
}

Checkpoint load(const std::filesystem::path& path) {
  return decode(fileio::read_all(path), path.string());
}

}  // namespace interloc::checkpoint
