#include "egosc/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace egosc {

namespace {

constexpr char kMagic[4] = {'E', 'G', 'S', 'C'};

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_i64(std::ostream& os, std::int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("checkpoint: truncated file");
  return v;
}

std::int64_t get_i64(std::istream& is) {
  std::int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("checkpoint: truncated file");
  return v;
}

std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("checkpoint: truncated file");
  return s;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open for write: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_str(os, k);
    put_str(os, v);
  }
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) put_i64(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!os) throw IoError("checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("checkpoint: bad magic: " + path);
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) throw IoError("checkpoint: unsupported version");
  Checkpoint ck;
  const std::uint32_t nmeta = get_u32(is);
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = get_str(is);
    ck.meta[k] = get_str(is);
  }
  const std::uint32_t nent = get_u32(is);
  for (std::uint32_t i = 0; i < nent; ++i) {
    std::string name = get_str(is);
    const std::uint32_t ndim = get_u32(is);
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) d = get_i64(is);
    TensorF t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw IoError("checkpoint: truncated tensor data");
    ck.add(std::move(name), std::move(t));
  }
  return ck;
}

}  // namespace egosc
