#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "egosc/tensor.hpp"

namespace egosc {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Versioned binary container: named float32 tensors plus a string metadata
// map (resolved config, seeds). Raw little-endian bytes, so save/load
// round-trips bit-exactly.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, TensorF>> entries;

  void add(std::string name, TensorF t) { entries.emplace_back(std::move(name), std::move(t)); }

  const TensorF* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }

  const TensorF& require(const std::string& name) const {
    const TensorF* t = find(name);
    if (!t) throw IoError("checkpoint: missing tensor '" + name + "'");
    return *t;
  }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace egosc
