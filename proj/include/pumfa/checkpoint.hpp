#pragma once

#include "pumfa/tensor.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pumfa {

inline constexpr const char* kCheckpointMagic = "PUMFA-CKPT-1";

/// Named tensors plus string metadata.
///
/// On disk: the magic line, `meta <key> <value>` lines, one
/// `tensor <name> <rank> <extents...> <byte offset>` line per tensor, an `end`
/// line, then the concatenated little-endian float32 blobs. Offsets are
/// relative to the first byte after the `end` line.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(std::string name, const Tensor& t);
  std::optional<Tensor> find(const std::string& name) const;
  /// Throws when absent.
  Tensor get(const std::string& name) const;
  std::string meta_or(const std::string& key, const std::string& fallback) const;
};

/// Writes to a sibling temporary file and renames it into place.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Writes `contents` atomically (temporary file, then rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace pumfa
