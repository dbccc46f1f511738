#pragma once

#include "pumfa/geometry.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace pumfa {

/// One "x y z" line per point; extra columns are ignored on read.
PointCloud read_xyz(const std::filesystem::path& path);
/// Six decimal places, one point per line.
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);

/// Per-vertex unsigned-char property written alongside coordinates.
struct VertexFlag {
  std::string name;
  std::vector<unsigned char> values;
};

PointCloud read_ply_cloud(const std::filesystem::path& path);
void write_ply_cloud(const std::filesystem::path& path, const PointCloud& cloud,
                     const std::vector<VertexFlag>& flags = {});

TriangleMesh read_off(const std::filesystem::path& path);
TriangleMesh read_ply_mesh(const std::filesystem::path& path);

/// Dispatches on extension (.off, .ply). Degenerate faces are dropped.
TriangleMesh read_mesh(const std::filesystem::path& path);
/// Dispatches on extension (.ply, otherwise XYZ).
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace pumfa
