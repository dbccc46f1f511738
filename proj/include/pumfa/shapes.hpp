#pragma once

#include "pumfa/geometry.hpp"

#include <string>
#include <vector>

namespace pumfa {

/// Unit sphere from a subdivided icosahedron (20·4^subdivisions faces).
TriangleMesh make_icosphere(int subdivisions);

/// Torus in the XY plane with the given ring and tube radii.
TriangleMesh make_torus(double ring_radius, double tube_radius, int ring_segments, int tube_segments);

/// Axis-aligned box with half-extents (hx, hy, hz), each side split into an n×n grid.
TriangleMesh make_box(double hx, double hy, double hz, int n);

/// Closed cylinder along Z with caps.
TriangleMesh make_cylinder(double radius, double half_height, int segments, int stacks);

/// Built-in analytic shapes: "sphere", "torus", "box", "cylinder".
TriangleMesh builtin_mesh(const std::string& name);
const std::vector<std::string>& builtin_mesh_names();
bool is_builtin_mesh(const std::string& name);

}  // namespace pumfa
