#include "pumfa/shapes.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

namespace pumfa {

TriangleMesh make_icosphere(int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh mesh;
  mesh.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                   {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : mesh.vertices) v.normalize();
  mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> midpoint;
    auto mid = [&](std::size_t a, std::size_t b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      mesh.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]).normalized());
      midpoint.emplace(key, mesh.vertices.size() - 1);
      return mesh.vertices.size() - 1;
    };
    std::vector<std::array<std::size_t, 3>> next;
    next.reserve(mesh.faces.size() * 4);
    for (const auto& f : mesh.faces) {
      const std::size_t ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    mesh.faces = std::move(next);
  }
  return mesh;
}

TriangleMesh make_torus(double ring_radius, double tube_radius, int ring_segments, int tube_segments) {
  TriangleMesh mesh;
  const double two_pi = 2.0 * std::numbers::pi;
  for (int i = 0; i < ring_segments; ++i) {
    const double u = two_pi * i / ring_segments;
    for (int j = 0; j < tube_segments; ++j) {
      const double v = two_pi * j / tube_segments;
      const double w = ring_radius + tube_radius * std::cos(v);
      mesh.vertices.emplace_back(w * std::cos(u), w * std::sin(u), tube_radius * std::sin(v));
    }
  }
  auto id = [&](int i, int j) {
    return static_cast<std::size_t>((i % ring_segments) * tube_segments + (j % tube_segments));
  };
  for (int i = 0; i < ring_segments; ++i) {
    for (int j = 0; j < tube_segments; ++j) {
      mesh.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      mesh.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  return mesh;
}

TriangleMesh make_box(double hx, double hy, double hz, int n) {
  TriangleMesh mesh;
  const Vec3 half(hx, hy, hz);
  // Each face: fixed axis, sign, and the two in-plane axes.
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    for (int sign : {-1, 1}) {
      const std::size_t base = mesh.vertices.size();
      for (int i = 0; i <= n; ++i) {
        for (int j = 0; j <= n; ++j) {
          Vec3 p;
          p[axis] = sign * half[axis];
          p[u] = half[u] * (2.0 * i / n - 1.0);
          p[v] = half[v] * (2.0 * j / n - 1.0);
          mesh.vertices.push_back(p);
        }
      }
      auto id = [&](int i, int j) { return base + static_cast<std::size_t>(i * (n + 1) + j); };
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          if (sign > 0) {
            mesh.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            mesh.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
          } else {
            mesh.faces.push_back({id(i, j), id(i + 1, j + 1), id(i + 1, j)});
            mesh.faces.push_back({id(i, j), id(i, j + 1), id(i + 1, j + 1)});
          }
        }
      }
    }
  }
  return mesh;
}

TriangleMesh make_cylinder(double radius, double half_height, int segments, int stacks) {
  TriangleMesh mesh;
  const double two_pi = 2.0 * std::numbers::pi;
  for (int s = 0; s <= stacks; ++s) {
    const double z = -half_height + 2.0 * half_height * s / stacks;
    for (int i = 0; i < segments; ++i) {
      const double a = two_pi * i / segments;
      mesh.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), z);
    }
  }
  auto ring = [&](int s, int i) { return static_cast<std::size_t>(s * segments + (i % segments)); };
  for (int s = 0; s < stacks; ++s) {
    for (int i = 0; i < segments; ++i) {
      mesh.faces.push_back({ring(s, i), ring(s, i + 1), ring(s + 1, i + 1)});
      mesh.faces.push_back({ring(s, i), ring(s + 1, i + 1), ring(s + 1, i)});
    }
  }
  const std::size_t bottom = mesh.vertices.size();
  mesh.vertices.emplace_back(0.0, 0.0, -half_height);
  const std::size_t top = mesh.vertices.size();
  mesh.vertices.emplace_back(0.0, 0.0, half_height);
  for (int i = 0; i < segments; ++i) {
    mesh.faces.push_back({bottom, ring(0, i + 1), ring(0, i)});
    mesh.faces.push_back({top, ring(stacks, i), ring(stacks, i + 1)});
  }
  return mesh;
}

const std::vector<std::string>& builtin_mesh_names() {
  static const std::vector<std::string> names{"sphere", "torus", "box", "cylinder"};
  return names;
}

bool is_builtin_mesh(const std::string& name) {
  for (const auto& n : builtin_mesh_names()) {
    if (n == name) return true;
  }
  return false;
}

TriangleMesh builtin_mesh(const std::string& name) {
  if (name == "sphere") return make_icosphere(4);
  if (name == "torus") return make_torus(0.7, 0.3, 64, 32);
  if (name == "box") return make_box(0.6, 0.45, 0.3, 8);
  if (name == "cylinder") return make_cylinder(0.5, 0.8, 64, 16);
  throw std::invalid_argument("unknown built-in mesh '" + name + "'");
}

}  // namespace pumfa
