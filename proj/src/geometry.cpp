#include "pumfa/geometry.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace pumfa {

void validate(const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("point cloud is empty");
  for (const auto& p : cloud.points) {
    if (!p.allFinite()) throw std::invalid_argument("point cloud contains non-finite coordinates");
  }
}

PointCloud select(const PointCloud& cloud, std::span<const std::size_t> indices) {
  PointCloud out;
  out.points.reserve(indices.size());
  for (std::size_t i : indices) out.points.push_back(cloud.points.at(i));
  return out;
}

double TriangleMesh::face_area(std::size_t f) const {
  const auto& t = faces[f];
  return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

double TriangleMesh::total_area() const {
  double a = 0.0;
  for (std::size_t f = 0; f < faces.size(); ++f) a += face_area(f);
  return a;
}

namespace {

bool degenerate(const Vec3& a, const Vec3& b, const Vec3& c) {
  const double longest = std::max({(b - a).squaredNorm(), (c - b).squaredNorm(), (a - c).squaredNorm()});
  return (b - a).cross(c - a).norm() <= 1e-12 * longest || longest == 0.0;
}

}  // namespace

void sanitize(TriangleMesh& mesh) {
  std::vector<std::array<std::size_t, 3>> kept;
  kept.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    for (std::size_t v : f) {
      if (v >= mesh.vertices.size()) {
        throw std::invalid_argument("mesh face references vertex " + std::to_string(v) + " of " +
                                    std::to_string(mesh.vertices.size()));
      }
    }
    if (!degenerate(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]])) kept.push_back(f);
  }
  mesh.faces = std::move(kept);
}

// ---------------------------------------------------------------------------
// Normalization

Normalization Normalization::fit(const PointCloud& cloud) {
  validate(cloud);
  Normalization n;
  n.centroid = Vec3::Zero();
  for (const auto& p : cloud.points) n.centroid += p;
  n.centroid /= static_cast<double>(cloud.size());
  double far = 0.0;
  for (const auto& p : cloud.points) far = std::max(far, (p - n.centroid).norm());
  n.scale = far > 0.0 ? far : 1.0;
  return n;
}

PointCloud Normalization::apply(const PointCloud& cloud) const {
  PointCloud out = cloud;
  for (auto& p : out.points) p = (p - centroid) / scale;
  return out;
}

PointCloud Normalization::invert(const PointCloud& cloud) const {
  PointCloud out = cloud;
  for (auto& p : out.points) p = p * scale + centroid;
  return out;
}

// ---------------------------------------------------------------------------
// Neighbourhoods

std::vector<std::size_t> knn(const PointCloud& points, const Vec3& query, std::size_t k) {
  if (k == 0 || k > points.size()) {
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " outside [1, " + std::to_string(points.size()) + "]");
  }
  std::vector<std::pair<double, std::size_t>> d(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d[i] = {(points[i] - query).squaredNorm(), i};
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = d[i].second;
  return out;
}

std::vector<std::size_t> knn_table(const PointCloud& points, std::size_t k) {
  std::vector<std::size_t> table;
  table.reserve(points.size() * k);
  for (const auto& p : points.points) {
    auto row = knn(points, p, k);
    table.insert(table.end(), row.begin(), row.end());
  }
  return table;
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& points, std::size_t m, std::size_t seed) {
  const std::size_t n = points.size();
  if (m == 0 || m > n) {
    throw std::invalid_argument("farthest_point_sample: m=" + std::to_string(m) + " outside [1, " +
                                std::to_string(n) + "]");
  }
  if (seed >= n) throw std::invalid_argument("farthest_point_sample: seed index out of range");
  std::vector<std::size_t> chosen{seed};
  chosen.reserve(m);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t last = seed;
  while (chosen.size() < m) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], (points[i] - points[last]).squaredNorm());
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    // Duplicate points can leave every remaining candidate at distance 0;
    // pick the lowest unchosen index then.
    if (best_d <= 0.0) {
      std::vector<bool> taken(n, false);
      for (std::size_t c : chosen) taken[c] = true;
      best = static_cast<std::size_t>(std::find(taken.begin(), taken.end(), false) - taken.begin());
    }
    chosen.push_back(best);
    nearest[best] = 0.0;
    last = best;
  }
  return chosen;
}

// ---------------------------------------------------------------------------
// Mesh sampling

namespace {

PointCloud sample_uniform(const TriangleMesh& mesh, std::size_t n, Rng& rng) {
  std::vector<double> areas(mesh.faces.size());
  for (std::size_t f = 0; f < areas.size(); ++f) areas[f] = mesh.face_area(f);
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud out;
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = mesh.faces[pick(rng)];
    const double s = std::sqrt(unit(rng));
    const double t = unit(rng);
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    out.points.push_back((1.0 - s) * a + s * (1.0 - t) * b + s * t * c);
  }
  return out;
}

// Hash grid over cells of side `cell`.
class CellGrid {
 public:
  CellGrid(const PointCloud& cloud, double cell) : cloud_(cloud), cell_(cell) {
    for (std::size_t i = 0; i < cloud.size(); ++i) cells_[key(coord(cloud[i]))].push_back(i);
  }

  template <typename Visit>
  void for_each_within(std::size_t i, double radius, Visit&& visit) const {
    const auto c = coord(cloud_[i]);
    const double r2 = radius * radius;
    for (long dx = -1; dx <= 1; ++dx) {
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == cells_.end()) continue;
          for (std::size_t j : it->second) {
            if (j == i) continue;
            const double d2 = (cloud_[j] - cloud_[i]).squaredNorm();
            if (d2 < r2) visit(j, std::sqrt(d2));
          }
        }
      }
    }
  }

 private:
  std::array<long, 3> coord(const Vec3& p) const {
    return {static_cast<long>(std::floor(p.x() / cell_)), static_cast<long>(std::floor(p.y() / cell_)),
            static_cast<long>(std::floor(p.z() / cell_))};
  }
  static std::uint64_t key(const std::array<long, 3>& c) {
    auto u = [](long v) { return static_cast<std::uint64_t>(v + (1L << 20)) & 0x1fffffu; };
    return (u(c[0]) << 42) | (u(c[1]) << 21) | u(c[2]);
  }

  const PointCloud& cloud_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

// Weighted sample elimination: repeatedly drop the sample whose neighbours
// crowd it most until `n` remain.
PointCloud eliminate_samples(const PointCloud& candidates, std::size_t n, double area) {
  const std::size_t m = candidates.size();
  const double r_max = std::sqrt(area / (2.0 * std::sqrt(3.0) * static_cast<double>(n)));
  const double r_min = r_max * 0.65 * (1.0 - std::pow(static_cast<double>(n) / static_cast<double>(m), 1.5));
  const double reach = 2.0 * r_max;
  auto weight = [&](double d) { return std::pow(1.0 - std::max(d, r_min) / reach, 8.0); };

  CellGrid grid(candidates, reach);
  std::vector<std::vector<std::pair<std::size_t, double>>> neighbours(m);
  std::vector<double> w(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    grid.for_each_within(i, reach, [&](std::size_t j, double d) {
      neighbours[i].emplace_back(j, d);
      w[i] += weight(d);
    });
  }

  // Max-heap keyed by (weight, -index); stale entries are skipped via versions.
  struct Entry {
    double weight;
    std::size_t index;
    std::size_t version;
    bool operator<(const Entry& o) const {
      if (weight != o.weight) return weight < o.weight;
      return index > o.index;
    }
  };
  std::priority_queue<Entry> heap;
  std::vector<std::size_t> version(m, 0);
  std::vector<bool> alive(m, true);
  for (std::size_t i = 0; i < m; ++i) heap.push({w[i], i, 0});
  std::size_t remaining = m;
  while (remaining > n) {
    Entry top = heap.top();
    heap.pop();
    if (!alive[top.index] || top.version != version[top.index]) continue;
    alive[top.index] = false;
    --remaining;
    for (auto [j, d] : neighbours[top.index]) {
      if (!alive[j]) continue;
      w[j] -= weight(d);
      heap.push({w[j], j, ++version[j]});
    }
  }
  PointCloud out;
  out.points.reserve(n);
  for (std::size_t i = 0; i < m; ++i) {
    if (alive[i]) out.points.push_back(candidates[i]);
  }
  return out;
}

}  // namespace

PointCloud sample_mesh(const TriangleMesh& mesh, std::size_t n, SamplingMode mode, Rng& rng) {
  if (mesh.faces.empty()) throw std::invalid_argument("sample_mesh: mesh has no faces");
  if (n == 0) throw std::invalid_argument("sample_mesh: requested zero points");
  if (mode == SamplingMode::uniform) return sample_uniform(mesh, n, rng);
  const PointCloud candidates = sample_uniform(mesh, 4 * n, rng);
  return eliminate_samples(candidates, n, mesh.total_area());
}

// ---------------------------------------------------------------------------
// Patches

std::vector<PatchPair> extract_patch_pairs(const PointCloud& dense, std::size_t count, std::size_t n,
                                           std::size_t r, Rng& rng) {
  if (n == 0 || r == 0) throw std::invalid_argument("extract_patch_pairs: N and r must be positive");
  if (dense.size() < r * n) {
    throw std::invalid_argument("extract_patch_pairs: dense cloud has " + std::to_string(dense.size()) +
                                " points, need at least " + std::to_string(r * n));
  }
  std::uniform_int_distribution<std::size_t> pick(0, dense.size() - 1);
  std::vector<PatchPair> pairs;
  pairs.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t seed = pick(rng);
    const auto target_idx = knn(dense, dense[seed], r * n);
    const PointCloud target = select(dense, target_idx);
    // target[0] is the seed itself, so FPS grows outward from the patch centre.
    const auto input_idx = farthest_point_sample(target, n, 0);
    const PointCloud input = select(target, input_idx);
    PatchPair pair;
    pair.norm = Normalization::fit(target);
    pair.target = pair.norm.apply(target);
    pair.input = pair.norm.apply(input);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

PointCloud merge_patches(std::span<const NormalizedPatch> patches, std::size_t target_count) {
  PointCloud all;
  for (const auto& p : patches) {
    PointCloud restored = p.norm.invert(p.points);
    all.points.insert(all.points.end(), restored.points.begin(), restored.points.end());
  }
  if (all.size() < target_count || target_count == 0) {
    throw std::invalid_argument("merge_patches: " + std::to_string(all.size()) + " points cannot yield " +
                                std::to_string(target_count));
  }
  return select(all, farthest_point_sample(all, target_count, 0));
}

// ---------------------------------------------------------------------------
// Point-to-triangle

double point_to_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  if (degenerate(a, b, c)) throw std::invalid_argument("point_to_triangle_distance: degenerate triangle");
  // Voronoi-region walk over vertices, edges, then the face.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return (p - a).norm();

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return (p - b).norm();

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return (p - (a + v * ab)).norm();
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return (p - c).norm();

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return (p - (a + w * ac)).norm();
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + w * (c - b))).norm();
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return (p - (a + ab * v + ac * w)).norm();
}

// ---------------------------------------------------------------------------
// Augmentation and noise

AugmentConfig AugmentConfig::training_defaults() {
  AugmentConfig c;
  c.rotate = true;
  c.scale_min = 0.8;
  c.scale_max = 1.2;
  c.perturb_sigma = 0.01;
  c.perturb_clip = 0.02;
  return c;
}

bool AugmentConfig::is_identity() const {
  return !rotate && scale_min == 1.0 && scale_max == 1.0 && perturb_sigma == 0.0;
}

PatchPair augment(const PatchPair& pair, Rng& rng, const AugmentConfig& config) {
  if (config.scale_min <= 0.0 || config.scale_min > config.scale_max) {
    throw std::invalid_argument("augment: scale range must satisfy 0 < min <= max");
  }
  if (config.perturb_sigma < 0.0 || config.perturb_clip < 0.0) {
    throw std::invalid_argument("augment: perturbation parameters must be non-negative");
  }
  PatchPair out = pair;
  Eigen::Matrix3d transform = Eigen::Matrix3d::Identity();
  bool transformed = false;
  if (config.rotate) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    q.normalize();
    transform = q.toRotationMatrix();
    transformed = true;
  }
  if (config.scale_min != 1.0 || config.scale_max != 1.0) {
    std::uniform_real_distribution<double> pick(config.scale_min, config.scale_max);
    transform *= pick(rng);
    transformed = true;
  }
  if (transformed) {
    for (auto& p : out.input.points) p = transform * p;
    for (auto& p : out.target.points) p = transform * p;
  }
  if (config.perturb_sigma > 0.0) {
    std::normal_distribution<double> jitter(0.0, config.perturb_sigma);
    for (auto& p : out.input.points) {
      for (int k = 0; k < 3; ++k) p[k] += std::clamp(jitter(rng), -config.perturb_clip, config.perturb_clip);
    }
  }
  return out;
}

PointCloud add_gaussian_noise(const PointCloud& cloud, double level, Rng& rng) {
  if (level < 0.0 || !std::isfinite(level)) throw std::invalid_argument("add_gaussian_noise: level must be >= 0");
  if (level == 0.0) return cloud;
  std::normal_distribution<double> gauss(0.0, level);
  PointCloud out = cloud;
  for (auto& p : out.points) {
    for (int k = 0; k < 3; ++k) p[k] += gauss(rng);
  }
  return out;
}

}  // namespace pumfa
