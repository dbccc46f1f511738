#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace pumfa {

using Vec3 = Eigen::Vector3d;
using Rng = std::mt19937_64;

/// Unordered 3-D point set in model units.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Vec3& operator[](std::size_t i) const { return points[i]; }
  Vec3& operator[](std::size_t i) { return points[i]; }
};

/// Throws unless the cloud is non-empty with finite coordinates.
void validate(const PointCloud& cloud);

PointCloud select(const PointCloud& cloud, std::span<const std::size_t> indices);

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> faces;

  double face_area(std::size_t f) const;
  double total_area() const;
};

/// Checks index ranges and drops zero-area faces. Throws on out-of-range indices.
void sanitize(TriangleMesh& mesh);

/// Translation + isotropic scale mapping a patch into the unit ball.
struct Normalization {
  Vec3 centroid = Vec3::Zero();
  double scale = 1.0;

  /// Centroid = mean point, scale = farthest distance from it (1 if all coincide).
  static Normalization fit(const PointCloud& cloud);
  PointCloud apply(const PointCloud& cloud) const;
  PointCloud invert(const PointCloud& cloud) const;
};

/// One training example: a sparse input patch and its dense ground truth,
/// both expressed in the frame given by `norm`.
struct PatchPair {
  PointCloud input;
  PointCloud target;
  Normalization norm;
};

/// An upsampled patch still expressed in its normalised frame.
struct NormalizedPatch {
  PointCloud points;
  Normalization norm;
};

/// Indices of the k nearest points to `query`, ascending by distance; ties go
/// to the lower index.
std::vector<std::size_t> knn(const PointCloud& points, const Vec3& query, std::size_t k);

/// Row-major N×k neighbour table: row i is knn(points, points[i], k).
std::vector<std::size_t> knn_table(const PointCloud& points, std::size_t k);

/// Greedy max-min subset of size m starting at `seed`. Ties go to the lower
/// index. Returned in selection order.
std::vector<std::size_t> farthest_point_sample(const PointCloud& points, std::size_t m, std::size_t seed = 0);

enum class SamplingMode { uniform, poisson };

/// Samples n surface points. Poisson mode draws 4n area-weighted samples and
/// thins them by weighted sample elimination.
PointCloud sample_mesh(const TriangleMesh& mesh, std::size_t n, SamplingMode mode, Rng& rng);

/// `count` pairs: target = r·N nearest points to a random seed, input = FPS of
/// the target down to N, both normalised by the target's frame.
std::vector<PatchPair> extract_patch_pairs(const PointCloud& dense, std::size_t count, std::size_t n,
                                           std::size_t r, Rng& rng);

/// Denormalises, concatenates and FPS-reduces patches to `target_count` points.
PointCloud merge_patches(std::span<const NormalizedPatch> patches, std::size_t target_count);

/// Exact distance from p to the closed triangle (a, b, c).
double point_to_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct AugmentConfig {
  bool rotate = false;
  double scale_min = 1.0;
  double scale_max = 1.0;
  double perturb_sigma = 0.0;
  double perturb_clip = 0.02;

  /// Random rotation, scale in [0.8, 1.2], perturbation sigma 0.01 clipped at 0.02.
  static AugmentConfig training_defaults();
  bool is_identity() const;
};

/// Applies one random rotation/scale to both clouds and perturbs the input only.
PatchPair augment(const PatchPair& pair, Rng& rng, const AugmentConfig& config);

/// Adds i.i.d. N(0, level²) offsets to every coordinate.
PointCloud add_gaussian_noise(const PointCloud& cloud, double level, Rng& rng);

}  // namespace pumfa
