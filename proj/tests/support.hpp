#pragma once

// Shared helpers for the test binaries: random inputs, brute-force reference
// implementations and a central-difference gradient checker.

#include "pumfa/geometry.hpp"
#include "pumfa/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace pumfa::testing {

PointCloud random_cloud(std::size_t n, Rng& rng, double spread = 1.0);
Tensor random_tensor(const Shape& shape, Rng& rng, double spread = 1.0, bool requires_grad = true);
/// Adds N(0, sigma²) to every element, moving parameters off ReLU kinks and
/// exact zeros.
void jitter(const std::vector<Tensor>& params, Rng& rng, double sigma);
/// Fresh temporary directory under the system temp path.
std::string temp_dir(const std::string& tag);

// Reference implementations: plain loops, no shared code with the library.
std::vector<std::size_t> knn_reference(const PointCloud& points, const Vec3& query, std::size_t k);
std::vector<std::size_t> fps_reference(const PointCloud& points, std::size_t m, std::size_t seed);
double chamfer_reference(const PointCloud& a, const PointCloud& b);
double dcd_reference(const PointCloud& a, const PointCloud& b);
double hausdorff_reference(const PointCloud& a, const PointCloud& b);
/// Plane projection when inside, else the nearest of the three clamped edge
/// projections.
double triangle_distance_reference(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "input[i] analytic vs numeric"
};

/// Compares the analytic gradient of the scalar f() against central
/// differences for `samples` random elements of every input (0 = all).
/// rel = |a − n| / max(|a|, |n|, floor).
GradCheck grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, Rng& rng,
                     std::size_t samples = 0, double h = 1e-5, double floor = 1e-5);

}  // namespace pumfa::testing
