#include "support.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>

namespace pumfa::testing {

PointCloud random_cloud(std::size_t n, Rng& rng, double spread) {
  std::normal_distribution<double> nd(0.0, spread);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(nd(rng), nd(rng), nd(rng));
  return c;
}

Tensor random_tensor(const Shape& shape, Rng& rng, double spread, bool requires_grad) {
  std::normal_distribution<double> nd(0.0, spread);
  Buffer v(shape_numel(shape));
  for (auto& x : v) x = static_cast<real>(nd(rng));
  return Tensor::from(shape, std::move(v), requires_grad);
}

void jitter(const std::vector<Tensor>& params, Rng& rng, double sigma) {
  std::normal_distribution<double> nd(0.0, sigma);
  for (Tensor t : params) {
    for (auto& v : t.mutable_data()) v += static_cast<real>(nd(rng));
  }
}

std::string temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  auto dir = std::filesystem::temp_directory_path() /
             ("pumfa_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::vector<std::size_t> knn_reference(const PointCloud& points, const Vec3& query, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < points.size(); ++i) all.emplace_back((points[i] - query).squaredNorm(), i);
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

std::vector<std::size_t> fps_reference(const PointCloud& points, std::size_t m, std::size_t seed) {
  std::vector<std::size_t> chosen{seed};
  while (chosen.size() < m) {
    double best = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double nearest = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) nearest = std::min(nearest, (points[i] - points[c]).squaredNorm());
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      if (nearest > best) {
        best = nearest;
        best_i = i;
      }
    }
    chosen.push_back(best_i);
  }
  return chosen;
}

namespace {

std::vector<double> nearest(const PointCloud& a, const PointCloud& b) {
  std::vector<double> out;
  for (const auto& p : a.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b.points) best = std::min(best, (p - q).norm());
    out.push_back(best);
  }
  return out;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

}  // namespace

double chamfer_reference(const PointCloud& a, const PointCloud& b) { return mean_of(nearest(a, b)) + mean_of(nearest(b, a)); }

double dcd_reference(const PointCloud& a, const PointCloud& b) {
  auto sat = [](std::vector<double> v) {
    for (auto& x : v) x = 1.0 - std::exp(-x);
    return v;
  };
  return mean_of(sat(nearest(a, b))) + mean_of(sat(nearest(b, a)));
}

double hausdorff_reference(const PointCloud& a, const PointCloud& b) {
  const auto ab = nearest(a, b), ba = nearest(b, a);
  return std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
}

double triangle_distance_reference(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a).normalized();
  const Vec3 proj = p - n * (p - a).dot(n);
  // barycentric coordinates of the projection via signed sub-areas
  const double area = (b - a).cross(c - a).dot(n);
  const double u = (c - b).cross(proj - b).dot(n) / area;
  const double v = (a - c).cross(proj - c).dot(n) / area;
  const double w = 1.0 - u - v;
  if (u >= 0 && v >= 0 && w >= 0) return std::abs((p - a).dot(n));
  return std::min({segment_distance(p, a, b), segment_distance(p, b, c), segment_distance(p, c, a)});
}

GradCheck grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, Rng& rng,
                     std::size_t samples, double h, double floor) {
  for (Tensor t : inputs) t.zero_grad();
  f().backward();
  std::vector<Buffer> analytic;
  for (const Tensor& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }
  GradCheck out;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k];
    std::vector<std::size_t> idx(t.numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (samples > 0 && samples < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(samples);
    }
    for (std::size_t i : idx) {
      auto d = t.mutable_data();
      const real orig = d[i];
      d[i] = orig + h;
      const double up = f().item();
      d[i] = orig - h;
      const double down = f().item();
      d[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        std::ostringstream os;
        os << "input " << k << '[' << i << "] analytic " << a << " numeric " << numeric;
        out.worst = os.str();
      }
    }
  }
  return out;
}

}  // namespace pumfa::testing
