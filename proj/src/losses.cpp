#include "pumfa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pumfa {

double LossSchedule::alpha(std::int64_t step) const {
  const double total = static_cast<double>(std::max<std::int64_t>(total_steps, 1));
  const double a = alpha_start + (alpha_end - alpha_start) * static_cast<double>(step) / total;
  return std::clamp(a, std::min(alpha_start, alpha_end), std::max(alpha_start, alpha_end));
}

namespace {

void require_non_empty(const PointCloud& p, const PointCloud& d, const char* what) {
  if (p.empty() || d.empty()) throw std::invalid_argument(std::string(what) + ": empty point cloud");
}

std::vector<double> nearest(const PointCloud& from, const PointCloud& to) {
  std::vector<double> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to.points) best = std::min(best, (from[i] - q).squaredNorm());
    out[i] = std::sqrt(best);
  }
  return out;
}

template <typename F>
double mean_of(const std::vector<double>& v, F f) {
  double s = 0.0;
  for (double x : v) s += f(x);
  return s / static_cast<double>(v.size());
}

}  // namespace

double chamfer_distance(const PointCloud& p, const PointCloud& d) {
  require_non_empty(p, d, "chamfer_distance");
  auto id = [](double x) { return x; };
  return mean_of(nearest(p, d), id) + mean_of(nearest(d, p), id);
}

double density_aware_chamfer(const PointCloud& p, const PointCloud& d) {
  require_non_empty(p, d, "density_aware_chamfer");
  auto f = [](double x) { return 1.0 - std::exp(-x); };
  return mean_of(nearest(p, d), f) + mean_of(nearest(d, p), f);
}

double hausdorff_distance(const PointCloud& p, const PointCloud& d, bool directed) {
  require_non_empty(p, d, "hausdorff_distance");
  const auto pd = nearest(p, d);
  double h = *std::max_element(pd.begin(), pd.end());
  if (!directed) {
    const auto dp = nearest(d, p);
    h = std::max(h, *std::max_element(dp.begin(), dp.end()));
  }
  return h;
}

double point_to_surface(const PointCloud& p, const TriangleMesh& mesh) {
  if (p.empty()) throw std::invalid_argument("point_to_surface: empty point cloud");
  if (mesh.faces.empty()) throw std::invalid_argument("point_to_surface: mesh has no faces");
  // Axis-aligned box per face prunes faces that cannot beat the current best.
  struct Box {
    Vec3 lo, hi;
  };
  std::vector<Box> boxes(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    boxes[f].lo = mesh.vertices[t[0]].cwiseMin(mesh.vertices[t[1]]).cwiseMin(mesh.vertices[t[2]]);
    boxes[f].hi = mesh.vertices[t[0]].cwiseMax(mesh.vertices[t[1]]).cwiseMax(mesh.vertices[t[2]]);
  }
  double total = 0.0;
  for (const auto& x : p.points) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      const Vec3 gap = (boxes[f].lo - x).cwiseMax(x - boxes[f].hi).cwiseMax(Vec3::Zero());
      if (gap.norm() >= best) continue;
      const auto& t = mesh.faces[f];
      best = std::min(best, point_to_triangle_distance(x, mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]));
    }
    total += best;
  }
  return total / static_cast<double>(p.size());
}

// ---------------------------------------------------------------------------
// Differentiable losses

Tensor nearest_distances(const Tensor& from, const Tensor& to) {
  if (from.rank() != 2 || to.rank() != 2 || from.dim(1) != 3 || to.dim(1) != 3) {
    throw DimensionError("nearest_distances: expected R×3 operands, got " + shape_str(from.shape()) + " and " +
                         shape_str(to.shape()));
  }
  const std::size_t n = from.dim(0), m = to.dim(0);
  auto a = from.data();
  auto b = to.data();
  Buffer dist(n);
  std::vector<std::size_t> arg(n);
  for (std::size_t i = 0; i < n; ++i) {
    real best = std::numeric_limits<real>::infinity();
    std::size_t best_j = 0;
    const real ax = a[3 * i], ay = a[3 * i + 1], az = a[3 * i + 2];
    for (std::size_t j = 0; j < m; ++j) {
      const real dx = ax - b[3 * j], dy = ay - b[3 * j + 1], dz = az - b[3 * j + 2];
      const real d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) {
        best = d2;
        best_j = j;
      }
    }
    dist[i] = std::sqrt(best);
    arg[i] = best_j;
  }
  if (!grad_enabled() || !(from.requires_grad() || to.requires_grad())) return Tensor::from({n}, std::move(dist));
  Buffer saved = dist;
  return Tensor::make_result({n}, std::move(dist), {from, to},
                             [from, to, arg = std::move(arg), d = std::move(saved)](std::span<const real> g) {
                               auto a = from.data();
                               auto b = to.data();
                               std::span<real> ga, gb;
                               if (from.requires_grad()) ga = from.grad_buffer();
                               if (to.requires_grad()) gb = to.grad_buffer();
                               for (std::size_t i = 0; i < arg.size(); ++i) {
                                 if (d[i] <= 0.0) continue;
                                 const std::size_t j = arg[i];
                                 for (int c = 0; c < 3; ++c) {
                                   const real unit = (a[3 * i + c] - b[3 * j + c]) / d[i];
                                   if (!ga.empty()) ga[3 * i + c] += g[i] * unit;
                                   if (!gb.empty()) gb[3 * j + c] -= g[i] * unit;
                                 }
                               }
                             });
}

Tensor chamfer_loss(const Tensor& p, const Tensor& d) {
  return add(mean(nearest_distances(p, d)), mean(nearest_distances(d, p)));
}

namespace {

Tensor one_minus_exp_neg(const Tensor& x) { return add_scalar(scale(exp(scale(x, -1.0)), -1.0), 1.0); }

}  // namespace

Tensor density_aware_chamfer_loss(const Tensor& p, const Tensor& d) {
  return add(mean(one_minus_exp_neg(nearest_distances(p, d))), mean(one_minus_exp_neg(nearest_distances(d, p))));
}

Tensor total_loss(const Tensor& coarse, const Tensor& dense, const Tensor& target, double alpha) {
  if (coarse.shape() != dense.shape() || coarse.shape() != target.shape()) {
    throw DimensionError("total_loss: Q' " + shape_str(coarse.shape()) + ", Q " + shape_str(dense.shape()) + ", D " +
                         shape_str(target.shape()) + " must match");
  }
  return add(chamfer_loss(coarse, target), scale(density_aware_chamfer_loss(dense, target), static_cast<real>(alpha)));
}

LossTerms batched_total_loss(const Tensor& coarse, const Tensor& dense, const Tensor& target, std::size_t batch,
                             double alpha) {
  if (coarse.shape() != dense.shape() || coarse.shape() != target.shape()) {
    throw DimensionError("batched_total_loss: Q' " + shape_str(coarse.shape()) + ", Q " + shape_str(dense.shape()) +
                         ", D " + shape_str(target.shape()) + " must match");
  }
  if (batch == 0 || coarse.dim(0) % batch != 0) throw DimensionError("batched_total_loss: rows not divisible by batch");
  LossTerms terms;
  if (batch == 1) {
    terms.cd = chamfer_loss(coarse, target);
    terms.dcd = density_aware_chamfer_loss(dense, target);
  } else {
    const std::size_t rows = coarse.dim(0) / batch;
    for (std::size_t b = 0; b < batch; ++b) {
      std::vector<std::size_t> idx(rows);
      for (std::size_t i = 0; i < rows; ++i) idx[i] = b * rows + i;
      const Tensor t = gather_rows(target, idx);
      const Tensor cd = chamfer_loss(gather_rows(coarse, idx), t);
      const Tensor dcd = density_aware_chamfer_loss(gather_rows(dense, idx), t);
      terms.cd = terms.cd.defined() ? add(terms.cd, cd) : cd;
      terms.dcd = terms.dcd.defined() ? add(terms.dcd, dcd) : dcd;
    }
    terms.cd = scale(terms.cd, 1.0 / static_cast<real>(batch));
    terms.dcd = scale(terms.dcd, 1.0 / static_cast<real>(batch));
  }
  terms.total = add(terms.cd, scale(terms.dcd, static_cast<real>(alpha)));
  return terms;
}

// ---------------------------------------------------------------------------
// Reports

MetricRow average_rows(const std::vector<MetricRow>& rows, const std::string& label) {
  MetricRow m;
  m.shape = label;
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.cd += r.cd;
    m.hd += r.hd;
    m.p2f += r.p2f;
  }
  const double n = static_cast<double>(rows.size());
  m.cd /= n;
  m.hd /= n;
  m.p2f /= n;
  m.noise = rows.front().noise;
  return m;
}

std::string format_metric_table(const std::vector<MetricRow>& rows, const std::string& note) {
  std::ostringstream os;
  if (!note.empty()) os << "# " << note << '\n';
  os << std::left << std::setw(16) << "shape" << std::right << std::setw(10) << "noise" << std::setw(14) << "CD(1e-3)"
     << std::setw(14) << "HD(1e-3)" << std::setw(14) << "P2F(1e-3)" << '\n';
  auto line = [&](const MetricRow& r, bool mixed_noise) {
    os << std::left << std::setw(16) << r.shape << std::right << std::fixed << std::setprecision(3) << std::setw(10);
    if (mixed_noise) {
      os << "all";
    } else {
      os << r.noise;
    }
    os << std::setprecision(4) << std::setw(14) << r.cd * 1e3 << std::setw(14) << r.hd * 1e3 << std::setw(14)
       << r.p2f * 1e3 << '\n';
  };
  for (const auto& r : rows) line(r, false);
  if (!rows.empty()) {
    const bool mixed = std::any_of(rows.begin(), rows.end(), [&](const MetricRow& r) { return r.noise != rows.front().noise; });
    line(average_rows(rows), mixed);
  }
  return os.str();
}

std::string format_metric_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "shape,noise,cd,hd,p2f\n";
  os << std::setprecision(9);
  for (const auto& r : rows) {
    os << r.shape << ',' << r.noise << ',' << r.cd * 1e3 << ',' << r.hd * 1e3 << ',' << r.p2f * 1e3 << '\n';
  }
  return os.str();
}

std::string format_noise_table(const std::vector<MetricRow>& rows) {
  std::vector<double> levels;
  std::vector<std::string> shapes;
  for (const auto& r : rows) {
    if (std::find(levels.begin(), levels.end(), r.noise) == levels.end()) levels.push_back(r.noise);
    if (std::find(shapes.begin(), shapes.end(), r.shape) == shapes.end()) shapes.push_back(r.shape);
  }
  std::ostringstream os;
  os << std::left << std::setw(16) << "CD(1e-3)" << std::right;
  for (double l : levels) {
    std::ostringstream level;
    level << l;
    os << std::setw(12) << level.str();
  }
  os << '\n';
  std::vector<double> total(levels.size(), 0.0);
  std::vector<std::size_t> count(levels.size(), 0);
  for (const auto& shape : shapes) {
    os << std::left << std::setw(16) << shape << std::right << std::fixed << std::setprecision(4);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      auto it = std::find_if(rows.begin(), rows.end(),
                             [&](const MetricRow& r) { return r.shape == shape && r.noise == levels[l]; });
      if (it == rows.end()) {
        os << std::setw(12) << "-";
        continue;
      }
      os << std::setw(12) << it->cd * 1e3;
      total[l] += it->cd;
      ++count[l];
    }
    os << '\n';
    os.unsetf(std::ios::floatfield);
  }
  if (!shapes.empty()) {
    os << std::left << std::setw(16) << "mean" << std::right << std::fixed << std::setprecision(4);
    for (std::size_t l = 0; l < levels.size(); ++l) os << std::setw(12) << (count[l] ? total[l] / count[l] * 1e3 : 0.0);
    os << '\n';
  }
  return os.str();
}

}  // namespace pumfa
