#pragma once

#include "pumfa/geometry.hpp"
#include "pumfa/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pumfa {

/// α(step) = start + (end − start)·step/total, clamped to [start, end].
struct LossSchedule {
  double alpha_start = 0.1;
  double alpha_end = 1.0;
  std::int64_t total_steps = 1;

  double alpha(std::int64_t step) const;
};

// Metrics on double-precision clouds. All throw on empty inputs.

/// Mean nearest-neighbour L2 distance P→D plus D→P (unsquared).
double chamfer_distance(const PointCloud& p, const PointCloud& d);
/// Same structure with 1 − exp(−distance) per nearest neighbour.
double density_aware_chamfer(const PointCloud& p, const PointCloud& d);
/// Symmetric by default; `directed` gives max over P of its nearest distance to D.
double hausdorff_distance(const PointCloud& p, const PointCloud& d, bool directed = false);
/// Mean over P of the distance to the closest mesh face.
double point_to_surface(const PointCloud& p, const TriangleMesh& mesh);

// Differentiable counterparts on (rows×3) tensors.

/// Distance from every row of `from` to its nearest row of `to`; gradients
/// reach both operands (zero at coincident points).
Tensor nearest_distances(const Tensor& from, const Tensor& to);
Tensor chamfer_loss(const Tensor& p, const Tensor& d);
Tensor density_aware_chamfer_loss(const Tensor& p, const Tensor& d);

/// CD(Q', D) + α·DCD(Q, D).
Tensor total_loss(const Tensor& coarse, const Tensor& dense, const Tensor& target, double alpha);

struct LossTerms {
  Tensor total;
  Tensor cd;   // CD(Q', D)
  Tensor dcd;  // DCD(Q, D)
};

/// Batched total loss: rows are stacked per patch and every term is the mean
/// over patches of that patch's own value.
LossTerms batched_total_loss(const Tensor& coarse, const Tensor& dense, const Tensor& target, std::size_t batch,
                             double alpha);

/// One row of an evaluation table. Values are stored in raw model units.
struct MetricRow {
  std::string shape;
  double noise = 0.0;
  double cd = 0.0;
  double hd = 0.0;
  double p2f = 0.0;
};

/// Fixed-width text table in 10⁻³ units, with a trailing mean row.
std::string format_metric_table(const std::vector<MetricRow>& rows, const std::string& note = "");
/// "shape,noise,cd,hd,p2f" header plus rows, values in 10⁻³ units.
std::string format_metric_csv(const std::vector<MetricRow>& rows);
/// CD per shape (rows) and noise level (columns, in first-seen order), 10⁻³
/// units, with a trailing mean row. Levels print in shortest form ("0.001").
std::string format_noise_table(const std::vector<MetricRow>& rows);
MetricRow average_rows(const std::vector<MetricRow>& rows, const std::string& label = "mean");

}  // namespace pumfa
