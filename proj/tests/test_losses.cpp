#include "support.hpp"

#include "pumfa/losses.hpp"
#include "pumfa/network.hpp"
#include "pumfa/shapes.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace pumfa;
using testing::random_cloud;

namespace {

PointCloud cloud_of(std::initializer_list<Vec3> pts) { return PointCloud{std::vector<Vec3>(pts)}; }

TriangleMesh flat_square(double half) {
  TriangleMesh m;
  m.vertices = {Vec3(-half, -half, 0), Vec3(half, -half, 0), Vec3(half, half, 0), Vec3(-half, half, 0)};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

}  // namespace

TEST_CASE("chamfer examples") {
  Rng rng(1);
  const PointCloud p = random_cloud(10, rng);
  CHECK(chamfer_distance(p, p) == 0.0);
  CHECK(chamfer_distance(cloud_of({Vec3(0, 0, 0)}), cloud_of({Vec3(3, 4, 0)})) == doctest::Approx(10.0));
  CHECK_THROWS_AS(chamfer_distance(PointCloud{}, p), std::invalid_argument);
}

TEST_CASE("density-aware chamfer examples") {
  Rng rng(2);
  const PointCloud p = random_cloud(10, rng);
  CHECK(density_aware_chamfer(p, p) == 0.0);
  PointCloud far = random_cloud(10, rng);
  for (auto& v : far.points) v += Vec3(20, 0, 0);  // e^{-d} still representable
  CHECK(density_aware_chamfer(p, far) < 2.0);
  CHECK(density_aware_chamfer(cloud_of({Vec3(0, 0, 0)}), cloud_of({Vec3(std::log(2.0), 0, 0)})) ==
        doctest::Approx(1.0));
  CHECK_THROWS_AS(density_aware_chamfer(p, PointCloud{}), std::invalid_argument);
}

TEST_CASE("hausdorff examples") {
  Rng rng(3);
  const PointCloud p = random_cloud(10, rng);
  CHECK(hausdorff_distance(p, p) == 0.0);
  const PointCloud a = cloud_of({Vec3(0, 0, 0)});
  const PointCloud b = cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0)});
  CHECK(hausdorff_distance(a, b) == doctest::Approx(1.0));
  CHECK(hausdorff_distance(a, b, true) == 0.0);
  CHECK(hausdorff_distance(b, a, true) == doctest::Approx(1.0));
  for (int t = 0; t < 50; ++t) {
    const PointCloud x = random_cloud(8, rng), y = random_cloud(5, rng);
    Vec3 lo = x[0], hi = x[0];
    for (const auto* c : {&x, &y}) {
      for (const auto& v : c->points) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
      }
    }
    CHECK(hausdorff_distance(x, y) <= (hi - lo).norm() + 1e-12);
  }
}

TEST_CASE("metrics match brute-force oracles, are symmetric and order DCD below CD") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
    const PointCloud p = random_cloud(n, rng), d = random_cloud(m, rng);
    const double cd = chamfer_distance(p, d), dcd = density_aware_chamfer(p, d), hd = hausdorff_distance(p, d);
    CHECK(std::abs(cd - testing::chamfer_reference(p, d)) < 1e-6);
    CHECK(std::abs(dcd - testing::dcd_reference(p, d)) < 1e-6);
    CHECK(std::abs(hd - testing::hausdorff_reference(p, d)) < 1e-6);
    CHECK(std::abs(cd - chamfer_distance(d, p)) < 1e-9);
    CHECK(std::abs(dcd - density_aware_chamfer(d, p)) < 1e-9);
    CHECK(std::abs(hd - hausdorff_distance(d, p)) < 1e-9);
    CHECK(dcd <= cd);
  }
}

TEST_CASE("metrics vanish on equal multisets in any order") {
  Rng rng(5);
  PointCloud p = random_cloud(20, rng);
  PointCloud q = p;
  std::shuffle(q.points.begin(), q.points.end(), rng);
  CHECK(chamfer_distance(p, q) < 1e-9);
  CHECK(density_aware_chamfer(p, q) < 1e-9);
  CHECK(hausdorff_distance(p, q) < 1e-9);
  q.points[0] += Vec3(0.01, 0, 0);
  CHECK(chamfer_distance(p, q) > 1e-9);
}

TEST_CASE("point to surface") {
  const TriangleMesh sphere = builtin_mesh("sphere");
  Rng rng(6);
  const PointCloud on = sample_mesh(sphere, 200, SamplingMode::uniform, rng);
  CHECK(point_to_surface(on, sphere) < 1e-6);

  const TriangleMesh plane = flat_square(100.0);
  CHECK(point_to_surface(cloud_of({Vec3(0.3, -2, 0.75)}), plane) == doctest::Approx(0.75));

  PointCloud some = cloud_of({Vec3(0, 0, 0.1), Vec3(1, 1, -0.2)});
  const double before = point_to_surface(some, plane);
  some.points.emplace_back(0, 0, 5);
  CHECK(point_to_surface(some, plane) >= before);

  // Mean of per-point minima over faces, checked against the reference distance.
  const PointCloud pts = random_cloud(30, rng, 1.5);
  double expected = 0.0;
  for (const auto& x : pts.points) {
    double best = 1e300;
    for (const auto& f : sphere.faces) {
      best = std::min(best, testing::triangle_distance_reference(x, sphere.vertices[f[0]], sphere.vertices[f[1]],
                                                                 sphere.vertices[f[2]]));
    }
    expected += best;
  }
  CHECK(point_to_surface(pts, sphere) == doctest::Approx(expected / 30.0).epsilon(1e-9));
  CHECK_THROWS_AS(point_to_surface(PointCloud{}, plane), std::invalid_argument);
  CHECK_THROWS_AS(point_to_surface(pts, TriangleMesh{}), std::invalid_argument);
}

TEST_CASE("loss schedule") {
  LossSchedule s{0.1, 1.0, 100};
  CHECK(s.alpha(0) == 0.1);
  CHECK(s.alpha(100) == 1.0);
  CHECK(s.alpha(50) == doctest::Approx(0.55));
  CHECK(s.alpha(500) == 1.0);
  CHECK(s.alpha(-3) == 0.1);
}

TEST_CASE("differentiable losses agree with the metrics") {
  Rng rng(7);
  const PointCloud p = random_cloud(25, rng), d = random_cloud(25, rng);
  const Tensor tp = cloud_to_tensor(p), td = cloud_to_tensor(d);
  CHECK(chamfer_loss(tp, td).item() == doctest::Approx(chamfer_distance(p, d)).epsilon(1e-12));
  CHECK(density_aware_chamfer_loss(tp, td).item() == doctest::Approx(density_aware_chamfer(p, d)).epsilon(1e-12));
}

TEST_CASE("total loss combines coarse chamfer with scheduled dense term") {
  Rng rng(8);
  const PointCloud qc = random_cloud(16, rng), q = random_cloud(16, rng), d = random_cloud(16, rng);
  const Tensor tc = cloud_to_tensor(qc), tq = cloud_to_tensor(q), td = cloud_to_tensor(d);
  LossSchedule s{0.1, 1.0, 10};
  CHECK(total_loss(tc, tq, td, s.alpha(0)).item() ==
        doctest::Approx(testing::chamfer_reference(qc, d) + 0.1 * testing::dcd_reference(q, d)).epsilon(1e-12));
  CHECK(total_loss(tc, tq, td, s.alpha(10)).item() ==
        doctest::Approx(testing::chamfer_reference(qc, d) + testing::dcd_reference(q, d)).epsilon(1e-12));
  CHECK(total_loss(td, td, td, 0.7).item() == 0.0);
  CHECK_THROWS_AS(total_loss(tc, cloud_to_tensor(random_cloud(15, rng)), td, 0.1), DimensionError);

  const Tensor c2 = clouds_to_tensor(std::vector<PointCloud>{qc, q});
  const Tensor q2 = clouds_to_tensor(std::vector<PointCloud>{q, qc});
  const Tensor d2 = clouds_to_tensor(std::vector<PointCloud>{d, q});
  const LossTerms terms = batched_total_loss(c2, q2, d2, 2, 0.4);
  const double cd = 0.5 * (testing::chamfer_reference(qc, d) + testing::chamfer_reference(q, q));
  const double dcd = 0.5 * (testing::dcd_reference(q, d) + testing::dcd_reference(qc, q));
  CHECK(terms.cd.item() == doctest::Approx(cd).epsilon(1e-12));
  CHECK(terms.dcd.item() == doctest::Approx(dcd).epsilon(1e-12));
  CHECK(terms.total.item() == doctest::Approx(cd + 0.4 * dcd).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(9);
  const Tensor p = testing::random_tensor({12, 3}, rng);
  const Tensor d = testing::random_tensor({12, 3}, rng);
  const Tensor q = testing::random_tensor({12, 3}, rng);
  for (const auto& [name, f] : std::vector<std::pair<const char*, std::function<Tensor()>>>{
           {"cd", [&] { return chamfer_loss(p, d); }},
           {"dcd", [&] { return density_aware_chamfer_loss(p, d); }},
           {"total", [&] { return total_loss(p, q, d, 0.3); }},
           {"batched", [&] { return batched_total_loss(p, q, d, 3, 0.6).total; }}}) {
    CAPTURE(name);
    const auto r = testing::grad_check(f, {p, q, d}, rng);
    CHECK_MESSAGE(r.max_rel < 1e-3, r.worst);
  }
}

TEST_CASE("metric reports") {
  const std::vector<MetricRow> rows{{"sphere", 0.0, 1e-3, 2e-3, 3e-3}, {"sphere", 0.01, 3e-3, 4e-3, 5e-3},
                                    {"torus", 0.0, 2e-3, 1e-3, 1e-3}, {"torus", 0.01, 5e-3, 6e-3, 7e-3}};
  const MetricRow mean = average_rows(rows);
  CHECK(mean.cd == doctest::Approx((1 + 3 + 2 + 5) * 1e-3 / 4).epsilon(1e-12));
  double sum = 0.0;
  for (const auto& r : rows) sum += r.p2f;
  CHECK(std::abs(mean.p2f * 4 - sum) < 1e-9);

  const std::string table = format_metric_table(rows, "note here");
  CHECK(table.rfind("# note here\n", 0) == 0);
  CHECK(table.find("CD(1e-3)") != std::string::npos);
  CHECK(table.find("mean") != std::string::npos);
  CHECK(table.find("2.7500") != std::string::npos);
  CHECK(table.find("mean                   all") != std::string::npos);
  CHECK(format_metric_table({rows[0], rows[2]}).find("mean                 0.000") != std::string::npos);

  const std::string csv = format_metric_csv(rows);
  CHECK(csv.rfind("shape,noise,cd,hd,p2f\n", 0) == 0);
  CHECK(csv.find("torus,0.01,5,6,7\n") != std::string::npos);

  const std::string noise = format_noise_table(rows);
  std::istringstream in(noise);
  std::string header, label, a, b;
  std::getline(in, header);
  std::istringstream hs(header);
  hs >> label >> a >> b;
  CHECK(a == "0");
  CHECK(b == "0.01");
  CHECK(noise.find("sphere") != std::string::npos);
  CHECK(noise.find("4.0000") != std::string::npos);  // mean CD at 0.01
}

TEST_CASE("noise table header lists the standard levels exactly") {
  std::vector<MetricRow> rows;
  for (double l : {0.0, 0.001, 0.005, 0.01, 0.015, 0.02}) rows.push_back({"box", l, 1e-3, 1e-3, 1e-3});
  std::istringstream in(format_noise_table(rows));
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string label;
  hs >> label;
  std::vector<std::string> levels;
  for (std::string s; hs >> s;) levels.push_back(s);
  CHECK(levels == std::vector<std::string>{"0", "0.001", "0.005", "0.01", "0.015", "0.02"});
}
