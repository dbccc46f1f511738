#include "support.hpp"

#include "pumfa/network.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace pumfa;
using testing::random_cloud;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.points = 16;
  c.ratio = 2;
  c.depth = 3;
  c.channels = 4;
  c.expansion = 2;
  c.coarse_channels = 4;
  c.coarse_expansion = 2;
  c.heads = 2;
  c.patch_size = 4;
  return c;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

bool all_nonzero_grads(const Tensor& t) {
  return std::any_of(t.grad().begin(), t.grad().end(), [](real v) { return v != 0.0; });
}

}  // namespace

TEST_CASE("config defaults and validation") {
  const ModelConfig p = ModelConfig::paper();
  CHECK(p.points == 256);
  CHECK(p.ratio == 4);
  CHECK(p.depth == 4);
  CHECK(p.channels == 16);
  CHECK(p.expansion == 4);
  CHECK(p.coarse_channels == 32);
  CHECK(p.coarse_expansion == 8);
  CHECK(p.heads == 8);
  CHECK(p.patch_size == 20);
  CHECK(p.coarse_plan() == std::vector<std::size_t>{3, 32, 256, 64, 12});
  CHECK(p.feature_width(4) == 1024);
  CHECK(p.refined_width(1) == 256);
  CHECK(p.refined_width(2) == 64);
  CHECK(p.refined_width(3) == 16);
  CHECK(p.refined_width(4) == 12);
  CHECK_NOTHROW(ModelConfig::desk().validate());

  ModelConfig bad = tiny();
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny();
  bad.patch_size = 17;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny();
  bad.depth = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK(ModelConfig::from_map(tiny().to_map()).to_map() == tiny().to_map());
}

TEST_CASE("single-layer pyramid at paper width") {
  ModelConfig c;
  c.depth = 1;
  ModelParams params = ModelParams::init(c, 1);
  Rng rng(1);
  const PointCloud s = random_cloud(256, rng);
  const auto pyramid = mfe_forward(params, make_point_batch(std::span(&s, 1), c.patch_size));
  REQUIRE(pyramid.size() == 1);
  CHECK(pyramid[0].shape() == Shape{256, 16});
}

TEST_CASE("shape contracts hold over random small configurations") {
  Rng rng(2);
  auto pick = [&](std::initializer_list<std::size_t> xs) {
    return *(xs.begin() + std::uniform_int_distribution<std::size_t>(0, xs.size() - 1)(rng));
  };
  for (int trial = 0; trial < 12; ++trial) {
    ModelConfig c;
    c.heads = pick({1, 2});
    c.points = pick({8, 12, 20});
    c.ratio = pick({1, 2, 3, 4});
    c.depth = pick({1, 2, 3});
    c.channels = c.heads * pick({1, 2, 3});
    c.expansion = pick({1, 2, 3});
    c.coarse_channels = pick({2, 4, 6});
    c.coarse_expansion = pick({2, 4});
    c.patch_size = pick({1, 3, 5});
    if (c.global_width() % 4 != 0) c.coarse_expansion = 4;
    CAPTURE(c.to_map());
    REQUIRE_NOTHROW(c.validate());
    ModelParams params = ModelParams::init(c, static_cast<std::uint64_t>(trial));
    std::vector<PointCloud> batch{random_cloud(c.points, rng), random_cloud(c.points, rng)};
    const ForwardResult r = pumfa_forward(params, batch);
    const std::size_t rows = 2 * c.points;
    REQUIRE(r.features.size() == c.depth);
    for (std::size_t h = 1; h <= c.depth; ++h) CHECK(r.features[h - 1].shape() == Shape{rows, c.feature_width(h)});
    CHECK(r.global_features.shape() == Shape{rows, c.global_width()});
    REQUIRE(r.refined.size() == c.depth);
    for (std::size_t j = 1; j <= c.depth; ++j) CHECK(r.refined[j - 1].shape() == Shape{rows, c.refined_width(j)});
    for (const Tensor* t : {&r.coarse, &r.refinement, &r.dense}) CHECK(t->shape() == Shape{rows * c.ratio, 3});
  }
}

TEST_CASE("duplicate layout and coarse identity at init") {
  Rng rng(3);
  const ModelConfig c = tiny();
  ModelParams params = ModelParams::init(c, 3);
  const PointCloud s = random_cloud(c.points, rng);
  const Tensor coords = cloud_to_tensor(s);
  const Tensor dup = duplicate_points(coords, 3);
  for (std::size_t i = 0; i < c.points; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 3; ++k) CHECK(dup.at(3 * i + j, k) == coords.at(i, k));
    }
  }
  const CoarseOutput coarse = cpg_forward(params, make_point_batch(std::span(&s, 1), c.patch_size));
  const Tensor expected = duplicate_points(coords, c.ratio);
  CHECK(std::equal(coarse.coarse.data().begin(), coarse.coarse.data().end(), expected.data().begin()));

  const ForwardResult r = pumfa_forward(params, std::span(&s, 1));
  CHECK(std::equal(r.dense.data().begin(), r.dense.data().end(), expected.data().begin()));
}

TEST_CASE("dense output is the coarse output plus the refinement") {
  Rng rng(4);
  ModelConfig c = tiny();
  c.zero_init_residual = false;
  ModelParams params = ModelParams::init(c, 4);
  const PointCloud s = random_cloud(c.points, rng);
  const ForwardResult r = pumfa_forward(params, std::span(&s, 1));
  for (std::size_t i = 0; i < r.dense.numel(); ++i) {
    CHECK(r.dense.data()[i] == r.coarse.data()[i] + r.refinement.data()[i]);
    CHECK(std::abs((r.dense.data()[i] - r.coarse.data()[i]) - r.refinement.data()[i]) < 1e-12);
    CHECK(std::isfinite(r.dense.data()[i]));
  }
  bool moved = false;
  for (std::size_t i = 0; i < r.refinement.numel(); ++i) moved |= r.refinement.data()[i] != 0.0;
  CHECK(moved);
}

TEST_CASE("self-attention block") {
  Rng rng(5);
  const ModelConfig c = tiny();
  ModelParams params = ModelParams::init(c, 5);
  const Tensor coarse = testing::random_tensor({c.points * c.ratio, 3}, rng, 1.0, false);
  std::vector<AttentionScores> scores;
  const Tensor gfs = sab_forward(params, coarse, 1, &scores);
  CHECK(gfs.shape() == Shape{c.points, c.global_width()});
  REQUIRE(scores.size() == c.sab_depth);
  CHECK(scores[0].query_rows == c.points);
  CHECK(scores[0].key_rows == c.points);
  for (std::size_t h = 0; h < scores[0].heads; ++h) {
    for (std::size_t i = 0; i < c.points; ++i) {
      const auto row = scores[0].row(0, h, i);
      CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-5);
    }
  }
  const Tensor folded = pixel_unshuffle(coarse, c.ratio);
  CHECK(folded.shape() == Shape{c.points, 3 * c.ratio});
  const Tensor back = pixel_shuffle(folded, c.ratio);
  CHECK(std::equal(back.data().begin(), back.data().end(), coarse.data().begin()));
  CHECK_THROWS_AS(sab_forward(params, testing::random_tensor({c.points * c.ratio + 1, 3}, rng, 1.0, false), 1),
                  DimensionError);
}

TEST_CASE("refiner wiring: deepest features query the raw global features first") {
  const ModelConfig c = tiny();
  ModelParams params = ModelParams::init(c, 6);
  REQUIRE(params.refiner.size() == c.depth);
  CHECK(params.refiner[0].attention.query.in() == c.feature_width(c.depth));
  CHECK(params.refiner[0].attention.key.in() == c.global_width());
  for (std::size_t j = 1; j <= c.depth; ++j) {
    CHECK(params.refiner[j - 1].attention.query.in() == c.feature_width(c.depth - j + 1));
    CHECK(params.refiner[j - 1].feed_forward.second.out() == c.refined_width(j));
  }
  CHECK(params.refiner_out.in() == 3 * c.ratio);
  CHECK(params.refiner_out.out() == 3 * c.ratio);
}

TEST_CASE("refinement gradients reach every attention block and the extractor") {
  Rng rng(7);
  ModelConfig c = tiny();
  c.zero_init_residual = false;
  ModelParams params = ModelParams::init(c, 7);
  testing::jitter(params.parameters(), rng, 0.05);
  std::vector<PointCloud> batch{random_cloud(c.points, rng), random_cloud(c.points, rng)};
  const PointBatch pb = make_point_batch(batch, c.patch_size);
  const auto features = mfe_forward(params, pb);
  const Tensor gfs = sab_forward(params, cpg_forward(params, pb).coarse, 2);
  const RefinerOutput out = gcr_forward(params, features, gfs, NormMode::train, 2);
  sum(mul(out.offsets, testing::random_tensor(out.offsets.shape(), rng, 1.0, false))).backward();
  for (std::size_t j = 0; j < c.depth; ++j) {
    CAPTURE(j);
    CHECK(all_nonzero_grads(params.refiner[j].attention.query.weight));
    CHECK(all_nonzero_grads(params.refiner[j].attention.key.weight));
    CHECK(all_nonzero_grads(params.refiner[j].feed_forward.first.weight));
  }
  for (std::size_t h = 0; h < c.depth; ++h) {
    CAPTURE(h);
    CHECK(all_nonzero_grads(params.extractor[h].phi.weight));
    CHECK(all_nonzero_grads(params.extractor[h].alpha.weight));
  }
  CHECK_THROWS_AS(gcr_forward(params, {features[0]}, gfs, NormMode::train, 2), DimensionError);
}

TEST_CASE("end-to-end permutation equivariance") {
  Rng rng(8);
  ModelConfig c = tiny();
  c.zero_init_residual = false;
  ModelParams params = ModelParams::init(c, 8);
  const PointCloud s = random_cloud(c.points, rng);
  const auto perm = permutation(c.points, rng);
  const PointCloud ps = select(s, perm);
  const ForwardOptions opts{NormMode::batch, false};
  const ForwardResult a = pumfa_forward(params, std::span(&s, 1), opts);
  const ForwardResult b = pumfa_forward(params, std::span(&ps, 1), opts);
  for (std::size_t h = 0; h < c.depth; ++h) {
    const Tensor& fa = a.features[h];
    const Tensor& fb = b.features[h];
    for (std::size_t i = 0; i < c.points; ++i) {
      for (std::size_t k = 0; k < fa.dim(1); ++k) CHECK(std::abs(fb.at(i, k) - fa.at(perm[i], k)) < 1e-5);
    }
  }
  for (std::size_t i = 0; i < c.points; ++i) {
    for (std::size_t j = 0; j < c.ratio; ++j) {
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(std::abs(b.dense.at(c.ratio * i + j, k) - a.dense.at(c.ratio * perm[i] + j, k)) < 1e-5);
      }
    }
  }
}

TEST_CASE("batched forward equals per-patch forward") {
  Rng rng(9);
  ModelConfig c = tiny();
  c.zero_init_residual = false;
  ModelParams params = ModelParams::init(c, 9);
  std::vector<PointCloud> batch{random_cloud(c.points, rng), random_cloud(c.points, rng)};
  // Eval mode so per-patch statistics do not differ from batch statistics.
  for (auto& g : params.refiner) g.bn_stats = RunningStats::identity(g.bn_stats.mean.size());
  const ForwardOptions opts{NormMode::eval, false};
  const ForwardResult both = pumfa_forward(params, batch, opts);
  for (std::size_t b = 0; b < 2; ++b) {
    const ForwardResult one = pumfa_forward(params, std::span(&batch[b], 1), opts);
    const std::size_t rows = c.points * c.ratio;
    for (std::size_t i = 0; i < rows * 3; ++i) {
      CHECK(both.dense.data()[b * rows * 3 + i] == doctest::Approx(one.dense.data()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("wrong point count is rejected") {
  Rng rng(10);
  ModelParams params = ModelParams::init(tiny(), 10);
  const PointCloud s = random_cloud(15, rng);
  CHECK_THROWS_AS(pumfa_forward(params, std::span(&s, 1)), DimensionError);
}

TEST_CASE("initialisation is seeded and parameter names are unique") {
  const ModelParams a = ModelParams::init(tiny(), 11);
  const ModelParams b = ModelParams::init(tiny(), 11);
  const ModelParams d = ModelParams::init(tiny(), 12);
  const auto na = a.named_parameters();
  std::set<std::string> names;
  bool differs = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    names.insert(na[i].first);
    const auto pb = b.named_parameters()[i].second.data();
    CHECK(std::equal(pb.begin(), pb.end(), na[i].second.data().begin()));
    const auto pd = d.named_parameters()[i].second.data();
    differs |= !std::equal(pd.begin(), pd.end(), na[i].second.data().begin());
  }
  CHECK(differs);
  CHECK(names.size() == na.size());
  std::size_t total = 0;
  for (const auto& [n, t] : na) total += t.numel();
  CHECK(total == a.parameter_count());
  // Residual heads start at zero.
  for (real v : a.refiner_out.weight.data()) CHECK(v == 0.0);
  for (real v : a.coarse.back().alpha.weight.data()) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(12);
  ModelConfig c = tiny();
  c.zero_init_residual = false;
  ModelParams params = ModelParams::init(c, 12);
  const PointCloud s = random_cloud(c.points, rng);
  std::vector<PointCloud> batch{s, random_cloud(c.points, rng)};
  pumfa_forward(params, batch, {NormMode::train, false});  // populate running statistics

  const std::string dir = testing::temp_dir("net_ckpt");
  write_checkpoint(dir + "/a.ckpt", params.to_checkpoint());
  ModelParams loaded = ModelParams::from_checkpoint(read_checkpoint(dir + "/a.ckpt"));
  CHECK(loaded.config.to_map() == c.to_map());
  const auto pa = params.named_parameters();
  const auto pl = loaded.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t k = 0; k < pa[i].second.numel(); ++k) {
      CHECK(pl[i].second.data()[k] == static_cast<real>(static_cast<float>(pa[i].second.data()[k])));
    }
  }
  for (std::size_t j = 0; j < c.depth; ++j) {
    CHECK(loaded.refiner[j].bn_stats.initialized);
    CHECK(loaded.refiner[j].bn_stats.mean[0] == static_cast<real>(static_cast<float>(params.refiner[j].bn_stats.mean[0])));
  }
  // Float32 values survive a second trip bit for bit.
  write_checkpoint(dir + "/b.ckpt", loaded.to_checkpoint());
  ModelParams again = ModelParams::from_checkpoint(read_checkpoint(dir + "/b.ckpt"));
  const auto pg = again.named_parameters();
  for (std::size_t i = 0; i < pl.size(); ++i) {
    CHECK(std::equal(pl[i].second.data().begin(), pl[i].second.data().end(), pg[i].second.data().begin()));
  }
  for (std::size_t j = 0; j < c.depth; ++j) {
    CHECK(loaded.refiner[j].bn_stats.mean == again.refiner[j].bn_stats.mean);
    CHECK(loaded.refiner[j].bn_stats.var == again.refiner[j].bn_stats.var);
  }
  const ForwardOptions eval{NormMode::eval, false};
  const ForwardResult x = pumfa_forward(loaded, std::span(&s, 1), eval);
  const ForwardResult y = pumfa_forward(again, std::span(&s, 1), eval);
  const ForwardResult x2 = pumfa_forward(loaded, std::span(&s, 1), eval);
  CHECK(std::equal(x.dense.data().begin(), x.dense.data().end(), x2.dense.data().begin()));
  CHECK(std::equal(x.coarse.data().begin(), x.coarse.data().end(), y.coarse.data().begin()));
  CHECK(std::equal(x.global_features.data().begin(), x.global_features.data().end(), y.global_features.data().begin()));
  for (std::size_t j = 0; j < c.depth; ++j) CHECK(std::equal(x.refined[j].data().begin(), x.refined[j].data().end(), y.refined[j].data().begin()));
  CHECK(std::equal(x.dense.data().begin(), x.dense.data().end(), y.dense.data().begin()));

  Checkpoint broken = params.to_checkpoint();
  broken.add("mfe.0.phi.weight", Tensor::zeros({1, 1}));
  CHECK_THROWS_AS(ModelParams::from_checkpoint(broken), DimensionError);
  CHECK_THROWS(ModelParams::from_checkpoint(Checkpoint{}));
}

TEST_CASE("small full-model gradient check") {
  Rng rng(13);
  ModelConfig c = tiny();
  ModelParams params = ModelParams::init(c, 13);
  testing::jitter(params.parameters(), rng, 0.05);
  std::vector<PointCloud> batch{random_cloud(c.points, rng), random_cloud(c.points, rng)};
  const Tensor w = testing::random_tensor({2 * c.points * c.ratio, 3}, rng, 1.0, false);
  auto f = [&] {
    const ForwardResult r = pumfa_forward(params, batch, {NormMode::batch, false});
    return add(sum(mul(r.dense, w)), sum(mul(r.coarse, w)));
  };
  const auto r = testing::grad_check(f, params.parameters(), rng, 2);
  INFO(r.worst);
  CHECK(r.checked >= 100);
  CHECK(r.max_rel < 1e-3);
}
