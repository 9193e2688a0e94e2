// SPDX-License-Identifier: MIT
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "oracles.hpp"
#include "wxbench/fusion.hpp"

using namespace wxbench;

namespace {

FeatureMap map_from(std::initializer_list<std::initializer_list<double>> rows,
                    FeatureRole role) {
  const int m = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows.begin()->size());
  FeatureMap f = make_feature_map(m, d, role);
  int r = 0;
  for (const auto& row : rows) {
    int c = 0;
    for (double v : row) f.cells.at(r, c++) = v;
    ++r;
  }
  return f;
}

FeatureMap random_map(int m, int d, FeatureRole role, SplitMix& rng) {
  FeatureMap f = make_feature_map(m, d, role);
  for (double& x : f.cells.data) x = rng.gauss();
  return f;
}

// Init-scale draws: keeps the MLP logit in sigmoid's non-saturating range,
// so gate values stay strictly inside (0,1) at double precision.
GateMlpParams random_gate(int d, int h, SplitMix& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sh = 1.0 / std::sqrt(static_cast<double>(h));
  GateMlpParams p;
  p.w1 = Matrix::zeros(h, d);
  for (double& x : p.w1.data) x = sd * rng.gauss();
  p.b1.resize(h);
  for (double& x : p.b1) x = 0.3 * sd * rng.gauss();
  p.w2 = Matrix::zeros(1, h);
  for (double& x : p.w2.data) x = sh * rng.gauss();
  p.b2 = {0.3 * sh * rng.gauss()};
  return p;
}

AttentionParams random_attention(int d, SplitMix& rng) {
  AttentionParams p;
  p.w_q = Matrix::zeros(d, d);
  p.w_k = Matrix::zeros(d, d);
  p.w_v = Matrix::zeros(d, d);
  for (double& x : p.w_q.data) x = rng.gauss();
  for (double& x : p.w_k.data) x = rng.gauss();
  for (double& x : p.w_v.data) x = rng.gauss();
  return p;
}

}  // namespace

TEST_CASE("sum fusion adds elementwise", "[fusion]") {
  const FeatureMap fp = map_from({{1.0, 2.0}}, FeatureRole::lidar);
  const FeatureMap fi = map_from({{3.0, 4.0}}, FeatureRole::camera);
  const FeatureMap out = fuse_sum(fp, fi);
  CHECK(out.role == FeatureRole::fused);
  CHECK(out.cells.at(0, 0) == 4.0);
  CHECK(out.cells.at(0, 1) == 6.0);

  SplitMix rng(41);
  const FeatureMap a = random_map(4, 8, FeatureRole::lidar, rng);
  const FeatureMap zero = make_feature_map(4, 8, FeatureRole::camera);
  CHECK(fuse_sum(a, zero).cells == a.cells);

  const FeatureMap b = random_map(4, 8, FeatureRole::camera, rng);
  CHECK(fuse_sum(a, b).cells == fuse_sum(b, a).cells);

  const FeatureMap bad = make_feature_map(3, 8, FeatureRole::camera);
  CHECK_THROWS_AS(fuse_sum(a, bad), ShapeMismatch);
}

TEST_CASE("zero-initialized gate averages the branches", "[fusion]") {
  GateMlpParams zero;
  zero.w1 = Matrix::zeros(3, 2);
  zero.b1.assign(3, 0.0);
  zero.w2 = Matrix::zeros(1, 3);
  zero.b2.assign(1, 0.0);
  const FeatureMap fp = map_from({{1.0, -2.0}, {0.5, 8.0}}, FeatureRole::lidar);
  const FeatureMap fi =
      map_from({{3.0, 6.0}, {-0.5, 2.0}}, FeatureRole::camera);
  const GatedFusion out = fuse_sigmoid(fp, fi, zero);
  REQUIRE(out.gate.size() == 2);
  CHECK(out.gate[0] == 0.5);
  CHECK(out.gate[1] == 0.5);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      CHECK(out.fused.cells.at(r, c) ==
            0.5 * (fp.cells.at(r, c) + fi.cells.at(r, c)));
}

TEST_CASE("gate output is a convex combination", "[fusion]") {
  SplitMix rng(4242);
  int exact_inside = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(4));
    const int d = 1 + static_cast<int>(rng.below(6));
    const int h = 1 + static_cast<int>(rng.below(8));
    const FeatureMap fp = random_map(m, d, FeatureRole::lidar, rng);
    const FeatureMap fi = random_map(m, d, FeatureRole::camera, rng);
    const GateMlpParams params = random_gate(d, h, rng);
    const GatedFusion out = fuse_sigmoid(fp, fi, params);
    for (int r = 0; r < m; ++r) {
      REQUIRE(out.gate[r] > 0.0);
      REQUIRE(out.gate[r] < 1.0);
      // w_I = 1 - w_P is exact in doubles for w_P in (0,1).
      const double w_i = 1.0 - out.gate[r];
      REQUIRE(out.gate[r] + w_i == 1.0);
      for (int c = 0; c < d; ++c) {
        const double lo = std::min(fp.cells.at(r, c), fi.cells.at(r, c));
        const double hi = std::max(fp.cells.at(r, c), fi.cells.at(r, c));
        REQUIRE(out.fused.cells.at(r, c) >= lo - 1e-12);
        REQUIRE(out.fused.cells.at(r, c) <= hi + 1e-12);
        exact_inside += out.fused.cells.at(r, c) >= lo &&
                        out.fused.cells.at(r, c) <= hi;
      }
    }
  }
  CHECK(exact_inside > 0);
}

TEST_CASE("gate passes equal inputs through", "[fusion]") {
  SplitMix rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const FeatureMap fp = random_map(3, 5, FeatureRole::lidar, rng);
    FeatureMap fi = fp;
    fi.role = FeatureRole::camera;
    const GateMlpParams params = random_gate(5, 4, rng);
    const GatedFusion out = fuse_sigmoid(fp, fi, params);
    for (std::size_t i = 0; i < out.fused.cells.data.size(); ++i)
      CHECK_THAT(out.fused.cells.data[i],
                 Catch::Matchers::WithinRel(fp.cells.data[i], 1e-15) ||
                     Catch::Matchers::WithinAbs(fp.cells.data[i], 1e-15));
  }
}

TEST_CASE("gate values match an independent MLP evaluation", "[fusion]") {
  SplitMix rng(90210);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + static_cast<int>(rng.below(6));
    const int h = 1 + static_cast<int>(rng.below(8));
    const FeatureMap fp = random_map(2, d, FeatureRole::lidar, rng);
    const FeatureMap fi = random_map(2, d, FeatureRole::camera, rng);
    const GateMlpParams params = random_gate(d, h, rng);
    const GatedFusion out = fuse_sigmoid(fp, fi, params);
    for (int r = 0; r < 2; ++r) {
      std::vector<double> cell(d);
      for (int c = 0; c < d; ++c)
        cell[c] = fp.cells.at(r, c) + fi.cells.at(r, c);
      const double ref = wxoracle::fusionref::ref_gate_value(cell, params);
      CHECK_THAT(out.gate[r], Catch::Matchers::WithinAbs(ref, 1e-12));
    }
  }
}

TEST_CASE("gate rejects inconsistent shapes", "[fusion]") {
  SplitMix rng(5);
  const FeatureMap fp = random_map(2, 4, FeatureRole::lidar, rng);
  const FeatureMap fi = random_map(2, 4, FeatureRole::camera, rng);
  const FeatureMap narrow = random_map(2, 3, FeatureRole::camera, rng);
  GateMlpParams params = random_gate(4, 6, rng);
  CHECK_THROWS_AS(fuse_sigmoid(fp, narrow, params), ShapeMismatch);
  params.b1.resize(5);
  CHECK_THROWS_AS(fuse_sigmoid(fp, fi, params), ShapeMismatch);
  const GateMlpParams wrong_d = random_gate(3, 6, rng);
  CHECK_THROWS_AS(fuse_sigmoid(fp, fi, wrong_d), ShapeMismatch);
}

TEST_CASE("single-cell attention returns the transformed value row",
          "[fusion]") {
  SplitMix rng(8);
  const FeatureMap fp = random_map(1, 6, FeatureRole::lidar, rng);
  FeatureMap fi = random_map(1, 6, FeatureRole::camera, rng);
  const AttentionParams params = random_attention(6, rng);
  const FeatureMap out = fuse_attention(fp, fi, params);
  for (int c = 0; c < 6; ++c) {
    double ref = 0.0;
    for (int k = 0; k < 6; ++k) ref += fp.cells.at(0, k) * params.w_v.at(k, c);
    CHECK_THAT(out.cells.at(0, c), Catch::Matchers::WithinAbs(ref, 1e-12));
  }
  // Row-softmax over a single key is exactly 1, so the query is irrelevant.
  FeatureMap other_query = random_map(1, 6, FeatureRole::camera, rng);
  const FeatureMap requeried = fuse_attention(fp, other_query, params);
  CHECK(requeried.cells == out.cells);
}

TEST_CASE("attention matches an independent recomputation", "[fusion]") {
  SplitMix rng(314159);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(5));
    const int d = 1 + static_cast<int>(rng.below(6));
    const FeatureMap fp = random_map(m, d, FeatureRole::lidar, rng);
    const FeatureMap fi = random_map(m, d, FeatureRole::camera, rng);
    const AttentionParams params = random_attention(d, rng);
    const FeatureMap out = fuse_attention(fp, fi, params);
    const Matrix ref =
        wxoracle::fusionref::ref_attention(fp.cells, fi.cells, params);
    REQUIRE(out.cells.rows == ref.rows);
    for (std::size_t i = 0; i < ref.data.size(); ++i)
      CHECK_THAT(out.cells.data[i],
                 Catch::Matchers::WithinAbs(ref.data[i], 1e-12));
  }
}

TEST_CASE("attention rows sum to one", "[fusion]") {
  SplitMix rng(2718);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + static_cast<int>(rng.below(5));
    const int d = 1 + static_cast<int>(rng.below(6));
    const FeatureMap fp = random_map(m, d, FeatureRole::lidar, rng);
    const FeatureMap fi = random_map(m, d, FeatureRole::camera, rng);
    const AttentionParams params = random_attention(d, rng);
    // Recompute the row-softmax through the public pieces and check the
    // normalization the fused output relies on.
    const Matrix q = detail::matmul(fi.cells, params.w_q);
    const Matrix k = detail::matmul(fp.cells, params.w_k);
    Matrix z = detail::matmul_nt(q, k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& x : z.data) x *= scale;
    for (int i = 0; i < m; ++i) {
      const std::vector<double> row = softmax_row(
          std::span<const double>(z.data.data() + std::size_t(i) * m, m));
      double sum = 0.0;
      for (double x : row) sum += x;
      CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
  }
}

TEST_CASE("attention is invariant under joint key-value permutation",
          "[fusion]") {
  SplitMix rng(161803);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 2 + static_cast<int>(rng.below(5));
    const int d = 2 + static_cast<int>(rng.below(5));
    const FeatureMap fp = random_map(m, d, FeatureRole::lidar, rng);
    const FeatureMap fi = random_map(m, d, FeatureRole::camera, rng);
    const AttentionParams params = random_attention(d, rng);
    const FeatureMap base = fuse_attention(fp, fi, params);

    std::vector<int> perm(m);
    for (int i = 0; i < m; ++i) perm[i] = i;
    for (int i = m - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    FeatureMap shuffled = make_feature_map(m, d, FeatureRole::lidar);
    for (int i = 0; i < m; ++i)
      for (int c = 0; c < d; ++c)
        shuffled.cells.at(i, c) = fp.cells.at(perm[i], c);
    const FeatureMap permuted = fuse_attention(shuffled, fi, params);
    for (std::size_t i = 0; i < base.cells.data.size(); ++i)
      CHECK_THAT(permuted.cells.data[i],
                 Catch::Matchers::WithinAbs(base.cells.data[i], 1e-12));
  }
}

TEST_CASE("attention rejects inconsistent shapes", "[fusion]") {
  SplitMix rng(6);
  const FeatureMap fp = random_map(3, 4, FeatureRole::lidar, rng);
  const FeatureMap fi = random_map(3, 4, FeatureRole::camera, rng);
  const FeatureMap short_rows = random_map(2, 4, FeatureRole::camera, rng);
  const AttentionParams params = random_attention(4, rng);
  CHECK_THROWS_AS(fuse_attention(fp, short_rows, params), ShapeMismatch);
  const AttentionParams wrong_d = random_attention(3, rng);
  CHECK_THROWS_AS(fuse_attention(fp, fi, wrong_d), ShapeMismatch);
}

TEST_CASE("elementary activations", "[fusion]") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK_THAT(sigmoid(2.0), Catch::Matchers::WithinAbs(0.8807970779778823,
                                                      1e-15));
  CHECK_THAT(sigmoid(-2.0) + sigmoid(2.0),
             Catch::Matchers::WithinAbs(1.0, 1e-15));

  const std::vector<double> flat = {0.7, 0.7, 0.7, 0.7};
  const std::vector<double> sm = softmax_row(flat);
  for (double x : sm) CHECK(x == 0.25);

  const std::vector<double> wide = {1000.0, 0.0};
  const std::vector<double> sw = softmax_row(wide);
  REQUIRE(std::isfinite(sw[0]));
  REQUIRE(std::isfinite(sw[1]));
  CHECK_THAT(sw[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK(sw[1] < 1e-300);

  GateMlpParams p;
  p.w1 = Matrix::zeros(2, 2);
  p.w1.at(0, 0) = 1.0;
  p.w1.at(0, 1) = -1.0;
  p.w1.at(1, 0) = 0.5;
  p.w1.at(1, 1) = 2.0;
  p.b1 = {0.25, -0.5};
  p.w2 = Matrix::zeros(1, 2);
  p.w2.at(0, 0) = 2.0;
  p.w2.at(0, 1) = -3.0;
  p.b2 = {0.125};
  // Hidden: relu(1 - 0.5 + 0.25) = 0.75, relu(0.5 + 1 - 0.5) = 1.0.
  // Output: 0.125 + 2 * 0.75 - 3 * 1 = -1.375 (all dyadic, exact).
  const std::vector<double> x = {1.0, 0.5};
  CHECK(mlp_forward(x, p) == -1.375);
  const std::vector<double> long_x = {1.0, 0.5, 0.0};
  CHECK_THROWS_AS(mlp_forward(long_x, p), ShapeMismatch);
}

TEST_CASE("toy dataset statistics", "[fusion]") {
  CHECK(generate_toy_dataset(0, 4, 2, 9).samples.empty());
  CHECK_THROWS_AS(generate_toy_dataset(10, 0, 2, 9), DataError);
  CHECK_THROWS_AS(generate_toy_dataset(10, 4, 0, 9), DataError);
  CHECK_THROWS_AS(generate_toy_dataset(-1, 4, 2, 9), DataError);

  const ToyFusionDataset ds = generate_toy_dataset(10000, 8, 4, 1234);
  REQUIRE(ds.samples.size() == 10000);
  CHECK(ds.d == 8);
  CHECK(ds.m == 4);

  int positives = 0;
  std::array<long, 3> tag_count{};
  for (const auto& s : ds.samples) {
    positives += s.label;
    tag_count[static_cast<int>(s.tag)] += 1;
    REQUIRE(s.f_lidar.role == FeatureRole::lidar);
    REQUIRE(s.f_camera.role == FeatureRole::camera);
    REQUIRE(s.f_lidar.rows() == 4);
    REQUIRE(s.f_lidar.cols() == 8);
  }
  // Tag layout is deterministic: each block of 10 holds 4 clean, 3 lidar,
  // 3 camera.
  CHECK(tag_count[0] == 4000);
  CHECK(tag_count[1] == 3000);
  CHECK(tag_count[2] == 3000);
  CHECK(std::abs(positives / 10000.0 - 0.5) <= 0.05);

  // Per-entry moments by tag. Clean branches carry t + N(0, 0.3^2):
  // variance 1.09; a corrupted branch carries t + N(-+1, 2^2): variance 5,
  // mean -1 (lidar) or +1 (camera).
  const auto moments = [&](CorruptionTag tag, bool lidar_branch) {
    double sum = 0.0, sq = 0.0;
    long n = 0;
    for (const auto& s : ds.samples) {
      if (s.tag != tag) continue;
      const Matrix& m =
          lidar_branch ? s.f_lidar.cells : s.f_camera.cells;
      for (double v : m.data) {
        sum += v;
        sq += v * v;
        n += 1;
      }
    }
    const double mean = sum / n;
    return std::pair<double, double>(mean, sq / n - mean * mean);
  };
  const auto [clean_mean, clean_var] = moments(CorruptionTag::clean, true);
  CHECK_THAT(clean_mean, Catch::Matchers::WithinAbs(0.0, 0.05));
  CHECK_THAT(clean_var, Catch::Matchers::WithinAbs(1.09, 0.06));
  const auto [lidar_mean, lidar_var] =
      moments(CorruptionTag::lidar_corrupt, true);
  CHECK_THAT(lidar_mean, Catch::Matchers::WithinAbs(-1.0, 0.08));
  CHECK_THAT(lidar_var, Catch::Matchers::WithinAbs(5.0, 0.25));
  const auto [cam_mean, cam_var] =
      moments(CorruptionTag::camera_corrupt, false);
  CHECK_THAT(cam_mean, Catch::Matchers::WithinAbs(1.0, 0.08));
  CHECK_THAT(cam_var, Catch::Matchers::WithinAbs(5.0, 0.25));
  // The opposite branch of a corrupted sample stays at base noise.
  const auto [l_cam_mean, l_cam_var] =
      moments(CorruptionTag::lidar_corrupt, false);
  CHECK_THAT(l_cam_mean, Catch::Matchers::WithinAbs(0.0, 0.05));
  CHECK_THAT(l_cam_var, Catch::Matchers::WithinAbs(1.09, 0.06));

  // Same seed regenerates the same dataset; a different seed does not.
  const ToyFusionDataset again = generate_toy_dataset(100, 8, 4, 1234);
  for (int i = 0; i < 100; ++i) {
    CHECK(again.samples[i].f_lidar.cells == ds.samples[i].f_lidar.cells);
    CHECK(again.samples[i].label == ds.samples[i].label);
  }
  const ToyFusionDataset other = generate_toy_dataset(100, 8, 4, 4321);
  CHECK(other.samples[0].f_lidar.cells != ds.samples[0].f_lidar.cells);
}

TEST_CASE("gradient checks pass for every strategy", "[fusion]") {
  const ToyFusionDataset ds = generate_toy_dataset(16, 8, 4, 7);
  SECTION("sum: classifier gradients within 1e-6") {
    FusionModel m = FusionModel::make(FusionStrategy::sum, 8, 16, 3);
    m.randomize(11);
    CHECK(grad_check(m, ds.samples, 1e-5) <= 1e-6);
  }
  SECTION("sigmoid gate at random init") {
    FusionModel m = FusionModel::make(FusionStrategy::sigmoid_gate, 8, 16, 3);
    m.randomize(11);
    CHECK(grad_check(m, ds.samples, 1e-5) <= 1e-4);
  }
  SECTION("cross-attention at random init") {
    FusionModel m =
        FusionModel::make(FusionStrategy::cross_attention, 8, 16, 3);
    m.randomize(11);
    CHECK(grad_check(m, ds.samples, 1e-5) <= 1e-4);
  }
  SECTION("eps bounds enforced") {
    FusionModel m = FusionModel::make(FusionStrategy::sum, 8, 16, 3);
    CHECK_THROWS_AS(grad_check(m, ds.samples, 1e-3), DataError);
    CHECK_THROWS_AS(grad_check(m, ds.samples, 1e-7), DataError);
    CHECK_NOTHROW(grad_check(m, ds.samples, 1e-4));
    CHECK_NOTHROW(grad_check(m, ds.samples, 1e-6));
  }
}

TEST_CASE("training is deterministic and lr zero is a no-op", "[fusion]") {
  const ToyFusionDataset ds = generate_toy_dataset(60, 8, 4, 21);
  for (FusionStrategy s : {FusionStrategy::sum, FusionStrategy::sigmoid_gate,
                           FusionStrategy::cross_attention}) {
    const TrainResult a = train(ds, s, 20, 0.5, 77);
    const TrainResult b = train(ds, s, 20, 0.5, 77);
    CHECK(a.model.w == b.model.w);
    CHECK(a.model.b == b.model.b);
    CHECK(a.final_train_loss == b.final_train_loss);
    CHECK(a.heldout_overall.correct == b.heldout_overall.correct);
    if (s == FusionStrategy::sigmoid_gate) {
      CHECK(a.model.gate.w1 == b.model.gate.w1);
      CHECK(a.model.gate.b1 == b.model.gate.b1);
      CHECK(a.model.gate.w2 == b.model.gate.w2);
      CHECK(a.model.gate.b2 == b.model.gate.b2);
    }
    if (s == FusionStrategy::cross_attention) {
      CHECK(a.model.attn.w_q == b.model.attn.w_q);
      CHECK(a.model.attn.w_k == b.model.attn.w_k);
      CHECK(a.model.attn.w_v == b.model.attn.w_v);
    }

    const TrainResult frozen = train(ds, s, 20, 0.0, 77);
    const FusionModel init = FusionModel::make(s, ds.d, kGateHiddenWidth, 77);
    CHECK(frozen.model.w == init.w);
    CHECK(frozen.model.b == init.b);
    if (s == FusionStrategy::sigmoid_gate)
      CHECK(frozen.model.gate.w1 == init.gate.w1);
    if (s == FusionStrategy::cross_attention)
      CHECK(frozen.model.attn.w_v == init.attn.w_v);

    const TrainResult c = train(ds, s, 20, 0.5, 78);
    CHECK(a.model.w != c.model.w);
  }
  CHECK_THROWS_AS(train(ToyFusionDataset{}, FusionStrategy::sum, 1, 0.1, 1),
                  DataError);
}

TEST_CASE("training reaches high heldout accuracy on clean data", "[fusion]") {
  // 1000 clean-tag samples; 800 train / 200 held out. Strategy-specific
  // learning rates; the attention warm start trains like mean-pooled
  // logistic regression.
  const ToyFusionDataset ds =
      wxoracle::fusionref::clean_only_dataset(1000, 8, 4, 17);
  REQUIRE(ds.samples.size() == 1000);
  const TrainResult rs = train(ds, FusionStrategy::sum, 200, 2.0, 5);
  CHECK(rs.heldout_overall.accuracy >= 0.9);
  const TrainResult rg = train(ds, FusionStrategy::sigmoid_gate, 200, 2.0, 5);
  CHECK(rg.heldout_overall.accuracy >= 0.9);
  const TrainResult ra =
      train(ds, FusionStrategy::cross_attention, 200, 4.0, 5);
  CHECK(ra.heldout_overall.accuracy >= 0.9);
  // Loss actually decreased from the untrained model.
  const TrainResult untrained = train(ds, FusionStrategy::sum, 0, 2.0, 5);
  CHECK(rs.final_train_loss < 0.5 * untrained.final_train_loss);
}

TEST_CASE("diverged training raises", "[fusion]") {
  // Feature magnitudes near the double ceiling overflow the gate MLP's
  // hidden accumulation, so the first epoch's loss is already non-finite.
  ToyFusionDataset ds;
  ds.d = 8;
  ds.m = 1;
  ds.seed = 0;
  ToyFusionSample s;
  s.f_lidar = make_feature_map(1, 8, FeatureRole::lidar);
  s.f_camera = make_feature_map(1, 8, FeatureRole::camera);
  for (int c = 0; c < 8; ++c) {
    const double v = (c % 2 == 0 ? 1.0 : -1.0) * 8.9e307;
    s.f_lidar.cells.at(0, c) = v;
    s.f_camera.cells.at(0, c) = v;
  }
  s.label = 1;
  ds.samples.push_back(s);
  CHECK_THROWS_AS(train(ds, FusionStrategy::sigmoid_gate, 2, 0.1, 3),
                  DivergedLoss);
}

TEST_CASE("gate statistics report per-tag means", "[fusion]") {
  const ToyFusionDataset ds = generate_toy_dataset(50, 8, 4, 31);

  SECTION("wrong strategy rejected") {
    const FusionModel m = FusionModel::make(FusionStrategy::sum, 8, 16, 1);
    CHECK_THROWS_AS(gate_statistics(m, ds), WrongStrategy);
  }

  SECTION("zero-init gate sits at one half") {
    FusionModel m = FusionModel::make(FusionStrategy::sigmoid_gate, 8, 16, 1);
    std::fill(m.gate.w1.data.begin(), m.gate.w1.data.end(), 0.0);
    std::fill(m.gate.w2.data.begin(), m.gate.w2.data.end(), 0.0);
    const GateStatistics st = gate_statistics(m, ds);
    for (int t = 0; t < kCorruptionTagCount; ++t) {
      CHECK(st.mean_gate[t] == 0.5);
      CHECK(st.delta_vs_clean[t] == 0.0);
    }
    CHECK(st.sample_count[0] == 20);
    CHECK(st.sample_count[1] == 15);
    CHECK(st.sample_count[2] == 15);
  }

  SECTION("trained gate leans away from the corrupted branch") {
    const ToyFusionDataset mixed = generate_toy_dataset(500, 8, 4, 100);
    const TrainResult r =
        train(mixed, FusionStrategy::sigmoid_gate, 400, 2.0, 200);
    const GateStatistics st = gate_statistics(r.model, mixed);
    const double clean = st.mean_gate[static_cast<int>(CorruptionTag::clean)];
    const double lidar =
        st.mean_gate[static_cast<int>(CorruptionTag::lidar_corrupt)];
    const double camera =
        st.mean_gate[static_cast<int>(CorruptionTag::camera_corrupt)];
    CHECK(lidar < clean);
    CHECK(camera > clean);
    CHECK(st.delta_vs_clean[static_cast<int>(CorruptionTag::lidar_corrupt)] <
          0.0);
    CHECK(st.delta_vs_clean[static_cast<int>(CorruptionTag::camera_corrupt)] >
          0.0);
    CHECK(st.delta_vs_clean[static_cast<int>(CorruptionTag::clean)] == 0.0);
  }
}

TEST_CASE("model JSON round trip", "[fusion]") {
  const ToyFusionDataset ds = generate_toy_dataset(20, 8, 4, 55);
  for (FusionStrategy s : {FusionStrategy::sum, FusionStrategy::sigmoid_gate,
                           FusionStrategy::cross_attention}) {
    FusionModel m = FusionModel::make(s, 8, 16, 99);
    m.randomize(1);
    const nlohmann::json j = model_to_json(m);
    CHECK(j.at("strategy").get<std::string>() == to_string(s));
    CHECK(j.at("shapes").at("d").get<int>() == 8);
    CHECK(j.at("seed").at("init").get<std::uint64_t>() == 99);
    // Text round trip preserves parameters bitwise.
    const nlohmann::json reparsed = nlohmann::json::parse(j.dump());
    const FusionModel back = model_from_json(reparsed);
    CHECK(back.strategy == s);
    CHECK(back.w == m.w);
    CHECK(back.b == m.b);
    CHECK(back.init_seed == 99);
    if (s == FusionStrategy::sigmoid_gate) {
      CHECK(back.gate.w1 == m.gate.w1);
      CHECK(back.gate.b1 == m.gate.b1);
      CHECK(back.gate.w2 == m.gate.w2);
      CHECK(back.gate.b2 == m.gate.b2);
    }
    if (s == FusionStrategy::cross_attention) {
      CHECK(back.attn.w_q == m.attn.w_q);
      CHECK(back.attn.w_k == m.attn.w_k);
      CHECK(back.attn.w_v == m.attn.w_v);
    }
    const auto& sample = ds.samples[0];
    CHECK(back.predict(sample.f_lidar, sample.f_camera) ==
          m.predict(sample.f_lidar, sample.f_camera));
  }
}

TEST_CASE("model JSON rejects malformed input", "[fusion]") {
  FusionModel m = FusionModel::make(FusionStrategy::sigmoid_gate, 4, 3, 2);
  const nlohmann::json good = model_to_json(m);

  nlohmann::json bad = good;
  bad["strategy"] = "mean";
  CHECK_THROWS_AS(model_from_json(bad), DataError);

  bad = good;
  bad["params"]["gate_w1"].erase(0);
  CHECK_THROWS_AS(model_from_json(bad), ShapeMismatch);

  bad = good;
  bad["params"]["classifier_w"][1] = "oops";
  CHECK_THROWS_AS(model_from_json(bad), DataError);

  bad = good;
  bad["params"].erase("gate_b2");
  CHECK_THROWS_AS(model_from_json(bad), DataError);

  bad = good;
  bad["shapes"]["d"] = 0;
  CHECK_THROWS_AS(model_from_json(bad), DataError);

  bad = good;
  bad["params"]["classifier_b"] =
      std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(model_from_json(bad), Error);
}
