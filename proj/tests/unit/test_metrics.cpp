#include <gtest/gtest.h>

#include "draglora/image_io.hpp"
#include "draglora/metrics.hpp"
#include "draglora/pipeline.hpp"
#include "draglora/records.hpp"

using namespace draglora;

namespace {

const NoiseSchedule& sched() {
  static const NoiseSchedule s = default_schedule();
  return s;
}

Tensor<float> shifted(const Tensor<float>& F, int kx, int ky) {
  Tensor<float> out(F.shape);
  const int C = F.dim(0), H = F.dim(1), W = F.dim(2);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int sx = x - kx, sy = y - ky;
        out.at(c, y, x) = sx >= 0 && sy >= 0 && sx < W && sy < H ? F.at(c, sy, sx) : 0.0f;
      }
  return out;
}

StepRecord rec(int ordinal, StepMode mode, std::vector<std::pair<Point2, Point2>> hg, double minD) {
  StepRecord r;
  r.ordinal = ordinal;
  r.mode = mode;
  r.k = ordinal;
  r.strategy = "distance";
  for (auto& [h, g] : hg) {
    PointState p;
    p.h = h;
    p.minD = minD;
    p.dT = distance(h, g);
    r.points.push_back(p);
  }
  if (mode == StepMode::doo_ilfa) {
    r.loss_drag = 0.5;
    r.loss_mask = 0.25;
    r.loss_dds = 0.0;
  }
  return r;
}

}  // namespace

TEST(MeanDistance, SelfMatchIsZero) {
  auto F = Rng(1).normal_tensor<float>({8, 12, 12});
  std::vector<Point2> p{{3, 4}, {7, 9}};
  auto r = mean_distance_features(F, F, p, p);
  EXPECT_EQ(r.md, 0.0);
  EXPECT_EQ(r.matches, p);
}

TEST(MeanDistance, ConstructedShift) {
  auto F = Rng(2).normal_tensor<float>({8, 16, 16});
  for (auto [kx, ky] : {std::pair{3, 0}, std::pair{2, -1}, std::pair{0, 4}}) {
    auto E = shifted(F, kx, ky);
    std::vector<Point2> p{{6, 7}, {8, 8}};
    std::vector<Point2> g{{9, 7}, {8, 12}};
    auto r = mean_distance_features(F, E, p, g);
    double expect = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) expect += norm(Point2{double(kx), double(ky)} - (g[i] - p[i]));
    EXPECT_NEAR(r.md, expect / 2.0, 1e-12);
  }
}

TEST(MeanDistance, MaskRestrictsMatches) {
  Rng rng(3);
  auto F = rng.normal_tensor<float>({4, 10, 10});
  auto E = rng.normal_tensor<float>({4, 10, 10});
  Tensor<float> M({1, 10, 10});
  for (int y = 2; y < 5; ++y)
    for (int x = 6; x < 9; ++x) M.at(0, y, x) = 1.0f;
  std::vector<Point2> p{{1, 1}, {5, 5}, {8, 8}};
  auto r = mean_distance_features(F, E, p, p, &M);
  for (const auto& m : r.matches) EXPECT_EQ(M.at(0, static_cast<int>(m.y), static_cast<int>(m.x)), 1.0f);
  EXPECT_THROW(mean_distance_features(F, E, p, p, std::make_unique<Tensor<float>>(std::vector<int>{1, 10, 10}).get()),
               ConfigError);
}

TEST(MeanDistance, CosineDistanceBasics) {
  double a[] = {1, 0}, b[] = {0, 2}, c[] = {3, 0}, z[] = {0, 0};
  EXPECT_DOUBLE_EQ(cosine_distance(a, c, 2), 0.0);
  EXPECT_DOUBLE_EQ(cosine_distance(a, b, 2), 1.0);
  EXPECT_DOUBLE_EQ(cosine_distance(a, z, 2), 1.0);
}

TEST(Fidelity, IdentitySymmetryMonotone) {
  ToyUNet<float> net(UNetConfig{}, 7);
  Rng rng(4);
  for (int pair = 0; pair < 10; ++pair) {
    auto a = rng.normal_tensor<float>({3, 32, 32}, 0.5);
    auto b = rng.normal_tensor<float>({3, 32, 32}, 0.5);
    EXPECT_EQ(fidelity(net, a, a, 0, sched()), 0.0);
    EXPECT_EQ(fidelity(net, a, b, 0, sched()), fidelity(net, b, a, 0, sched()));
    double prev = 1e300;
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      auto c = axpby(static_cast<float>(1 - t), b, static_cast<float>(t), a);  // moves toward a
      const double d = fidelity(net, a, c, 0, sched());
      EXPECT_LE(d, prev + 1e-9) << "pair " << pair << " t " << t;
      prev = d;
    }
    EXPECT_EQ(prev, 0.0);
  }
}

TEST(Curves, SingleRecordAndColumns) {
  auto r = rec(0, StepMode::doo_ilfa, {{{1, 1}, {4, 5}}}, 0.3);
  auto c = curves({r});
  ASSERT_EQ(c.step.size(), 1u);
  EXPECT_DOUBLE_EQ(c.dT[0], 5.0);
  EXPECT_DOUBLE_EQ(c.minD[0], 0.3);
  auto csv = curves_csv(c);
  EXPECT_EQ(csv, "step,mode,mean_minD,mean_dT,loss_drag,loss_mask\n0,DOO_ILFA,0.29999999999999999,5,0.5,0.25\n");
  EXPECT_THROW(curves({}), ConfigError);
}

TEST(Curves, IlfaRowsHaveEmptyLossFields) {
  auto c = curves({rec(0, StepMode::ilfa_only, {{{1, 1}, {1, 3}}}, 0.1)});
  EXPECT_EQ(curves_csv(c).substr(curves_csv(c).find('\n') + 1), "0,ILFA_ONLY,0.10000000000000001,2,,\n");
}

TEST(Records, JsonRoundTrip) {
  auto r = rec(3, StepMode::ilfa_only, {{{1.5, 2}, {4, 2}}, {{3, 3}, {3, 3}}}, 0.2);
  r.points[0].dn = 0.5;
  r.points[1].reached = true;
  r.entry_max_minD = 0.4;
  r.entry_max_dn = 1.0;
  r.burst_iter = 2;
  auto line = record_line(r);
  EXPECT_EQ(record_from_json(nlohmann::json::parse(line)), r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(records_jsonl({r, r}), line + "\n" + line + "\n");
}

TEST(Curves, MonotoneStubSessionStrictlyDecreases) {
  ToyUNet<float> net(reduced_unet_config(), 3);
  Tensor<float> image = Rng(5).normal_tensor<float>({3, 8, 8}, 0.5);
  PipelineConfig cfg;
  cfg.lora_rank = 2;
  cfg.recon.steps = 2;
  cfg.recon.validation_draws = 1;
  std::vector<DragPoint> pts{{{0, 1}, {7, 6}}};
  auto s = start_session(image, full_mask(8, 8), pts, 0, net, sched(), cfg);
  PipelineHooks<float> hooks;
  // each tracking call moves the handle half a pixel toward its target
  hooks.tracker = [](const Tensor<float>&, const Tensor<float>&, const PointPair& p, const TrackConfig&, double) {
    const double len = distance(p.h, p.g);
    return TrackResult{p.h + (p.g - p.h) * (std::min(0.5, len) / len), 0.0, 1};
  };
  run_drag(s, net, sched(), {}, hooks);
  auto c = curves(s.records);
  ASSERT_GT(c.dT.size(), 5u);
  for (std::size_t i = 1; i < c.dT.size(); ++i) EXPECT_LT(c.dT[i], c.dT[i - 1]);
}

TEST(Curves, FirstDtEqualsInitialDistanceOnRealTracking) {
  ToyUNet<float> net(reduced_unet_config(), 3);
  Tensor<float> image = Rng(6).normal_tensor<float>({3, 8, 8}, 0.5);
  PipelineConfig cfg;
  cfg.lora_rank = 2;
  cfg.recon.steps = 2;
  cfg.recon.validation_draws = 1;
  cfg.K = 12;
  std::vector<DragPoint> pts{{{1, 2}, {6, 2}}, {{2, 5}, {2, 1}}};
  auto s = start_session(image, full_mask(8, 8), pts, 0, net, sched(), cfg);
  run_drag(s, net, sched());
  ASSERT_FALSE(s.records.empty());
  // the first tracking runs on the untouched latent and adapter, so handles stay put
  EXPECT_DOUBLE_EQ(curves(s.records).dT[0], s.initial_mean_dT());
}

TEST(Stats, MedianMean) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_EQ(mean({1, 2, 3, 6}), 3.0);
}
