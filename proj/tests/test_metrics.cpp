#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "voltrack/metrics.hpp"

using namespace voltrack;

namespace {

// one trajectory per point, all frames valid, positions = gt + offset
std::vector<Trajectory3D> offset_tracks(const std::vector<std::vector<Point3>>& gt,
                                        const Point3& offset) {
  std::vector<Trajectory3D> tracks(gt.size());
  for (size_t m = 0; m < gt.size(); ++m) {
    tracks[m].point_id = static_cast<int>(m);
    for (const auto& p : gt[m]) {
      tracks[m].positions.push_back(p + offset);
      tracks[m].valid.push_back(1);
    }
  }
  return tracks;
}

std::vector<std::vector<std::vector<uint8_t>>> all_visible(int frames, int views, int points) {
  return std::vector<std::vector<std::vector<uint8_t>>>(
      frames, std::vector<std::vector<uint8_t>>(views, std::vector<uint8_t>(points, 1)));
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("apd is 100 at ground truth and 0 beyond the ladder") {
    std::vector<std::vector<Point3>> gt(3, std::vector<Point3>(4, Point3(0.1, -0.2, 0.3)));
    CHECK(apd(offset_tracks(gt, Point3::Zero()), gt, kDefaultThresholds3D) ==
          doctest::Approx(100.0));
    CHECK(apd(offset_tracks(gt, Point3(1.0, 0, 0)), gt, kDefaultThresholds3D) ==
          doctest::Approx(0.0));
  }

  TEST_CASE("apd averages hit fractions over the ladder") {
    // half the points dead on, half far away -> 50 at every threshold
    std::vector<std::vector<Point3>> gt(4, std::vector<Point3>(1, Point3::Zero()));
    auto tracks = offset_tracks(gt, Point3::Zero());
    tracks[2].positions[0] = Point3(10, 0, 0);
    tracks[3].positions[0] = Point3(10, 0, 0);
    std::vector<double> per;
    CHECK(apd(tracks, gt, kDefaultThresholds3D, &per) == doctest::Approx(50.0));
    for (double p : per) CHECK(p == doctest::Approx(50.0));
  }

  TEST_CASE("invalid predictions count as misses and empty input throws") {
    std::vector<std::vector<Point3>> gt(2, std::vector<Point3>(2, Point3::Zero()));
    auto tracks = offset_tracks(gt, Point3::Zero());
    tracks[0].valid = {0, 0};
    CHECK(apd(tracks, gt, {0.1}) == doctest::Approx(50.0));
    CHECK_THROWS_AS(apd({}, gt, {0.1}), EmptyIntersection);
    CHECK_THROWS_AS(apd(tracks, gt, {}), ConfigInvalid);
    CHECK_THROWS_AS(apd(tracks, gt, {0.2, 0.1}), ConfigInvalid);
  }

  TEST_CASE("apd is monotone in the threshold") {
    Rng rng(99);
    std::vector<std::vector<Point3>> gt(5, std::vector<Point3>(6));
    for (auto& traj : gt)
      for (auto& p : traj) p = Point3(rng.normal(), rng.normal(), rng.normal());
    auto tracks = offset_tracks(gt, Point3::Zero());
    for (auto& tr : tracks)
      for (auto& p : tr.positions)
        p += 0.05 * Point3(rng.normal(), rng.normal(), rng.normal());
    std::vector<double> per;
    apd(tracks, gt, kDefaultThresholds3D, &per);
    for (size_t k = 1; k < per.size(); ++k) CHECK(per[k] >= per[k - 1]);
  }

  TEST_CASE("occlusion accuracy is undefined without episodes") {
    std::vector<std::vector<Point3>> gt(2, std::vector<Point3>(4, Point3::Zero()));
    const auto vis = all_visible(4, 3, 2);
    CHECK_FALSE(
        occlusion_accuracy(offset_tracks(gt, Point3::Zero()), gt, vis, {0.1}).has_value());
  }

  TEST_CASE("occlusion accuracy scores the five frames after reappearance") {
    // 12 frames, 1 point, 3 views; total occlusion on frames 3-4
    const int frames = 12;
    std::vector<std::vector<Point3>> gt(1);
    for (int t = 0; t < frames; ++t) gt[0].push_back(Point3(0.1 * t, 0, 0));
    auto vis = all_visible(frames, 3, 1);
    for (int t = 3; t <= 4; ++t)
      for (int v = 0; v < 3; ++v) vis[t][v][0] = 0;

    auto perfect = offset_tracks(gt, Point3::Zero());
    CHECK(occlusion_accuracy(perfect, gt, vis, {0.05}).value() == doctest::Approx(100.0));

    // a tracker that froze at frame 2 and never caught up again
    auto frozen = perfect;
    for (int t = 3; t < frames; ++t) frozen[0].positions[t] = gt[0][2];
    const double oa = occlusion_accuracy(frozen, gt, vis, {0.05}).value();
    const double overall = apd(frozen, gt, {0.05});
    CHECK(oa == doctest::Approx(0.0));  // window frames 5..9 are all off target
    CHECK(oa < overall);                // early exact frames prop up plain apd
  }

  TEST_CASE("occlusion window waits for two views and truncates at re-occlusion") {
    const int frames = 10;
    std::vector<std::vector<Point3>> gt(1, std::vector<Point3>(frames, Point3::Zero()));
    auto vis = all_visible(frames, 3, 1);
    // episode frames 2-3; frame 4 seen by one view only; 5-6 good; 7+ occluded
    for (int v = 0; v < 3; ++v) {
      vis[2][v][0] = vis[3][v][0] = 0;
      if (v > 0) vis[4][v][0] = 0;
      for (int t = 7; t < frames; ++t) vis[t][v][0] = 0;
    }
    auto pred = offset_tracks(gt, Point3::Zero());
    // make exactly frames 5 and 6 hits; everything else far off
    for (int t = 0; t < frames; ++t)
      if (t != 5 && t != 6) pred[0].positions[t] = Point3(5, 5, 5);
    CHECK(occlusion_accuracy(pred, gt, vis, {0.1}).value() == doctest::Approx(100.0));
  }

  TEST_CASE("3d jaccard on a hand-built confusion fixture") {
    // threshold 0.1: point 0 TP, point 1 FP (gt hidden), point 2 FN
    // (invalid), point 3 off target (FP and FN) -> 1/(1+2+2) = 0.2
    std::vector<std::vector<Point3>> gt(4, std::vector<Point3>(1, Point3::Zero()));
    auto vis = all_visible(1, 2, 4);
    for (int v = 0; v < 2; ++v) vis[0][v][1] = 0;
    auto pred = offset_tracks(gt, Point3::Zero());
    pred[2].valid[0] = 0;
    pred[3].positions[0] = Point3(1, 0, 0);
    CHECK(jaccard3d(pred, gt, vis, {0.1}) == doctest::Approx(0.2));
  }

  TEST_CASE("3d jaccard extremes") {
    std::vector<std::vector<Point3>> gt(3, std::vector<Point3>(4, Point3(0.2, 0, -0.1)));
    const auto vis = all_visible(4, 3, 3);
    CHECK(jaccard3d(offset_tracks(gt, Point3::Zero()), gt, vis, kDefaultThresholds3D) ==
          doctest::Approx(1.0));
    auto invalid = offset_tracks(gt, Point3::Zero());
    for (auto& tr : invalid) std::fill(tr.valid.begin(), tr.valid.end(), uint8_t{0});
    CHECK(jaccard3d(invalid, gt, vis, kDefaultThresholds3D) == doctest::Approx(0.0));
  }

  TEST_CASE("3d jaccard never exceeds the apd fraction when all flags are true") {
    Rng rng(7);
    std::vector<std::vector<Point3>> gt(6, std::vector<Point3>(5));
    for (auto& traj : gt)
      for (auto& p : traj) p = Point3(rng.normal(), rng.normal(), rng.normal()) * 0.3;
    auto tracks = offset_tracks(gt, Point3::Zero());
    for (auto& tr : tracks)
      for (auto& p : tr.positions)
        p += 0.04 * Point3(rng.normal(), rng.normal(), rng.normal());
    const auto vis = all_visible(5, 3, 6);
    const double aj = jaccard3d(tracks, gt, vis, kDefaultThresholds3D);
    const double fraction = apd(tracks, gt, kDefaultThresholds3D) / 100.0;
    CHECK(aj <= fraction + 1e-12);
  }

  TEST_CASE("2d jaccard projects through every camera") {
    const SceneConfig cfg = [] {
      SceneConfig c;
      c.n_cameras = 3;
      c.n_points = 4;
      c.n_frames = 3;
      c.feature_dim = 4;
      c.pixel_noise_sigma = 0.0;
      c.occlusion_rate = 0.0;
      c.seed = 31;
      return c;
    }();
    const SceneData scene = generate_scene(cfg);
    const auto perfect = offset_tracks(scene.gt, Point3::Zero());
    CHECK(jaccard2d(perfect, scene.gt, scene.cameras, scene.visible, kDefaultThresholds2D) ==
          doctest::Approx(1.0));
    // a large world offset lands far away in every view
    const auto off = offset_tracks(scene.gt, Point3(0.8, 0.8, 0.8));
    CHECK(jaccard2d(off, scene.gt, scene.cameras, scene.visible, kDefaultThresholds2D) < 0.5);
  }

  TEST_CASE("evaluate assembles the full report") {
    SceneConfig cfg;
    cfg.n_cameras = 3;
    cfg.n_points = 4;
    cfg.n_frames = 5;
    cfg.feature_dim = 4;
    cfg.pixel_noise_sigma = 0.0;
    cfg.occlusion_rate = 0.0;
    cfg.seed = 13;
    const SceneData scene = generate_scene(cfg);
    const auto perfect = offset_tracks(scene.gt, Point3::Zero());
    const MetricReport report = evaluate(perfect, scene);
    CHECK(report.apd == doctest::Approx(100.0));
    CHECK_FALSE(report.oa.has_value());  // occlusion-free scene
    CHECK(report.aj3d == doctest::Approx(1.0));
    CHECK(report.aj2d == doctest::Approx(1.0));
    CHECK(report.apd_per_threshold.size() == kDefaultThresholds3D.size());
    CHECK(report.n_points == 4);
    CHECK(report.n_frames == 5);

    const nlohmann::json j = report_to_json(report);
    CHECK(j.at("oa").is_null());
    CHECK(j.at("apd").get<double>() == doctest::Approx(100.0));
    CHECK(report_table(report).find("undefined") != std::string::npos);
    CHECK(report_table(report).find("APD@0.01") != std::string::npos);
  }

  TEST_CASE("calibration sweep: clean row matches a clean run bitwise") {
    SceneConfig cfg;
    cfg.n_cameras = 3;
    cfg.n_points = 4;
    cfg.n_frames = 3;
    cfg.feature_dim = 4;
    cfg.pixel_noise_sigma = 0.0;
    cfg.occlusion_rate = 0.0;
    cfg.seed = 17;
    const SceneData scene = generate_scene(cfg);
    const ModelParams model = init_model({8, 8}, 4, 4, 3, 3);
    TrackOptions opts;
    opts.grid_resolution = 6;

    const auto rows =
        calibration_sweep(scene, model, opts, {0.5}, {0.5}, {3.0}, {1}, kDefaultThresholds3D);
    REQUIRE(rows.size() == 4);  // clean + one level per group
    CHECK(rows[0].group == "none");
    CHECK(rows[1].group == "intrinsic_px");
    CHECK(rows[2].group == "rotation_deg");
    CHECK(rows[3].group == "translation_cm");

    const auto tracks = track_sequence(tracking_input(scene), model, opts);
    CHECK(rows[0].apd == apd(tracks, scene.gt, kDefaultThresholds3D));
    CHECK(rows[0].aj3d == jaccard3d(tracks, scene.gt, scene.visible, kDefaultThresholds3D));

    // deterministic across invocations
    const auto again =
        calibration_sweep(scene, model, opts, {0.5}, {0.5}, {3.0}, {1}, kDefaultThresholds3D);
    for (size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].apd == again[i].apd);
      CHECK(rows[i].aj3d == again[i].aj3d);
    }

    const auto dir = testsupport::temp_dir("sweep");
    write_sweep_csv(rows, dir / "sweep.csv");
    std::ifstream in(dir / "sweep.csv");
    std::string header;
    REQUIRE(std::getline(in, header));
    CHECK(header == "group,level,apd,aj3d");
  }

  TEST_CASE("flop estimate is exactly linear in views and points, cubic in resolution") {
    MlpSpec spec;
    spec.layer_sizes = {34, 64, 64, 32, 3};
    const auto f = [&](int v, int n, int k) { return flop_estimate(v, n, k, 16, spec); };

    CHECK(f(16, 4, 12).total() - f(16, 3, 12).total() ==
          f(16, 3, 12).total() - f(16, 2, 12).total());
    CHECK(f(16, 3, 24).total() - f(16, 3, 18).total() ==
          f(16, 3, 18).total() - f(16, 3, 12).total());

    // the voxel-bound stages scale with exactly (24/16)^3
    const double ratio = f(24, 3, 12).voxel_total() / f(16, 3, 12).voxel_total();
    CHECK(ratio == doctest::Approx(3.375).epsilon(1e-12));
    // and the whole-model ratio stays in the published band
    const double total_ratio = f(24, 3, 12).total() / f(16, 3, 12).total();
    CHECK(total_ratio > 3.3);
    CHECK(total_ratio < 3.45);

    // doubling D exactly doubles the aggregation stage
    CHECK(flop_estimate(16, 3, 12, 32, spec).aggregation ==
          doctest::Approx(2.0 * flop_estimate(16, 3, 12, 16, spec).aggregation));

    const FlopBreakdown fb = f(16, 3, 12);
    CHECK(fb.total() == doctest::Approx(fb.grid_projection + fb.attention + fb.masks +
                                        fb.aggregation + fb.readout + fb.mlp));
    CHECK(fb.mlp == doctest::Approx(2.0 * 12 * (34 * 64 + 64 * 64 + 64 * 32 + 32 * 3)));
  }
}
