#include <doctest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"
#include "voltrack/train.hpp"

using namespace voltrack;

namespace {

SceneConfig train_scene_config() {
  SceneConfig cfg;
  cfg.n_cameras = 3;
  cfg.n_points = 4;
  cfg.n_frames = 4;
  cfg.feature_dim = 4;
  cfg.pixel_noise_sigma = 0.0;
  cfg.feature_noise_sigma = 0.1;
  cfg.occlusion_rate = 0.0;
  cfg.seed = 21;
  return cfg;
}

TrainConfig quick_train_config(int steps) {
  TrainConfig cfg;
  cfg.max_steps = steps;
  cfg.warmup_steps = steps / 10;
  cfg.base_lr = 3e-3;
  cfg.options.grid_resolution = 6;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.max_steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigInvalid);
    cfg = TrainConfig{};
    cfg.base_lr = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigInvalid);
  }

  TEST_CASE("zero learning rate leaves the parameters untouched") {
    const SceneData scene = generate_scene(train_scene_config());
    const std::vector<TrainSample> scenes = {train_sample(scene)};
    const ModelParams init = init_model({8, 8}, 4, 4, 3, 5);

    TrainConfig cfg = quick_train_config(12);
    cfg.base_lr = 0.0;
    const TrainResult r = train(cfg, scenes, init);
    CHECK(flatten_model(r.checkpoint.model) == flatten_model(init));
    CHECK(r.checkpoint.step == 12);
    CHECK(r.log.size() == 12);
  }

  TEST_CASE("same seed twice gives byte-identical checkpoints") {
    const SceneData scene = generate_scene(train_scene_config());
    const std::vector<TrainSample> scenes = {train_sample(scene)};
    const ModelParams init = init_model({8, 8}, 4, 4, 3, 5);
    const TrainConfig cfg = quick_train_config(20);

    const auto dir = testsupport::temp_dir("train-det");
    save_checkpoint(train(cfg, scenes, init).checkpoint, dir / "a.ckpt");
    save_checkpoint(train(cfg, scenes, init).checkpoint, dir / "b.ckpt");

    const auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    const std::string a = slurp(dir / "a.ckpt");
    REQUIRE_FALSE(a.empty());
    CHECK(a == slurp(dir / "b.ckpt"));
  }

  TEST_CASE("a short run already reduces the loss") {
    const SceneData scene = generate_scene(train_scene_config());
    const std::vector<TrainSample> scenes = {train_sample(scene)};
    const ModelParams init = init_model({16, 16}, 4, 4, 3, 5);
    const TrainResult r = train(quick_train_config(160), scenes, init);

    REQUIRE(r.log.size() == 160);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 8; ++i) {
      head += r.log[i].total;
      tail += r.log[r.log.size() - 1 - i].total;
    }
    CHECK(tail < head);
    // the schedule warms up and decays back toward zero
    CHECK(r.log.front().lr < r.log[r.log.size() / 3].lr);
    CHECK(r.log.back().lr < r.log[r.log.size() / 3].lr);
  }

  TEST_CASE("gradients are averaged over scenes") {
    SceneConfig sc = train_scene_config();
    const SceneData scene_a = generate_scene(sc);
    sc.seed = 22;
    const SceneData scene_b = generate_scene(sc);
    const ModelParams init = init_model({8, 8}, 4, 4, 3, 5);
    const TrainConfig cfg = quick_train_config(6);

    // duplicating one scene must behave exactly like the single scene
    const TrainResult once = train(cfg, {train_sample(scene_a)}, init);
    const TrainResult twice =
        train(cfg, {train_sample(scene_a), train_sample(scene_a)}, init);
    CHECK(flatten_model(once.checkpoint.model) == flatten_model(twice.checkpoint.model));

    // a genuinely different second scene changes the trajectory
    const TrainResult mixed =
        train(cfg, {train_sample(scene_a), train_sample(scene_b)}, init);
    CHECK(flatten_model(once.checkpoint.model) != flatten_model(mixed.checkpoint.model));
  }

  TEST_CASE("an absurd learning rate raises DivergenceDetected with a usable fallback") {
    const SceneData scene = generate_scene(train_scene_config());
    const std::vector<TrainSample> scenes = {train_sample(scene)};
    const ModelParams init = init_model({8, 8}, 4, 4, 3, 5);

    TrainConfig cfg = quick_train_config(50);
    cfg.base_lr = 1e200;
    cfg.warmup_steps = 0;

    TrainResult partial;
    CHECK_THROWS_AS(train(cfg, scenes, init, &partial), DivergenceDetected);
    CHECK(flatten_model(partial.checkpoint.model).allFinite());
    CHECK(partial.log.size() <= 50);
    for (const auto& row : partial.log) CHECK(std::isfinite(row.total));
  }

  TEST_CASE("training needs at least one scene") {
    const ModelParams init = init_model({8}, 4, 4, 3, 5);
    CHECK_THROWS_AS(train(TrainConfig{}, {}, init), ConfigInvalid);
  }

  TEST_CASE("training log CSV has a header and one row per step") {
    const auto dir = testsupport::temp_dir("train-log");
    std::vector<TrainLogRow> log = {{0, 0.1, 1.0, 2.0, 3.0, 6.0}, {1, 0.2, 0.5, 1.0, 1.5, 3.0}};
    const auto path = dir / "log.csv";
    write_train_log(log, path);

    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "step,lr,recon,proj,attn,total");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 2);
  }
}
