#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "voltrack/commands.hpp"
#include "voltrack/metrics.hpp"
#include "voltrack/train.hpp"

using namespace voltrack;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

KeyValueConfig command_config(const std::string& command, const std::string& text) {
  return KeyValueConfig::for_command(command, KeyValueConfig::parse_text(text));
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  int n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

// a small noiseless scene written to disk, for train/track/eval cases
fs::path write_small_scene(const TempDir& dir, uint64_t seed = 5) {
  const auto cfg = command_config("simulate",
                                  "seed = " + std::to_string(seed) +
                                      "\ncameras = 3\npoints = 4\nframes = 6\nfeature_dim = 4\n");
  const fs::path path = dir / "scene.json";
  std::ostringstream os;
  cmd_simulate(cfg, path, os);
  return path;
}

const std::string kQuickTrain =
    "seed = 3\nsteps = 12\nwarmup = 3\nhidden = 8,8\ngrid = 6\nlr = 3e-3\n";

}  // namespace

TEST_SUITE("commands") {

TEST_CASE("simulate writes byte-identical files for the same config") {
  TempDir dir("voltrack_cmd_sim");
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  const auto cfg = command_config("simulate", "seed = 11\npoints = 4\nframes = 5\n");
  std::ostringstream os_a, os_b;
  cmd_simulate(cfg, dir.path / "a" / "scene.json", os_a);
  cmd_simulate(cfg, dir.path / "b" / "scene.json", os_b);
  CHECK(slurp(dir.path / "a" / "scene.json") == slurp(dir.path / "b" / "scene.json"));
  CHECK(slurp(dir.path / "a" / "scene.features.bin") ==
        slurp(dir.path / "b" / "scene.features.bin"));
  CHECK(os_a.str().find("3 cameras") != std::string::npos);  // schema default rig
}

TEST_CASE("simulate without a seed names the missing field") {
  TempDir dir("voltrack_cmd_sim_noseed");
  const auto cfg = command_config("simulate", "points = 4\n");
  std::ostringstream os;
  CHECK_THROWS_WITH_AS(cmd_simulate(cfg, dir / "scene.json", os), doctest::Contains("seed"),
                       ConfigInvalid);
}

TEST_CASE("train writes a checkpoint and a one-row-per-step log") {
  TempDir dir("voltrack_cmd_train");
  const auto scene = write_small_scene(dir);
  const auto cfg = command_config("train", kQuickTrain);
  std::ostringstream os;
  cmd_train(cfg, {scene}, dir / "model.ckpt", 1, os);

  const Checkpoint ckpt = load_checkpoint(dir / "model.ckpt");
  CHECK(ckpt.step == 12);
  CHECK(ckpt.model.feature_dim == 4);
  CHECK(count_lines(dir / "model.csv") == 13);  // header + 12 steps
  CHECK(slurp(dir / "model.csv").rfind("step,lr,recon,proj,attn,total", 0) == 0);
  CHECK(os.str().find("12 steps") != std::string::npos);
}

TEST_CASE("diverging train still writes the last good checkpoint") {
  TempDir dir("voltrack_cmd_train_div");
  const auto scene = write_small_scene(dir);
  const auto cfg = command_config(
      "train", "seed = 3\nsteps = 40\nwarmup = 1\nhidden = 8,8\ngrid = 6\nlr = 1e200\n");
  std::ostringstream os;
  CHECK_THROWS_AS(cmd_train(cfg, {scene}, dir / "model.ckpt", 1, os), DivergenceDetected);
  const Checkpoint ckpt = load_checkpoint(dir / "model.ckpt");  // still written
  CHECK(flatten_model(ckpt.model).allFinite());
  CHECK(fs::exists(dir / "model.csv"));
}

TEST_CASE("track writes one trajectory per point plus CSV and dump") {
  TempDir dir("voltrack_cmd_track");
  const auto scene = write_small_scene(dir);
  std::ostringstream os;
  cmd_train(command_config("train", kQuickTrain), {scene}, dir / "model.ckpt", 1, os);

  const auto cfg = command_config("track", "grid = 6\n");
  cmd_track(dir / "model.ckpt", scene, cfg, dir / "traj.json", 1,
            fs::path(dir / "attn.bin"), os);

  const auto tracks = load_trajectories_json(dir / "traj.json");
  REQUIRE(tracks.size() == 4);  // output point count = input query count
  for (const auto& tr : tracks) CHECK(tr.positions.size() == 6);
  CHECK(count_lines(dir / "traj.csv") == 1 + 4 * 6);

  // dump sidecar: magic + JSON header + float32 blob per (view, voxel, point)
  const std::string blob = slurp(dir / "attn.bin");
  REQUIRE(blob.size() > 16);
  CHECK(blob.substr(0, 8) == "VTATTN01");
  uint64_t header_len = 0;
  std::memcpy(&header_len, blob.data() + 8, sizeof(header_len));
  const auto header = nlohmann::json::parse(blob.substr(16, header_len));
  CHECK(header.at("views") == 3);
  CHECK(header.at("voxels") == 6 * 6 * 6);
  CHECK(header.at("points") == 4);
  CHECK(blob.size() == 16 + header_len + 3 * 216 * 4 * sizeof(float));
}

TEST_CASE("track with an incompatible checkpoint names both widths") {
  TempDir dir("voltrack_cmd_track_bad");
  const auto scene = write_small_scene(dir);  // feature_dim 4
  Checkpoint ckpt;
  ckpt.model = init_model({8}, 5, 4, 3, 77);  // feature_dim 5
  save_checkpoint(ckpt, dir / "model.ckpt");
  std::ostringstream os;
  const auto cfg = command_config("track", "grid = 6\n");
  CHECK_THROWS_WITH_AS(
      cmd_track(dir / "model.ckpt", scene, cfg, dir / "traj.json", 1, std::nullopt, os),
      doctest::Contains("feature_dim=5"), SpecMismatch);
  try {
    cmd_track(dir / "model.ckpt", scene, cfg, dir / "traj.json", 1, std::nullopt, os);
  } catch (const SpecMismatch& e) {
    CHECK(std::string(e.what()).find("feature_dim=4") != std::string::npos);
  }
}

TEST_CASE("eval scores a ground-truth-derived file at APD 100") {
  TempDir dir("voltrack_cmd_eval");
  const auto scene_path = write_small_scene(dir);
  const SceneData scene = load_scene(scene_path);
  std::vector<Trajectory3D> perfect;
  for (int m = 0; m < scene.n_points(); ++m) {
    Trajectory3D tr;
    tr.point_id = m;
    tr.positions = scene.gt[m];
    tr.valid.assign(scene.gt[m].size(), 1);
    perfect.push_back(tr);
  }
  save_trajectories_json(perfect, dir / "pred.json");

  std::ostringstream os;
  cmd_eval(dir / "pred.json", scene_path, command_config("eval", ""), dir / "report.json", os);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.at("apd").get<double>() == 100.0);
  CHECK(report.contains("oa"));
  CHECK(report.contains("aj3d"));
  CHECK(report.contains("aj2d"));
  CHECK(os.str().find("APD") != std::string::npos);

  // a shorter ladder changes only the per-threshold rows
  std::ostringstream os2;
  cmd_eval(dir / "pred.json", scene_path,
           command_config("eval", "thresholds_3d = 0.01,0.02\n"), dir / "report2.json", os2);
  const auto report2 = nlohmann::json::parse(slurp(dir / "report2.json"));
  CHECK(report2.at("apd").get<double>() == 100.0);
  CHECK(report2.at("apd_per_threshold").size() == 2);
  CHECK(report.at("apd_per_threshold").size() == 5);
}

TEST_CASE("ablate covers its suites and rejects unknown names") {
  TempDir dir("voltrack_cmd_ablate");
  const std::string quick =
      "seed = 7\nscene_seeds = 1,2\npoints = 3\nframes = 4\nfeature_dim = 3\n"
      "steps = 6\nwarmup = 2\nhidden = 6\ngrid = 5\n";
  const auto cfg = command_config("ablate", quick);

  std::ostringstream os;
  CHECK_THROWS_AS(cmd_ablate("bogus", cfg, dir / "x.csv", 1, os), UnknownSuite);

  cmd_ablate("attention", cfg, dir / "attention.csv", 1, os);
  CHECK(count_lines(dir / "attention.csv") == 1 + 2);  // exactly 2 rows
  const std::string attn_csv = slurp(dir / "attention.csv");
  CHECK(attn_csv.rfind("variant,apd,aj3d,mean_err", 0) == 0);
  CHECK(attn_csv.find("attention_full") != std::string::npos);
  CHECK(attn_csv.find("attention_uniform") != std::string::npos);

  const auto camera_runs = run_ablation_suite("cameras", cfg, 1);
  CHECK(camera_runs.size() == 4 * 2);  // N in {2,3,4,5} x 2 seeds
  const auto camera_rows = aggregate_ablation(camera_runs);
  REQUIRE(camera_rows.size() == 4);
  CHECK(camera_rows[0].variant == "cameras_2");
  CHECK(camera_rows[3].variant == "cameras_5");

  const auto grid_rows = aggregate_ablation(run_ablation_suite("grid", cfg, 1));
  REQUIRE(grid_rows.size() == 3);
  CHECK(grid_rows[0].variant == "grid_8");
  CHECK(grid_rows[1].variant == "grid_16");  // the default resolution is part of the sweep
  CHECK(grid_rows[2].variant == "grid_24");
}

TEST_CASE("ablate runs are deterministic per variant and seed") {
  TempDir dir("voltrack_cmd_ablate_det");
  const auto cfg = command_config(
      "ablate",
      "seed = 7\nscene_seeds = 1\npoints = 3\nframes = 4\nfeature_dim = 3\n"
      "steps = 4\nwarmup = 1\nhidden = 6\ngrid = 5\n");
  const auto a = run_ablation_suite("losses", cfg, 1);
  const auto b = run_ablation_suite("losses", cfg, 1);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].variant == b[i].variant);
    CHECK(a[i].apd == b[i].apd);
    CHECK(a[i].aj3d == b[i].aj3d);
  }
}

TEST_CASE("bench emits the flop sweep and identical-output timings") {
  TempDir dir("voltrack_cmd_bench");
  const auto cfg = command_config(
      "bench", "grids = 8,16\nviews = 2,3\ntiming_grid = 8\nchunks = 64,256,512\n");
  std::ostringstream os;
  cmd_bench(cfg, dir / "bench.csv", 1, os);

  std::ifstream in(dir / "bench.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "kind,v_s,n_views,n_points,feature_dim,chunk,flops_voxel,flops_total,populate_ms,"
        "max_abs_delta");
  int flops = 0, timing = 0;
  std::string line;
  std::vector<double> totals;
  while (std::getline(in, line)) {
    if (line.rfind("flops,", 0) == 0) {
      ++flops;
      const auto last_comma = line.find_last_of(',');
      const auto pos = line.rfind(",,");  // flops rows end with empty timing cells
      CHECK(pos != std::string::npos);
      (void)last_comma;
    }
    if (line.rfind("timing,", 0) == 0) {
      ++timing;
      CHECK(line.substr(line.size() - 2) == ",0");  // max_abs_delta exactly zero
    }
  }
  CHECK(flops == 4);   // 2 grids x 2 view counts
  CHECK(timing == 3);  // one per chunk size
  CHECK(os.str().find("chunk") != std::string::npos);
}

}  // TEST_SUITE
