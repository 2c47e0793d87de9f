#include "voltrack/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "voltrack/metrics.hpp"
#include "voltrack/train.hpp"

namespace voltrack {

namespace {

SceneConfig scene_config_from(const KeyValueConfig& cfg) {
  SceneConfig sc;
  sc.n_cameras = cfg.get_int("cameras");
  sc.n_points = cfg.get_int("points");
  sc.n_frames = cfg.get_int("frames");
  sc.feature_dim = cfg.get_int("feature_dim");
  sc.image_width = cfg.get_int("image_width");
  sc.image_height = cfg.get_int("image_height");
  sc.pixel_noise_sigma = cfg.get_double("pixel_noise");
  sc.occlusion_rate = cfg.get_double("occlusion_rate");
  sc.feature_noise_sigma = cfg.get_double("feature_noise");
  sc.seed = cfg.get_u64("seed");
  sc.motion = motion_model_from_string(cfg.get_string("motion"));
  sc.validate();
  return sc;
}

std::filesystem::path csv_sibling(const std::filesystem::path& out) {
  std::filesystem::path p = out;
  p.replace_extension(".csv");
  return p;
}

}  // namespace

void cmd_simulate(const KeyValueConfig& cfg, const std::filesystem::path& out,
                  std::ostream& os) {
  cfg.require("seed");
  const SceneConfig sc = scene_config_from(cfg);
  const SceneData scene = generate_scene(sc);
  save_scene(scene, out);

  int64_t hidden = 0, total = 0;
  for (const auto& frame : scene.visible)
    for (const auto& view : frame)
      for (uint8_t v : view) {
        ++total;
        hidden += v ? 0 : 1;
      }
  os << "scene " << out.string() << ": " << scene.n_views() << " cameras, " << scene.n_points()
     << " points, " << scene.n_frames() << " frames, occluded fraction " << std::fixed
     << std::setprecision(4) << (total ? static_cast<double>(hidden) / total : 0.0) << "\n";
}

void cmd_train(const KeyValueConfig& cfg, const std::vector<std::filesystem::path>& scene_paths,
               const std::filesystem::path& out, int threads, std::ostream& os) {
  cfg.require("seed");
  if (scene_paths.empty()) throw ConfigInvalid("train needs at least one scene file");

  std::vector<TrainSample> samples;
  for (const auto& path : scene_paths) samples.push_back(train_sample(load_scene(path)));
  const TrackingInput& first = samples.front().input;
  for (const auto& s : samples)
    if (s.input.feature_dim() != first.feature_dim() || s.input.n_points() != first.n_points() ||
        s.input.n_views() != first.n_views())
      throw SpecMismatch("training scenes disagree on layout (feature_dim/points/views)");

  TrainConfig tc;
  tc.seed = cfg.get_u64("seed");
  tc.max_steps = cfg.get_int("steps");
  tc.warmup_steps = cfg.get_int("warmup");
  tc.base_lr = cfg.get_double("lr");
  tc.weight_decay = cfg.get_double("weight_decay");
  tc.weights.recon = cfg.get_double("loss_recon");
  tc.weights.proj = cfg.get_double("loss_proj");
  tc.weights.attn = cfg.get_double("loss_attn");
  tc.options.grid_resolution = cfg.get_int("grid");
  tc.options.chunk_size = cfg.get_int("chunk");
  tc.options.momentum = cfg.get_double("momentum");
  tc.options.attention = attention_mode_from_string(cfg.get_string("attention"));
  tc.options.n_threads = threads;

  const ModelParams init =
      init_model(cfg.get_ints("hidden"), first.feature_dim(), first.n_points(), first.n_views(),
                 derive_seed(tc.seed, "model-init"), cfg.get_bool("standardize"),
                 cfg.get_double("dropout"));

  const std::filesystem::path log_path = csv_sibling(out);
  TrainResult partial;
  TrainResult res;
  try {
    res = train(tc, samples, init, &partial);
  } catch (const DivergenceDetected&) {
    save_checkpoint(partial.checkpoint, out);
    write_train_log(partial.log, log_path);
    os << "training diverged; last good checkpoint written to " << out.string() << "\n";
    throw;
  }
  save_checkpoint(res.checkpoint, out);
  write_train_log(res.log, log_path);
  os << "trained " << res.log.size() << " steps on " << samples.size() << " scene(s); final loss "
     << std::scientific << std::setprecision(4) << (res.log.empty() ? 0.0 : res.log.back().total)
     << "; checkpoint " << out.string() << ", log " << log_path.string() << "\n";
}

void cmd_track(const std::filesystem::path& checkpoint_path,
               const std::filesystem::path& scene_path, const KeyValueConfig& cfg,
               const std::filesystem::path& out, int threads,
               const std::optional<std::filesystem::path>& dump_attention, std::ostream& os) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const SceneData scene = load_scene(scene_path);
  const TrackingInput input = tracking_input(scene);

  TrackOptions opts;
  opts.grid_resolution = cfg.get_int("grid");
  opts.chunk_size = cfg.get_int("chunk");
  opts.momentum = cfg.get_double("momentum");
  opts.attention = attention_mode_from_string(cfg.get_string("attention"));
  opts.n_threads = threads;

  AttentionDump dump;
  const auto tracks =
      track_sequence(input, ckpt.model, opts, dump_attention ? &dump : nullptr);

  save_trajectories_json(tracks, out);
  const std::filesystem::path csv_path = csv_sibling(out);
  save_trajectories_csv(tracks, csv_path);
  if (dump_attention) write_attention_dump(dump, *dump_attention);

  int64_t valid = 0, cells = 0;
  for (const auto& tr : tracks)
    for (uint8_t v : tr.valid) {
      ++cells;
      valid += v ? 1 : 0;
    }
  os << "tracked " << tracks.size() << " points over " << input.n_frames() << " frames ("
     << valid << "/" << cells << " valid); wrote " << out.string() << " and "
     << csv_path.string();
  if (dump_attention) os << "; attention dump " << dump_attention->string();
  os << "\n";
}

void cmd_eval(const std::filesystem::path& pred_path, const std::filesystem::path& scene_path,
              const KeyValueConfig& cfg, const std::filesystem::path& out, std::ostream& os) {
  const auto pred = load_trajectories_json(pred_path);
  const SceneData scene = load_scene(scene_path);
  const MetricReport report = evaluate(pred, scene, cfg.get_doubles("thresholds_3d"),
                                       cfg.get_doubles("thresholds_2d"));
  os << report_table(report);
  std::ofstream json_out(out);
  if (!json_out) throw IoError("cannot write report " + out.string());
  json_out << report_to_json(report).dump(2) << "\n";
  if (!json_out) throw IoError("failed while writing " + out.string());
  os << "report written to " << out.string() << "\n";
}

namespace {

/// Shared knobs of the ablation benchmark, parsed once.
struct AblateSetup {
  uint64_t seed = 0;
  std::vector<uint64_t> scene_seeds;
  int cameras = 3;
  int points = 6, frames = 16, feature_dim = 6;
  double pixel_noise = 1.0, occlusion_rate = 0.3, feature_noise = 0.1;
  int steps = 600, warmup = 60;
  double lr = 4e-3;
  std::vector<int> hidden;
  int grid = 10, chunk = 8192;
  double momentum = 0.8;
  std::vector<double> thresholds;
};

AblateSetup ablate_setup(const KeyValueConfig& cfg) {
  AblateSetup s;
  s.seed = cfg.get_u64("seed");
  for (int v : cfg.get_ints("scene_seeds")) s.scene_seeds.push_back(static_cast<uint64_t>(v));
  s.cameras = cfg.get_int("cameras");
  s.points = cfg.get_int("points");
  s.frames = cfg.get_int("frames");
  s.feature_dim = cfg.get_int("feature_dim");
  s.pixel_noise = cfg.get_double("pixel_noise");
  s.occlusion_rate = cfg.get_double("occlusion_rate");
  s.feature_noise = cfg.get_double("feature_noise");
  s.steps = cfg.get_int("steps");
  s.warmup = cfg.get_int("warmup");
  s.lr = cfg.get_double("lr");
  s.hidden = cfg.get_ints("hidden");
  s.grid = cfg.get_int("grid");
  s.chunk = cfg.get_int("chunk");
  s.momentum = cfg.get_double("momentum");
  s.thresholds = cfg.get_doubles("thresholds_3d");
  return s;
}

SceneData ablate_scene(const AblateSetup& s, uint64_t scene_seed, int cameras) {
  SceneConfig sc;
  sc.n_cameras = cameras;
  sc.n_points = s.points;
  sc.n_frames = s.frames;
  sc.feature_dim = s.feature_dim;
  sc.pixel_noise_sigma = s.pixel_noise;
  sc.occlusion_rate = s.occlusion_rate;
  sc.feature_noise_sigma = s.feature_noise;
  sc.seed = derive_seed(s.seed, "scene-" + std::to_string(scene_seed));
  sc.validate();
  return generate_scene(sc);
}

TrackOptions ablate_options(const AblateSetup& s, AttentionMode mode, int threads) {
  TrackOptions opts;
  opts.grid_resolution = s.grid;
  opts.chunk_size = s.chunk;
  opts.momentum = s.momentum;
  opts.attention = mode;
  opts.n_threads = threads;
  return opts;
}

Checkpoint ablate_train(const AblateSetup& s, const SceneData& scene, const LossWeights& weights,
                        const TrackOptions& opts, const std::string& tag) {
  TrainConfig tc;
  tc.seed = derive_seed(s.seed, "train-" + tag);
  tc.max_steps = s.steps;
  tc.warmup_steps = s.warmup;
  tc.base_lr = s.lr;
  tc.weights = weights;
  tc.options = opts;
  const ModelParams init =
      init_model(s.hidden, scene.config.feature_dim, scene.n_points(), scene.n_views(),
                 derive_seed(s.seed, "model-" + tag));
  return train(tc, {train_sample(scene)}, init).checkpoint;
}

AblationRun ablate_score(const std::string& variant, uint64_t scene_seed, const SceneData& scene,
                         const ModelParams& model, const TrackOptions& opts,
                         const std::vector<double>& thresholds) {
  const auto tracks = track_sequence(tracking_input(scene), model, opts);
  AblationRun run;
  run.variant = variant;
  run.scene_seed = scene_seed;
  run.apd = apd(tracks, scene.gt, thresholds);
  run.aj3d = jaccard3d(tracks, scene.gt, scene.visible, thresholds);
  try {
    run.mean_err = mean_3d_error(tracks, scene.gt);
  } catch (const EmptyIntersection&) {
    run.mean_err = std::numeric_limits<double>::quiet_NaN();
  }
  return run;
}

}  // namespace

std::vector<AblationRun> run_ablation_suite(const std::string& suite, const KeyValueConfig& cfg,
                                            int threads) {
  const AblateSetup s = ablate_setup(cfg);
  std::vector<AblationRun> runs;

  if (suite == "cameras") {
    for (int n : {2, 3, 4, 5})
      for (uint64_t seed : s.scene_seeds) {
        const SceneData scene = ablate_scene(s, seed, n);
        const auto opts = ablate_options(s, AttentionMode::full, threads);
        const std::string tag = "cameras-" + std::to_string(n) + "-" + std::to_string(seed);
        const Checkpoint ckpt = ablate_train(s, scene, LossWeights{}, opts, tag);
        runs.push_back(ablate_score("cameras_" + std::to_string(n), seed, scene, ckpt.model,
                                    opts, s.thresholds));
      }
    return runs;
  }

  if (suite == "grid") {
    // one checkpoint per seed: the head has no per-voxel parameters, so the
    // same weights track at any resolution
    for (uint64_t seed : s.scene_seeds) {
      const SceneData scene = ablate_scene(s, seed, s.cameras);
      const auto train_opts = ablate_options(s, AttentionMode::full, threads);
      const Checkpoint ckpt =
          ablate_train(s, scene, LossWeights{}, train_opts, "grid-" + std::to_string(seed));
      for (int g : {8, 16, 24}) {
        auto opts = train_opts;
        opts.grid_resolution = g;
        runs.push_back(ablate_score("grid_" + std::to_string(g), seed, scene, ckpt.model, opts,
                                    s.thresholds));
      }
    }
    return runs;
  }

  if (suite == "attention") {
    for (const auto mode : {AttentionMode::full, AttentionMode::uniform})
      for (uint64_t seed : s.scene_seeds) {
        const SceneData scene = ablate_scene(s, seed, s.cameras);
        const auto opts = ablate_options(s, mode, threads);
        const std::string tag = "attention-" + to_string(mode) + "-" + std::to_string(seed);
        const Checkpoint ckpt = ablate_train(s, scene, LossWeights{}, opts, tag);
        runs.push_back(ablate_score("attention_" + to_string(mode), seed, scene, ckpt.model,
                                    opts, s.thresholds));
      }
    return runs;
  }

  if (suite == "losses") {
    const std::vector<std::pair<std::string, LossWeights>> grid = {
        {"weights_1.0_0.7_0.8", LossWeights{1.0, 0.7, 0.8}},
        {"weights_1.0_0.5_0.5", LossWeights{1.0, 0.5, 0.5}},
    };
    for (const auto& [name, weights] : grid)
      for (uint64_t seed : s.scene_seeds) {
        const SceneData scene = ablate_scene(s, seed, s.cameras);
        const auto opts = ablate_options(s, AttentionMode::full, threads);
        const Checkpoint ckpt =
            ablate_train(s, scene, weights, opts, name + "-" + std::to_string(seed));
        runs.push_back(ablate_score(name, seed, scene, ckpt.model, opts, s.thresholds));
      }
    return runs;
  }

  throw UnknownSuite("unknown ablation suite '" + suite +
                     "' (expected cameras | grid | attention | losses)");
}

std::vector<AblationRow> aggregate_ablation(const std::vector<AblationRun>& runs) {
  std::vector<AblationRow> rows;
  for (const auto& run : runs) {
    AblationRow* row = nullptr;
    for (auto& r : rows)
      if (r.variant == run.variant) row = &r;
    if (!row) {
      rows.push_back(AblationRow{run.variant, 0.0, 0.0, 0.0});
      row = &rows.back();
    }
    row->apd += run.apd;
    row->aj3d += run.aj3d;
    row->mean_err += run.mean_err;
  }
  for (auto& row : rows) {
    int64_t n = 0;
    for (const auto& run : runs)
      if (run.variant == row.variant) ++n;
    row.apd /= n;
    row.aj3d /= n;
    row.mean_err /= n;
  }
  return rows;
}

void cmd_ablate(const std::string& suite, const KeyValueConfig& cfg,
                const std::filesystem::path& out, int threads, std::ostream& os) {
  const auto runs = run_ablation_suite(suite, cfg, threads);
  const auto rows = aggregate_ablation(runs);

  std::ofstream csv(out);
  if (!csv) throw IoError("cannot write ablation CSV " + out.string());
  csv << "variant,apd,aj3d,mean_err\n";
  csv.precision(17);
  for (const auto& row : rows)
    csv << row.variant << ',' << row.apd << ',' << row.aj3d << ',' << row.mean_err << "\n";
  if (!csv) throw IoError("failed while writing " + out.string());

  os << "suite " << suite << " (" << runs.size() << " runs)\n";
  os << std::left << std::setw(24) << "variant" << std::right << std::setw(10) << "apd"
     << std::setw(10) << "aj3d" << std::setw(12) << "mean_err" << "\n";
  for (const auto& row : rows)
    os << std::left << std::setw(24) << row.variant << std::right << std::fixed
       << std::setprecision(2) << std::setw(9) << row.apd << "%" << std::setprecision(4)
       << std::setw(10) << row.aj3d << std::setw(12) << row.mean_err << "\n";
  os << "rows written to " << out.string() << "\n";
}

void cmd_bench(const KeyValueConfig& cfg, const std::filesystem::path& out, int threads,
               std::ostream& os) {
  const std::vector<int> grids = cfg.get_ints("grids");
  const std::vector<int> views = cfg.get_ints("views");
  const int points = cfg.get_int("points");
  const int feature_dim = cfg.get_int("feature_dim");
  const std::vector<int> hidden = cfg.get_ints("hidden");
  const std::vector<int> chunks = cfg.get_ints("chunks");
  const int timing_grid = cfg.get_int("timing_grid");
  const int timing_views = cfg.get_int("timing_views");

  std::ofstream csv(out);
  if (!csv) throw IoError("cannot write benchmark CSV " + out.string());
  csv << "kind,v_s,n_views,n_points,feature_dim,chunk,flops_voxel,flops_total,populate_ms,"
         "max_abs_delta\n";
  csv.precision(17);

  for (int g : grids)
    for (int n : views) {
      MlpSpec spec;
      spec.layer_sizes.push_back(compound_feature_size(feature_dim, points, n));
      spec.layer_sizes.insert(spec.layer_sizes.end(), hidden.begin(), hidden.end());
      spec.layer_sizes.push_back(3);
      const FlopBreakdown fb = flop_estimate(g, n, points, feature_dim, spec);
      csv << "flops," << g << ',' << n << ',' << points << ',' << feature_dim << ",,"
          << fb.voxel_total() << ',' << fb.total() << ",,\n";
    }

  // wall-clock rows: random volumes, identical across chunk sizes
  const int64_t voxels = static_cast<int64_t>(timing_grid) * timing_grid * timing_grid;
  Rng rng(derive_seed(42, "bench-timing"));
  std::vector<Eigen::MatrixXd> attn(timing_views), feats(timing_views);
  for (int v = 0; v < timing_views; ++v) {
    attn[v].resize(voxels, points);
    for (int64_t i = 0; i < voxels; ++i)
      for (int j = 0; j < points; ++j) attn[v](i, j) = rng.uniform();
    feats[v].resize(points, feature_dim);
    for (int i = 0; i < points; ++i)
      for (int j = 0; j < feature_dim; ++j) feats[v](i, j) = rng.normal();
  }
  Eigen::MatrixXd reference;
  os << "timing populate_volume at V_s=" << timing_grid << ", N=" << timing_views << ", "
     << threads << " thread(s)\n";
  for (size_t c = 0; c < chunks.size(); ++c) {
    Eigen::MatrixXd result;
    double best_ms = std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < 3; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      result = populate_volume(attn, feats, chunks[c], threads);
      const auto stop = std::chrono::steady_clock::now();
      best_ms = std::min(best_ms,
                         std::chrono::duration<double, std::milli>(stop - start).count());
    }
    if (c == 0) reference = result;
    const double delta = (result - reference).cwiseAbs().maxCoeff();
    csv << "timing," << timing_grid << ',' << timing_views << ',' << points << ','
        << feature_dim << ',' << chunks[c] << ",,," << best_ms << ',' << delta << "\n";
    os << "  chunk " << std::setw(6) << chunks[c] << ": " << std::fixed << std::setprecision(3)
       << best_ms << " ms, max |delta| vs first chunk " << std::scientific
       << std::setprecision(2) << delta << "\n";
  }
  if (!csv) throw IoError("failed while writing " + out.string());
  os << "rows written to " << out.string() << "\n";
}

void write_attention_dump(const AttentionDump& dump, const std::filesystem::path& path) {
  static constexpr char kMagic[8] = {'V', 'T', 'A', 'T', 'T', 'N', '0', '1'};
  const int n_views = static_cast<int>(dump.first_frame_combined.size());
  const int64_t voxels = n_views ? dump.first_frame_combined.front().rows() : 0;
  const int64_t points = n_views ? dump.first_frame_combined.front().cols() : 0;

  nlohmann::json header;
  header["views"] = n_views;
  header["voxels"] = voxels;
  header["points"] = points;
  header["frames_summarized"] = dump.frames.size();
  header["dtype"] = "float32";
  header["order"] = "view,voxel,point";
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write attention dump " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const uint64_t header_len = header_text.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  std::vector<float> row(static_cast<size_t>(points));
  for (const auto& mat : dump.first_frame_combined)
    for (int64_t i = 0; i < mat.rows(); ++i) {
      for (int64_t j = 0; j < mat.cols(); ++j) row[j] = static_cast<float>(mat(i, j));
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
  if (!out) throw IoError("failed while writing " + path.string());
}

}  // namespace voltrack
