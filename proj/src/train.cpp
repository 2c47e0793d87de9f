#include "voltrack/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace voltrack {

void TrainConfig::validate() const {
  if (max_steps < 1) throw ConfigInvalid("max_steps must be >= 1");
  if (warmup_steps < 0) throw ConfigInvalid("warmup_steps must be >= 0");
  if (base_lr < 0.0 || weight_decay < 0.0)
    throw ConfigInvalid("learning rate and weight decay must be >= 0");
  weights.validate();
  options.validate();
}

TrainSample train_sample(const SceneData& scene) {
  TrainSample sample;
  sample.input = tracking_input(scene);
  sample.gt = scene.gt;
  return sample;
}

TrainResult train(const TrainConfig& cfg, const std::vector<TrainSample>& scenes,
                  const ModelParams& init, TrainResult* partial) {
  cfg.validate();
  init.validate();
  if (scenes.empty()) throw ConfigInvalid("training needs at least one scene");
  for (const auto& s : scenes) {
    s.input.check();
    if (static_cast<int>(s.gt.size()) != s.input.n_points())
      throw ShapeMismatch("ground truth does not match its scene");
  }

  ModelParams model = init;
  Eigen::VectorXd flat = flatten_model(model);
  OptimState opt;
  opt.weight_decay = cfg.weight_decay;

  std::vector<FrameGeometry> geos;
  std::vector<std::vector<TrackQuery>> queries;
  for (const auto& s : scenes) {
    geos.push_back(make_frame_geometry(s.input.cameras, cfg.options.grid_resolution));
    queries.push_back(init_queries(s.input, 0));
  }

  TrainResult result;
  Eigen::VectorXd last_good = flat;
  int64_t last_good_step = 0;
  size_t last_good_rows = 0;

  const auto diverge = [&](int64_t step, const std::string& what) {
    if (partial) {
      ModelParams good = init;
      unflatten_model(last_good, good);
      partial->checkpoint = Checkpoint{std::move(good), last_good_step};
      const size_t rows = std::min(last_good_rows, result.log.size());
      partial->log.assign(result.log.begin(),
                          result.log.begin() + static_cast<std::ptrdiff_t>(rows));
    }
    throw DivergenceDetected("training diverged at step " + std::to_string(step) + ": " + what);
  };

  for (int64_t step = 0; step < cfg.max_steps; ++step) {
    Eigen::VectorXd grads = Eigen::VectorXd::Zero(flat.size());
    FrameLoss mean_loss;
    std::vector<FrameLossResult> frame_results(scenes.size());

    for (size_t s = 0; s < scenes.size(); ++s) {
      const int frame = static_cast<int>(step % scenes[s].input.n_frames());
      if (frame == 0)
        queries[s] = init_queries(scenes[s].input, 0);
      else
        activate_queries(queries[s], scenes[s].input, frame);

      TrackOptions opts = cfg.options;
      opts.train_mode = true;
      opts.dropout_seed = derive_seed(
          cfg.seed, "step-" + std::to_string(step) + "-scene-" + std::to_string(s));
      try {
        frame_results[s] = frame_loss_and_grads(scenes[s].input, frame, geos[s], queries[s],
                                                model, opts, scenes[s].gt, cfg.weights, true);
      } catch (const NonFinite& e) {
        diverge(step, e.what());
      }
      grads += frame_results[s].grads;
      mean_loss.recon += frame_results[s].loss.recon;
      mean_loss.proj += frame_results[s].loss.proj;
      mean_loss.attn += frame_results[s].loss.attn;
      mean_loss.total += frame_results[s].loss.total;
    }
    const double inv = 1.0 / static_cast<double>(scenes.size());
    grads *= inv;
    mean_loss.recon *= inv;
    mean_loss.proj *= inv;
    mean_loss.attn *= inv;
    mean_loss.total *= inv;
    if (!std::isfinite(mean_loss.total)) diverge(step, "non-finite loss");

    // this parameter state just proved itself; remember it before updating
    last_good = flat;
    last_good_step = step;
    last_good_rows = result.log.size() + 1;  // its own row is pushed below

    opt.lr = cosine_lr(step, cfg.max_steps, cfg.warmup_steps, cfg.base_lr);
    try {
      adamw_step(flat, grads, opt);
    } catch (const NonFinite& e) {
      diverge(step, e.what());
    }
    unflatten_model(flat, model);
    flat = flatten_model(model);  // keep the optimizer on the floored scalars

    for (size_t s = 0; s < scenes.size(); ++s) {
      const int frame = static_cast<int>(step % scenes[s].input.n_frames());
      update_queries(queries[s], scenes[s].input, frame, frame_results[s].result,
                     cfg.options.momentum);
    }
    result.log.push_back(
        {step, opt.lr, mean_loss.recon, mean_loss.proj, mean_loss.attn, mean_loss.total});
  }

  result.checkpoint = Checkpoint{std::move(model), cfg.max_steps};
  return result;
}

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log " + path.string());
  out << "step,lr,recon,proj,attn,total\n";
  out.precision(17);
  for (const auto& row : log)
    out << row.step << ',' << row.lr << ',' << row.recon << ',' << row.proj << ',' << row.attn
        << ',' << row.total << "\n";
  if (!out) throw IoError("failed while writing " + path.string());
}

}  // namespace voltrack
