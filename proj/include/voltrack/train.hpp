#pragma once

#include <filesystem>

#include "voltrack/tracker.hpp"

namespace voltrack {

struct TrainConfig {
  int max_steps = 2000;
  int warmup_steps = 100;
  double base_lr = 3e-3;
  double weight_decay = 1e-5;
  LossWeights weights;
  TrackOptions options;  // train_mode is forced on inside train()
  uint64_t seed = 0;

  void validate() const;
};

/// One training scene: the observable input plus its 3D ground truth.
struct TrainSample {
  TrackingInput input;
  std::vector<std::vector<Point3>> gt;  // [point][frame]
};

TrainSample train_sample(const SceneData& scene);

struct TrainLogRow {
  int64_t step = 0;
  double lr = 0.0;
  double recon = 0.0, proj = 0.0, attn = 0.0, total = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;  // one row per optimizer step
};

/// Round-robin over frames, one optimizer step per frame, gradients averaged
/// over scenes. Query states reinitialize at the start of every pass and are
/// otherwise detached from the gradient. Deterministic given cfg.seed.
///
/// A non-finite loss or gradient throws DivergenceDetected; when `partial`
/// is given it first receives the last good checkpoint and log.
TrainResult train(const TrainConfig& cfg, const std::vector<TrainSample>& scenes,
                  const ModelParams& init, TrainResult* partial = nullptr);

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path);

}  // namespace voltrack
