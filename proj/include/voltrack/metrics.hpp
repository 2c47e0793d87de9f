#pragma once

#include <optional>
#include <string>

#include "voltrack/tracker.hpp"

namespace voltrack {

/// Doubling threshold ladders; world units for 3D, pixels for 2D.
inline const std::vector<double> kDefaultThresholds3D = {0.01, 0.02, 0.04, 0.08, 0.16};
inline const std::vector<double> kDefaultThresholds2D = {1.0, 2.0, 4.0, 8.0, 16.0};

struct MetricReport {
  double apd = 0.0;          // percent
  std::optional<double> oa;  // percent; empty when the scene has no occlusion episodes
  double aj3d = 0.0;         // [0, 1]
  double aj2d = 0.0;         // [0, 1]
  std::vector<double> apd_per_threshold;  // percent, aligned with thresholds_3d
  std::vector<double> thresholds_3d;
  std::vector<double> thresholds_2d;
  int n_points = 0;
  int n_frames = 0;
};

/// Fraction of (point, frame) pairs within each threshold of ground truth,
/// averaged over the ladder; invalid predictions are misses. Percent.
double apd(const std::vector<Trajectory3D>& pred, const std::vector<std::vector<Point3>>& gt,
           const std::vector<double>& thresholds,
           std::vector<double>* per_threshold = nullptr);

inline constexpr int kOcclusionWindow = 5;

/// APD restricted to the first kOcclusionWindow frames after each total
/// occlusion episode, starting when the point is again seen by >= 2 views
/// and truncated by the next total occlusion. Empty when no episode ends
/// inside the sequence.
std::optional<double> occlusion_accuracy(
    const std::vector<Trajectory3D>& pred, const std::vector<std::vector<Point3>>& gt,
    const std::vector<std::vector<std::vector<uint8_t>>>& visible,
    const std::vector<double>& thresholds);

/// Average Jaccard in world space. Per threshold: TP = valid prediction
/// within range of a visible point, FP = valid prediction that is off target
/// or claims a hidden point, FN = visible point missed or predicted invalid;
/// score = TP/(TP+FP+FN), averaged over the ladder. A point counts as
/// visible when >= 1 view sees it.
double jaccard3d(const std::vector<Trajectory3D>& pred,
                 const std::vector<std::vector<Point3>>& gt,
                 const std::vector<std::vector<std::vector<uint8_t>>>& visible,
                 const std::vector<double>& thresholds);

/// 2D variant: prediction and ground truth are projected through every
/// camera; visibility is that camera's own, and predictions that land
/// behind a camera count as off target. Averaged over views and ladder.
double jaccard2d(const std::vector<Trajectory3D>& pred,
                 const std::vector<std::vector<Point3>>& gt,
                 const std::vector<CameraParams>& cams,
                 const std::vector<std::vector<std::vector<uint8_t>>>& visible,
                 const std::vector<double>& thresholds_px);

/// All four metrics against a scene's ground truth.
MetricReport evaluate(const std::vector<Trajectory3D>& pred, const SceneData& scene,
                      const std::vector<double>& thresholds_3d = kDefaultThresholds3D,
                      const std::vector<double>& thresholds_2d = kDefaultThresholds2D);

/// Mean Euclidean distance over (point, frame) pairs with a valid
/// prediction. Throws EmptyIntersection if no frame qualifies.
double mean_3d_error(const std::vector<Trajectory3D>& pred,
                     const std::vector<std::vector<Point3>>& gt);

nlohmann::json report_to_json(const MetricReport& report);
std::string report_table(const MetricReport& report);

struct CalibrationSweepRow {
  std::string group;  // none | intrinsic_px | rotation_deg | translation_cm
  double level = 0.0;
  double apd = 0.0;   // percent, mean over seeds
  double aj3d = 0.0;  // mean over seeds
};

/// Tracks the scene under per-group calibration noise (the tracker gets the
/// perturbed cameras, the observations keep the true ones) and reports mean
/// metrics per noise level. The first row is the clean run.
std::vector<CalibrationSweepRow> calibration_sweep(
    const SceneData& scene, const ModelParams& model, const TrackOptions& opts,
    const std::vector<double>& intrinsic_px, const std::vector<double>& rotation_deg,
    const std::vector<double>& translation_cm, const std::vector<uint64_t>& seeds,
    const std::vector<double>& thresholds_3d = kDefaultThresholds3D);

void write_sweep_csv(const std::vector<CalibrationSweepRow>& rows,
                     const std::filesystem::path& path);

/// Closed-form cost model in multiply-adds (1 MAC = 2 FLOPs). Every stage
/// except the head is proportional to V_s^3, and view/point counts enter
/// linearly by construction: the per-partner epipolar work is folded into a
/// fixed per-(view, voxel, point) constant, and the head's layer widths are
/// taken from the given spec rather than recomputed from K and N.
struct FlopBreakdown {
  double grid_projection = 0.0;  // camera transform of every voxel
  double attention = 0.0;        // distances + softmax
  double masks = 0.0;            // epipolar + reprojection gates
  double aggregation = 0.0;      // feature gather, the O(V^3 N K D) stage
  double readout = 0.0;          // correspondence scores + argmax
  double mlp = 0.0;              // head, V-independent

  double voxel_total() const;  // everything proportional to V_s^3
  double total() const;
};

FlopBreakdown flop_estimate(int grid_resolution, int n_views, int n_points, int feature_dim,
                            const MlpSpec& spec);

}  // namespace voltrack
