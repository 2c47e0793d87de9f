#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "voltrack/geometry.hpp"

namespace voltrack {

enum class MotionModel { linear, orbit, mixed };

MotionModel motion_model_from_string(const std::string& s);
std::string to_string(MotionModel m);

struct SceneConfig {
  int n_cameras = 3;
  int n_points = 12;
  int n_frames = 48;
  int feature_dim = 16;
  int image_width = 640;
  int image_height = 480;
  double pixel_noise_sigma = 0.0;    // px
  double occlusion_rate = 0.0;       // stationary occluded fraction per (view, point)
  double feature_noise_sigma = 0.0;  // per-sample descriptor noise
  uint64_t seed = 0;
  MotionModel motion = MotionModel::mixed;

  void validate() const;  // throws ConfigInvalid
  double image_diagonal() const;
};

/// One 2D track sample as stored in scene files.
struct Track2D {
  int view_id = 0;
  int point_id = 0;
  int frame = 0;
  Point2 xy = Point2::Zero();
  double confidence = 0.0;
  bool visible = false;
};

/// Dense multi-view scene: ground truth, per-view 2D tracks, visibility and
/// descriptors. Indexing is [frame][view] with one row per point.
struct SceneData {
  SceneConfig config;
  std::vector<CameraParams> cameras;
  std::vector<std::vector<Point3>> gt;                  // [point][frame]
  std::vector<std::vector<Eigen::MatrixXd>> track_xy;   // [frame][view] K x 2
  std::vector<std::vector<Eigen::VectorXd>> confidence; // [frame][view] K
  std::vector<std::vector<std::vector<uint8_t>>> visible;  // [frame][view] K
  std::vector<std::vector<Eigen::MatrixXd>> features;   // [frame][view] K x D

  int n_frames() const { return static_cast<int>(track_xy.size()); }
  int n_views() const { return static_cast<int>(cameras.size()); }
  int n_points() const { return static_cast<int>(gt.size()); }

  /// True ground-truth validity: point seen by at least one view this frame.
  bool gt_valid(int frame, int point) const;
  Track2D track(int frame, int view, int point) const;
  void check_consistent() const;  // throws ShapeMismatch / IndexMismatch
};

/// Evenly spaced inward-looking cameras on a circle of the given radius,
/// alternating above/below the plane by height_amp. Focal length is
/// 0.75 * min(width, height); principal point is the image center.
std::vector<CameraParams> ring_rig(int n_cameras, double radius, double height_amp,
                                   int image_width, int image_height);

SceneData generate_scene(const SceneConfig& config);

struct CalibrationNoise {
  double intrinsic_px = 0.0;    // sigma on fx, fy, cx, cy (px)
  double rotation_deg = 0.0;    // sigma of rotation angle about a random axis
  double translation_cm = 0.0;  // per-component sigma (cm)
};

/// Perturbs each camera independently. A zero sigma consumes no random
/// draws, so runs differing only in zeroed components stay bit-identical.
std::vector<CameraParams> perturb_calibration(const std::vector<CameraParams>& cams,
                                              const CalibrationNoise& noise, uint64_t seed);

/// Scene files: a JSON document (cameras, ground-truth points, 2D tracks)
/// plus a binary float32 little-endian descriptor sidecar referenced by it.
void save_scene(const SceneData& scene, const std::filesystem::path& json_path);
SceneData load_scene(const std::filesystem::path& json_path);

std::vector<Track2D> all_tracks(const SceneData& scene);

/// Copy of the scene restricted to the given view ids (order preserved).
SceneData restrict_views(const SceneData& scene, const std::vector<int>& view_ids);

}  // namespace voltrack
