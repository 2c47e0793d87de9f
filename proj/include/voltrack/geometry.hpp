#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <vector>

#include "voltrack/common.hpp"

namespace voltrack {

using Point2 = Eigen::Vector2d;
using Point3 = Eigen::Vector3d;

/// Pinhole camera: x = K (R X + t). World-to-camera convention.
struct CameraParams {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int view_id = 0;

  /// Throws ConfigInvalid unless R is a proper rotation and K is upper
  /// triangular with positive focal lengths.
  void validate() const;

  /// Optical center in world coordinates, -R^T t.
  Eigen::Vector3d center() const;
};

struct Projection {
  Point2 pixel = Point2::Zero();
  double depth = 0.0;  // z in camera frame
};

/// Throws DegenerateProjection when the point is at or behind the
/// camera plane (depth <= kMinProjectionDepth).
inline constexpr double kMinProjectionDepth = 1e-9;
Projection project(const Point3& point, const CameraParams& cam);

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/// Fundamental matrix mapping pixels of view a to epipolar lines of
/// view b: hom(x_b)^T * m * hom(x_a) = 0. Normalized to unit Frobenius
/// norm; `degenerate` (with m = 0) flags coincident optical centers.
struct FundamentalMatrix {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  int view_a = 0;
  int view_b = 0;
  bool degenerate = false;
};

FundamentalMatrix fundamental_matrix(const CameraParams& a, const CameraParams& b);

/// Epipolar line in view b through the match of pixel x_a, as (a, b, c)
/// with a*x + b*y + c = 0.
Eigen::Vector3d epipolar_line(const FundamentalMatrix& f, const Point2& x_a);

/// Perpendicular pixel distance from x to the line; throws DegenerateLine
/// when the line's normal is (numerically) zero.
double epipolar_distance(const Point2& x, const Eigen::Vector3d& line);

struct Observation {
  CameraParams cam;
  Point2 pixel = Point2::Zero();
};

/// Direct linear triangulation with intrinsic-normalized design rows.
/// Throws InsufficientViews for fewer than two observations and
/// IllConditioned when the design matrix has an ambiguous null space
/// (near rank <= 2) or the solution lands at infinity.
Point3 dlt_triangulate(const std::vector<Observation>& obs);

/// Calibration file round trip. Format: JSON array of objects with
/// view_id, K (9 row-major), R (9 row-major), t (3).
std::vector<CameraParams> load_calibration(const std::filesystem::path& path);
void save_calibration(const std::vector<CameraParams>& cams,
                      const std::filesystem::path& path);

nlohmann::json camera_to_json(const CameraParams& cam);
CameraParams camera_from_json(const nlohmann::json& j);  // validates

}  // namespace voltrack
