#include "voltrack/geometry.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>

namespace voltrack {

void CameraParams::validate() const {
  const Eigen::Matrix3d should_be_identity = rotation.transpose() * rotation;
  if ((should_be_identity - Eigen::Matrix3d::Identity()).norm() > 1e-6)
    throw ConfigInvalid("camera " + std::to_string(view_id) + ": R is not orthonormal");
  if (rotation.determinant() < 0.0)
    throw ConfigInvalid("camera " + std::to_string(view_id) + ": R is a reflection");
  if (intrinsics(0, 0) <= 0.0 || intrinsics(1, 1) <= 0.0)
    throw ConfigInvalid("camera " + std::to_string(view_id) + ": non-positive focal length");
  if (std::abs(intrinsics(1, 0)) > 1e-12 || std::abs(intrinsics(2, 0)) > 1e-12 ||
      std::abs(intrinsics(2, 1)) > 1e-12 || std::abs(intrinsics(2, 2) - 1.0) > 1e-12)
    throw ConfigInvalid("camera " + std::to_string(view_id) + ": K is not an upper-triangular intrinsic matrix");
  if (!intrinsics.allFinite() || !rotation.allFinite() || !translation.allFinite())
    throw ConfigInvalid("camera " + std::to_string(view_id) + ": non-finite entries");
}

Eigen::Vector3d CameraParams::center() const { return -rotation.transpose() * translation; }

Projection project(const Point3& point, const CameraParams& cam) {
  const Eigen::Vector3d pc = cam.rotation * point + cam.translation;
  if (pc.z() <= kMinProjectionDepth)
    throw DegenerateProjection("point at or behind camera " + std::to_string(cam.view_id) +
                               " (depth " + std::to_string(pc.z()) + ")");
  const Eigen::Vector3d h = cam.intrinsics * pc;
  return {Point2(h.x() / h.z(), h.y() / h.z()), pc.z()};
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

FundamentalMatrix fundamental_matrix(const CameraParams& a, const CameraParams& b) {
  FundamentalMatrix f;
  f.view_a = a.view_id;
  f.view_b = b.view_id;
  // Relative pose mapping camera-a coordinates to camera-b coordinates.
  const Eigen::Matrix3d r_rel = b.rotation * a.rotation.transpose();
  const Eigen::Vector3d t_rel = b.translation - r_rel * a.translation;
  if (t_rel.norm() < 1e-10) {
    f.degenerate = true;
    return f;
  }
  const Eigen::Matrix3d e = skew(t_rel) * r_rel;
  f.m = b.intrinsics.transpose().inverse() * e * a.intrinsics.inverse();
  f.m /= f.m.norm();
  return f;
}

Eigen::Vector3d epipolar_line(const FundamentalMatrix& f, const Point2& x_a) {
  if (f.degenerate)
    throw DegenerateLine("fundamental matrix for views (" + std::to_string(f.view_a) + ", " +
                         std::to_string(f.view_b) + ") is degenerate");
  return f.m * x_a.homogeneous();
}

double epipolar_distance(const Point2& x, const Eigen::Vector3d& line) {
  const double n = std::hypot(line.x(), line.y());
  if (n < 1e-12) throw DegenerateLine("epipolar line has zero normal");
  return std::abs(line.x() * x.x() + line.y() * x.y() + line.z()) / n;
}

Point3 dlt_triangulate(const std::vector<Observation>& obs) {
  if (obs.size() < 2)
    throw InsufficientViews("triangulation needs >= 2 observations, got " +
                            std::to_string(obs.size()));
  Eigen::MatrixXd design(2 * obs.size(), 4);
  for (size_t i = 0; i < obs.size(); ++i) {
    const CameraParams& cam = obs[i].cam;
    // Condition by moving pixels back through K: y = K^-1 hom(x), and use the
    // intrinsic-free projection P = [R | t].
    const Eigen::Vector3d y = cam.intrinsics.inverse() * obs[i].pixel.homogeneous();
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = cam.rotation;
    p.col(3) = cam.translation;
    design.row(2 * i) = y.x() * p.row(2) - y.z() * p.row(0);
    design.row(2 * i + 1) = y.y() * p.row(2) - y.z() * p.row(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  // A clean triangulation has exactly one near-zero singular value. If the
  // second-smallest collapses too, the null space is ambiguous.
  if (sigma(2) <= 1e-6 * sigma(0))
    throw IllConditioned("triangulation design matrix is rank-deficient (sigma2/sigma0 = " +
                         std::to_string(sigma(2) / sigma(0)) + ")");
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h.w()) <= 1e-12 * h.head<3>().norm())
    throw IllConditioned("triangulated point is at infinity");
  return h.head<3>() / h.w();
}

nlohmann::json camera_to_json(const CameraParams& cam) {
  nlohmann::json j;
  j["view_id"] = cam.view_id;
  auto flat = [](const Eigen::Matrix3d& m) {
    std::vector<double> v(9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) v[3 * r + c] = m(r, c);
    return v;
  };
  j["K"] = flat(cam.intrinsics);
  j["R"] = flat(cam.rotation);
  j["t"] = std::vector<double>{cam.translation.x(), cam.translation.y(), cam.translation.z()};
  return j;
}

CameraParams camera_from_json(const nlohmann::json& j) {
  CameraParams cam;
  cam.view_id = j.at("view_id").get<int>();
  const auto k = j.at("K").get<std::vector<double>>();
  const auto r = j.at("R").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (k.size() != 9 || r.size() != 9 || t.size() != 3)
    throw ConfigInvalid("calibration entry for view " + std::to_string(cam.view_id) +
                        " has wrong array lengths");
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) {
      cam.intrinsics(row, col) = k[3 * row + col];
      cam.rotation(row, col) = r[3 * row + col];
    }
  cam.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  cam.validate();
  return cam;
}

std::vector<CameraParams> load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open calibration file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("calibration file " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw ConfigInvalid("calibration file must hold a JSON array");
  std::vector<CameraParams> cams;
  std::set<int> ids;
  try {
    for (const auto& entry : j) {
      cams.push_back(camera_from_json(entry));
      if (!ids.insert(cams.back().view_id).second)
        throw ConfigInvalid("duplicate view_id " + std::to_string(cams.back().view_id));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("calibration file " + path.string() + ": " + e.what());
  }
  if (cams.empty()) throw ConfigInvalid("calibration file holds no cameras");
  return cams;
}

void save_calibration(const std::vector<CameraParams>& cams, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& cam : cams) j.push_back(camera_to_json(cam));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write calibration file " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace voltrack
