#include "voltrack/scenesim.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

static_assert(std::endian::native == std::endian::little,
              "binary sidecars are little-endian; big-endian hosts are unsupported");

namespace voltrack {

MotionModel motion_model_from_string(const std::string& s) {
  if (s == "linear") return MotionModel::linear;
  if (s == "orbit") return MotionModel::orbit;
  if (s == "mixed") return MotionModel::mixed;
  throw ConfigInvalid("unknown motion model '" + s + "' (expected linear|orbit|mixed)");
}

std::string to_string(MotionModel m) {
  switch (m) {
    case MotionModel::linear: return "linear";
    case MotionModel::orbit: return "orbit";
    default: return "mixed";
  }
}

void SceneConfig::validate() const {
  if (n_cameras < 2) throw ConfigInvalid("n_cameras must be >= 2");
  if (n_points < 1) throw ConfigInvalid("n_points must be >= 1");
  if (n_frames < 1) throw ConfigInvalid("n_frames must be >= 1");
  if (feature_dim < 1) throw ConfigInvalid("feature_dim must be >= 1");
  if (image_width < 32 || image_height < 32)
    throw ConfigInvalid("image size must be at least 32 x 32");
  if (pixel_noise_sigma < 0.0) throw ConfigInvalid("pixel_noise_sigma must be >= 0");
  if (feature_noise_sigma < 0.0) throw ConfigInvalid("feature_noise_sigma must be >= 0");
  if (occlusion_rate < 0.0 || occlusion_rate > 0.9)
    throw ConfigInvalid("occlusion_rate must lie in [0, 0.9]");
}

double SceneConfig::image_diagonal() const {
  return std::hypot(static_cast<double>(image_width), static_cast<double>(image_height));
}

bool SceneData::gt_valid(int frame, int point) const {
  for (int v = 0; v < n_views(); ++v)
    if (visible[frame][v][point]) return true;
  return false;
}

Track2D SceneData::track(int frame, int view, int point) const {
  Track2D t;
  t.view_id = cameras[view].view_id;
  t.point_id = point;
  t.frame = frame;
  t.xy = track_xy[frame][view].row(point).transpose();
  t.confidence = confidence[frame][view](point);
  t.visible = visible[frame][view][point] != 0;
  return t;
}

void SceneData::check_consistent() const {
  const int f = n_frames(), n = n_views(), k = n_points(), d = config.feature_dim;
  if (f != config.n_frames || n != config.n_cameras || k != config.n_points)
    throw ShapeMismatch("scene arrays disagree with config");
  for (const auto& traj : gt)
    if (static_cast<int>(traj.size()) != f) throw ShapeMismatch("ground-truth length != n_frames");
  for (int t = 0; t < f; ++t) {
    if (static_cast<int>(track_xy[t].size()) != n || static_cast<int>(features[t].size()) != n ||
        static_cast<int>(visible[t].size()) != n || static_cast<int>(confidence[t].size()) != n)
      throw ShapeMismatch("per-frame view count mismatch");
    for (int v = 0; v < n; ++v) {
      if (track_xy[t][v].rows() != k || track_xy[t][v].cols() != 2)
        throw ShapeMismatch("track matrix shape mismatch");
      if (features[t][v].rows() != k || features[t][v].cols() != d)
        throw ShapeMismatch("feature matrix shape mismatch");
      if (static_cast<int>(visible[t][v].size()) != k || confidence[t][v].size() != k)
        throw ShapeMismatch("visibility/confidence length mismatch");
    }
  }
}

std::vector<CameraParams> ring_rig(int n_cameras, double radius, double height_amp,
                                   int image_width, int image_height) {
  if (n_cameras < 2) throw ConfigInvalid("ring_rig needs >= 2 cameras");
  if (radius <= 0.0) throw ConfigInvalid("ring_rig radius must be positive");
  const double focal = 0.75 * std::min(image_width, image_height);
  const Eigen::Vector3d up(0.0, 0.0, 1.0);
  std::vector<CameraParams> cams;
  for (int i = 0; i < n_cameras; ++i) {
    const double theta = 2.0 * M_PI * i / n_cameras + 0.3;
    const Eigen::Vector3d center(radius * std::cos(theta), radius * std::sin(theta),
                                 (i % 2 == 0 ? 1.0 : -1.0) * height_amp);
    const Eigen::Vector3d z_c = (-center).normalized();  // look at the origin
    const Eigen::Vector3d x_c = z_c.cross(up).normalized();
    const Eigen::Vector3d y_c = z_c.cross(x_c);
    CameraParams cam;
    cam.view_id = i;
    cam.rotation.row(0) = x_c;
    cam.rotation.row(1) = y_c;
    cam.rotation.row(2) = z_c;
    cam.translation = -cam.rotation * center;
    cam.intrinsics << focal, 0.0, image_width / 2.0, 0.0, focal, image_height / 2.0, 0.0, 0.0, 1.0;
    cam.validate();
    cams.push_back(cam);
  }
  return cams;
}

namespace {

Eigen::Vector3d random_unit(Rng& rng) {
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  } while (v.norm() < 1e-6);
  return v.normalized();
}

Eigen::Vector3d random_in_ball(Rng& rng, double radius) {
  return random_unit(rng) * radius * std::cbrt(rng.uniform());
}

// Trajectories stay inside a ball of radius 0.75 so every point projects
// well inside the image for the default rig.
std::vector<Point3> make_trajectory(MotionModel model, int point_id, int n_frames, Rng& rng) {
  const MotionModel m = (model == MotionModel::mixed)
                            ? (point_id % 2 == 0 ? MotionModel::linear : MotionModel::orbit)
                            : model;
  std::vector<Point3> traj(n_frames);
  const double denom = std::max(1, n_frames - 1);
  if (m == MotionModel::linear) {
    const Eigen::Vector3d x0 = random_in_ball(rng, 0.55);
    const Eigen::Vector3d dir = random_unit(rng);
    const double length = rng.uniform(0.05, 0.2);
    for (int t = 0; t < n_frames; ++t) traj[t] = x0 + dir * (length * t / denom);
  } else {
    const Eigen::Vector3d center = random_in_ball(rng, 0.25);
    const Eigen::Vector3d axis = random_unit(rng);
    const double orbit_radius = rng.uniform(0.15, 0.5);
    const double sweep = rng.uniform(0.5, 1.7);
    Eigen::Vector3d seed_dir;
    do {
      seed_dir = random_unit(rng);
      seed_dir -= seed_dir.dot(axis) * axis;
    } while (seed_dir.norm() < 1e-3);
    const Eigen::Vector3d v0 = seed_dir.normalized() * orbit_radius;
    for (int t = 0; t < n_frames; ++t)
      traj[t] = center + Eigen::AngleAxisd(sweep * t / denom, axis) * v0;
  }
  return traj;
}

}  // namespace

SceneData generate_scene(const SceneConfig& config) {
  config.validate();
  SceneData scene;
  scene.config = config;
  scene.cameras = ring_rig(config.n_cameras, 4.0, 0.5, config.image_width, config.image_height);

  const int f = config.n_frames, n = config.n_cameras, k = config.n_points,
            d = config.feature_dim;

  Rng traj_rng(derive_seed(config.seed, "trajectories"));
  scene.gt.reserve(k);
  for (int p = 0; p < k; ++p)
    scene.gt.push_back(make_trajectory(config.motion, p, f, traj_rng));

  // Per-point base descriptor shared across views; per-sample noise on top.
  Rng feat_rng(derive_seed(config.seed, "features"));
  Eigen::MatrixXd base(k, d);
  for (int p = 0; p < k; ++p)
    for (int c = 0; c < d; ++c) base(p, c) = feat_rng.normal();

  // Two-state visibility chain per (view, point), starting visible, with
  // mean occluded fraction equal to occlusion_rate and mean occluded run of
  // five frames (p_return = 0.2).
  Rng occ_rng(derive_seed(config.seed, "occlusion"));
  const double p_return = 0.2;
  const double p_leave =
      config.occlusion_rate > 0.0
          ? p_return * config.occlusion_rate / (1.0 - config.occlusion_rate)
          : 0.0;
  std::vector<std::vector<uint8_t>> vis_state(n, std::vector<uint8_t>(k, 1));
  scene.visible.resize(f);
  for (int t = 0; t < f; ++t) {
    if (t > 0 && config.occlusion_rate > 0.0) {
      for (int v = 0; v < n; ++v)
        for (int p = 0; p < k; ++p) {
          const double r = occ_rng.uniform();
          vis_state[v][p] = vis_state[v][p] ? (r >= p_leave) : (r < p_return);
        }
    }
    scene.visible[t] = vis_state;
  }

  Rng px_rng(derive_seed(config.seed, "pixel-noise"));
  scene.track_xy.resize(f);
  scene.confidence.resize(f);
  scene.features.resize(f);
  for (int t = 0; t < f; ++t) {
    scene.track_xy[t].assign(n, Eigen::MatrixXd::Zero(k, 2));
    scene.confidence[t].assign(n, Eigen::VectorXd::Zero(k));
    scene.features[t].assign(n, Eigen::MatrixXd::Zero(k, d));
    for (int v = 0; v < n; ++v) {
      for (int p = 0; p < k; ++p) {
        for (int c = 0; c < d; ++c) {
          double z = base(p, c);
          if (config.feature_noise_sigma > 0.0)
            z += feat_rng.normal(0.0, config.feature_noise_sigma);
          scene.features[t][v](p, c) = z;
        }
        if (!scene.visible[t][v][p]) continue;
        const Projection proj = project(scene.gt[p][t], scene.cameras[v]);
        Point2 xy = proj.pixel;
        double conf = 1.0;
        if (config.pixel_noise_sigma > 0.0) {
          const Point2 eta(px_rng.normal(0.0, config.pixel_noise_sigma),
                           px_rng.normal(0.0, config.pixel_noise_sigma));
          xy += eta;
          conf = 1.0 / (1.0 + eta.norm());
        }
        scene.track_xy[t][v].row(p) = xy.transpose();
        scene.confidence[t][v](p) = conf;
      }
    }
  }
  scene.check_consistent();
  return scene;
}

std::vector<CameraParams> perturb_calibration(const std::vector<CameraParams>& cams,
                                              const CalibrationNoise& noise, uint64_t seed) {
  if (noise.intrinsic_px < 0.0 || noise.rotation_deg < 0.0 || noise.translation_cm < 0.0)
    throw ConfigInvalid("calibration noise sigmas must be >= 0");
  Rng rng(derive_seed(seed, "calibration-noise"));
  std::vector<CameraParams> out = cams;
  for (auto& cam : out) {
    if (noise.intrinsic_px > 0.0) {
      cam.intrinsics(0, 0) += rng.normal(0.0, noise.intrinsic_px);
      cam.intrinsics(1, 1) += rng.normal(0.0, noise.intrinsic_px);
      cam.intrinsics(0, 2) += rng.normal(0.0, noise.intrinsic_px);
      cam.intrinsics(1, 2) += rng.normal(0.0, noise.intrinsic_px);
    }
    if (noise.rotation_deg > 0.0) {
      const Eigen::Vector3d axis = random_unit(rng);
      const double angle = rng.normal(0.0, noise.rotation_deg * M_PI / 180.0);
      cam.rotation = (Eigen::AngleAxisd(angle, axis) * cam.rotation).eval();
    }
    if (noise.translation_cm > 0.0)
      for (int i = 0; i < 3; ++i) cam.translation(i) += rng.normal(0.0, noise.translation_cm / 100.0);
    cam.validate();
  }
  return out;
}

namespace {

constexpr char kFeatureMagic[8] = {'V', 'T', 'F', 'E', 'A', 'T', '0', '1'};

std::filesystem::path sidecar_path(const std::filesystem::path& json_path,
                                   const std::string& name) {
  return json_path.parent_path() / name;
}

void write_features_sidecar(const SceneData& scene, const std::filesystem::path& path) {
  nlohmann::json header;
  header["frames"] = scene.n_frames();
  header["views"] = scene.n_views();
  header["points"] = scene.n_points();
  header["dim"] = scene.config.feature_dim;
  header["dtype"] = "float32";
  header["order"] = "frame,view,point,dim";
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature sidecar " + path.string());
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  const uint64_t header_len = header_text.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  std::vector<float> row(scene.config.feature_dim);
  for (int t = 0; t < scene.n_frames(); ++t)
    for (int v = 0; v < scene.n_views(); ++v)
      for (int p = 0; p < scene.n_points(); ++p) {
        for (int c = 0; c < scene.config.feature_dim; ++c)
          row[c] = static_cast<float>(scene.features[t][v](p, c));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
      }
  if (!out) throw IoError("failed while writing " + path.string());
}

void read_features_sidecar(SceneData& scene, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature sidecar " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kFeatureMagic, sizeof(magic)) != 0)
    throw IoError("bad magic in feature sidecar " + path.string());
  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len > (1ULL << 20)) throw IoError("bad header length in " + path.string());
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad sidecar header: " + std::string(e.what()));
  }
  const int f = header.at("frames").get<int>(), n = header.at("views").get<int>(),
            k = header.at("points").get<int>(), d = header.at("dim").get<int>();
  if (header.at("dtype").get<std::string>() != "float32")
    throw ShapeMismatch("feature sidecar dtype must be float32");
  if (f != scene.n_frames() || n != scene.n_views() || k != scene.config.n_points ||
      d != scene.config.feature_dim)
    throw ShapeMismatch("feature sidecar shape disagrees with scene");
  std::vector<float> row(d);
  for (int t = 0; t < f; ++t)
    for (int v = 0; v < n; ++v)
      for (int p = 0; p < k; ++p) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) throw IoError("feature sidecar truncated: " + path.string());
        for (int c = 0; c < d; ++c) scene.features[t][v](p, c) = row[c];
      }
}

nlohmann::json config_to_json(const SceneConfig& c) {
  return nlohmann::json{{"n_cameras", c.n_cameras},
                        {"n_points", c.n_points},
                        {"n_frames", c.n_frames},
                        {"feature_dim", c.feature_dim},
                        {"image_width", c.image_width},
                        {"image_height", c.image_height},
                        {"pixel_noise_sigma", c.pixel_noise_sigma},
                        {"occlusion_rate", c.occlusion_rate},
                        {"feature_noise_sigma", c.feature_noise_sigma},
                        {"seed", c.seed},
                        {"motion", to_string(c.motion)}};
}

SceneConfig config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.n_cameras = j.at("n_cameras").get<int>();
  c.n_points = j.at("n_points").get<int>();
  c.n_frames = j.at("n_frames").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.image_width = j.at("image_width").get<int>();
  c.image_height = j.at("image_height").get<int>();
  c.pixel_noise_sigma = j.at("pixel_noise_sigma").get<double>();
  c.occlusion_rate = j.at("occlusion_rate").get<double>();
  c.feature_noise_sigma = j.at("feature_noise_sigma").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.motion = motion_model_from_string(j.at("motion").get<std::string>());
  return c;
}

}  // namespace

void save_scene(const SceneData& scene, const std::filesystem::path& json_path) {
  scene.check_consistent();
  nlohmann::json j;
  j["config"] = config_to_json(scene.config);
  j["cameras"] = nlohmann::json::array();
  for (const auto& cam : scene.cameras) j["cameras"].push_back(camera_to_json(cam));

  j["points"] = nlohmann::json::array();
  for (int p = 0; p < scene.n_points(); ++p) {
    nlohmann::json frames = nlohmann::json::array();
    for (int t = 0; t < scene.n_frames(); ++t) {
      const Point3& x = scene.gt[p][t];
      frames.push_back({{"frame", t}, {"xyz", {x.x(), x.y(), x.z()}}});
    }
    j["points"].push_back({{"point_id", p}, {"frames", std::move(frames)}});
  }

  j["tracks"] = nlohmann::json::array();
  for (const Track2D& t : all_tracks(scene))
    j["tracks"].push_back({{"view_id", t.view_id},
                           {"point_id", t.point_id},
                           {"frame", t.frame},
                           {"x", t.xy.x()},
                           {"y", t.xy.y()},
                           {"confidence", t.confidence},
                           {"visible", t.visible}});

  const std::string sidecar_name = json_path.stem().string() + ".features.bin";
  j["features_file"] = sidecar_name;
  write_features_sidecar(scene, sidecar_path(json_path, sidecar_name));

  std::ofstream out(json_path);
  if (!out) throw IoError("cannot write scene file " + json_path.string());
  out << j.dump(2) << "\n";
}

SceneData load_scene(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open scene file " + json_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("scene file " + json_path.string() + ": " + e.what());
  }

  SceneData scene;
  try {
    scene.config = config_from_json(j.at("config"));
    scene.config.validate();
    for (const auto& entry : j.at("cameras")) scene.cameras.push_back(camera_from_json(entry));
    if (scene.n_views() != scene.config.n_cameras)
      throw ShapeMismatch("camera count disagrees with config");

    const int f = scene.config.n_frames, k = scene.config.n_points, n = scene.config.n_cameras;
    scene.gt.assign(k, std::vector<Point3>(f, Point3::Zero()));
    std::vector<uint8_t> seen_point(k, 0);
    for (const auto& pj : j.at("points")) {
      const int p = pj.at("point_id").get<int>();
      if (p < 0 || p >= k) throw IndexMismatch("point_id out of range: " + std::to_string(p));
      seen_point[p] = 1;
      const auto& frames = pj.at("frames");
      if (static_cast<int>(frames.size()) != f)
        throw FrameGap("point " + std::to_string(p) + " covers " +
                       std::to_string(frames.size()) + " frames, expected " + std::to_string(f));
      int expected = 0;
      for (const auto& fr : frames) {
        const int t = fr.at("frame").get<int>();
        if (t != expected)
          throw FrameGap("point " + std::to_string(p) + ": frame " + std::to_string(t) +
                         " breaks the contiguous 0.." + std::to_string(f - 1) + " range");
        const auto xyz = fr.at("xyz").get<std::vector<double>>();
        if (xyz.size() != 3) throw ShapeMismatch("xyz must have 3 entries");
        scene.gt[p][t] = Point3(xyz[0], xyz[1], xyz[2]);
        ++expected;
      }
    }
    for (int p = 0; p < k; ++p)
      if (!seen_point[p]) throw FrameGap("point " + std::to_string(p) + " missing from file");

    std::map<int, int> view_index;
    for (int v = 0; v < n; ++v) view_index[scene.cameras[v].view_id] = v;

    scene.track_xy.assign(f, std::vector<Eigen::MatrixXd>(n, Eigen::MatrixXd::Zero(k, 2)));
    scene.confidence.assign(f, std::vector<Eigen::VectorXd>(n, Eigen::VectorXd::Zero(k)));
    scene.visible.assign(f, std::vector<std::vector<uint8_t>>(n, std::vector<uint8_t>(k, 0)));
    scene.features.assign(
        f, std::vector<Eigen::MatrixXd>(n, Eigen::MatrixXd::Zero(k, scene.config.feature_dim)));
    for (const auto& tj : j.at("tracks")) {
      const int vid = tj.at("view_id").get<int>();
      const auto it = view_index.find(vid);
      if (it == view_index.end()) throw IndexMismatch("track references unknown view_id");
      const int v = it->second;
      const int p = tj.at("point_id").get<int>();
      const int t = tj.at("frame").get<int>();
      if (p < 0 || p >= k || t < 0 || t >= f) throw IndexMismatch("track index out of range");
      scene.track_xy[t][v](p, 0) = tj.at("x").get<double>();
      scene.track_xy[t][v](p, 1) = tj.at("y").get<double>();
      scene.confidence[t][v](p) = tj.at("confidence").get<double>();
      scene.visible[t][v][p] = tj.at("visible").get<bool>() ? 1 : 0;
    }

    read_features_sidecar(scene,
                          sidecar_path(json_path, j.at("features_file").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("scene file " + json_path.string() + ": " + e.what());
  }
  scene.check_consistent();
  return scene;
}

std::vector<Track2D> all_tracks(const SceneData& scene) {
  std::vector<Track2D> out;
  out.reserve(static_cast<size_t>(scene.n_frames()) * scene.n_views() * scene.n_points());
  for (int t = 0; t < scene.n_frames(); ++t)
    for (int v = 0; v < scene.n_views(); ++v)
      for (int p = 0; p < scene.n_points(); ++p) out.push_back(scene.track(t, v, p));
  return out;
}

SceneData restrict_views(const SceneData& scene, const std::vector<int>& view_ids) {
  if (view_ids.size() < 2) throw InsufficientViews("need at least two views");
  std::vector<int> idx;
  for (int vid : view_ids) {
    int found = -1;
    for (int v = 0; v < scene.n_views(); ++v)
      if (scene.cameras[v].view_id == vid) found = v;
    if (found < 0) throw IndexMismatch("unknown view_id " + std::to_string(vid));
    idx.push_back(found);
  }
  SceneData out;
  out.config = scene.config;
  out.config.n_cameras = static_cast<int>(idx.size());
  for (int v : idx) out.cameras.push_back(scene.cameras[v]);
  out.gt = scene.gt;
  const int f = scene.n_frames();
  out.track_xy.resize(f);
  out.confidence.resize(f);
  out.visible.resize(f);
  out.features.resize(f);
  for (int t = 0; t < f; ++t)
    for (int v : idx) {
      out.track_xy[t].push_back(scene.track_xy[t][v]);
      out.confidence[t].push_back(scene.confidence[t][v]);
      out.visible[t].push_back(scene.visible[t][v]);
      out.features[t].push_back(scene.features[t][v]);
    }
  out.check_consistent();
  return out;
}

}  // namespace voltrack
