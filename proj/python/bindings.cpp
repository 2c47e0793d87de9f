// Python bindings for the computational core. The CLI layer stays native;
// everything needed to generate scenes, train, track and score is exposed
// with numpy-friendly types.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "voltrack/common.hpp"
#include "voltrack/geometry.hpp"
#include "voltrack/metrics.hpp"
#include "voltrack/scenesim.hpp"
#include "voltrack/tracker.hpp"
#include "voltrack/train.hpp"
#include "voltrack/volume.hpp"

namespace py = pybind11;
using namespace voltrack;

namespace {

Eigen::MatrixX3d positions_matrix(const Trajectory3D& t) {
  Eigen::MatrixX3d out(static_cast<Eigen::Index>(t.positions.size()), 3);
  for (size_t i = 0; i < t.positions.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = t.positions[i];
  return out;
}

}  // namespace

PYBIND11_MODULE(_voltrack, m) {
  m.doc() = "Multi-camera volumetric 3D point tracking";

  py::register_exception<Error>(m, "VoltrackError");

  // --- geometry ---------------------------------------------------------
  py::class_<CameraParams>(m, "CameraParams")
      .def(py::init<>())
      .def_readwrite("intrinsics", &CameraParams::intrinsics)
      .def_readwrite("rotation", &CameraParams::rotation)
      .def_readwrite("translation", &CameraParams::translation)
      .def_readwrite("view_id", &CameraParams::view_id)
      .def("validate", &CameraParams::validate)
      .def("center", &CameraParams::center);

  py::class_<Projection>(m, "Projection")
      .def_readonly("pixel", &Projection::pixel)
      .def_readonly("depth", &Projection::depth);

  py::class_<FundamentalMatrix>(m, "FundamentalMatrix")
      .def_readonly("m", &FundamentalMatrix::m)
      .def_readonly("view_a", &FundamentalMatrix::view_a)
      .def_readonly("view_b", &FundamentalMatrix::view_b)
      .def_readonly("degenerate", &FundamentalMatrix::degenerate);

  m.def("project", &project, py::arg("point"), py::arg("camera"));
  m.def("fundamental_matrix", &fundamental_matrix, py::arg("camera_a"), py::arg("camera_b"));
  m.def("epipolar_line", &epipolar_line, py::arg("f"), py::arg("pixel_a"));
  m.def("epipolar_distance", &epipolar_distance, py::arg("pixel"), py::arg("line"));
  m.def(
      "dlt_triangulate",
      [](const std::vector<CameraParams>& cams, const std::vector<Point2>& pixels) {
        if (cams.size() != pixels.size())
          throw ShapeMismatch("dlt_triangulate needs one pixel per camera");
        std::vector<Observation> obs;
        obs.reserve(cams.size());
        for (size_t i = 0; i < cams.size(); ++i) obs.push_back({cams[i], pixels[i]});
        return dlt_triangulate(obs);
      },
      py::arg("cameras"), py::arg("pixels"));
  m.def("save_calibration", &save_calibration, py::arg("cameras"), py::arg("path"));
  m.def("load_calibration", &load_calibration, py::arg("path"));

  // --- scene simulator --------------------------------------------------
  py::class_<SceneConfig>(m, "SceneConfig")
      .def(py::init<>())
      .def_readwrite("n_cameras", &SceneConfig::n_cameras)
      .def_readwrite("n_points", &SceneConfig::n_points)
      .def_readwrite("n_frames", &SceneConfig::n_frames)
      .def_readwrite("feature_dim", &SceneConfig::feature_dim)
      .def_readwrite("image_width", &SceneConfig::image_width)
      .def_readwrite("image_height", &SceneConfig::image_height)
      .def_readwrite("pixel_noise_sigma", &SceneConfig::pixel_noise_sigma)
      .def_readwrite("occlusion_rate", &SceneConfig::occlusion_rate)
      .def_readwrite("feature_noise_sigma", &SceneConfig::feature_noise_sigma)
      .def_readwrite("seed", &SceneConfig::seed);

  py::class_<SceneData>(m, "SceneData")
      .def_readonly("config", &SceneData::config)
      .def_readonly("cameras", &SceneData::cameras)
      .def_readonly("gt", &SceneData::gt)
      .def_readonly("track_xy", &SceneData::track_xy)
      .def_readonly("visible", &SceneData::visible)
      .def_readonly("features", &SceneData::features);

  py::class_<CalibrationNoise>(m, "CalibrationNoise")
      .def(py::init<>())
      .def_readwrite("intrinsic_px", &CalibrationNoise::intrinsic_px)
      .def_readwrite("rotation_deg", &CalibrationNoise::rotation_deg)
      .def_readwrite("translation_cm", &CalibrationNoise::translation_cm);

  m.def("ring_rig", &ring_rig, py::arg("n_cameras"), py::arg("radius"), py::arg("height_amp"),
        py::arg("image_width"), py::arg("image_height"));
  m.def("generate_scene", &generate_scene, py::arg("config"));
  m.def("save_scene", &save_scene, py::arg("scene"), py::arg("json_path"));
  m.def("load_scene", &load_scene, py::arg("json_path"));
  m.def("restrict_views", &restrict_views, py::arg("scene"), py::arg("view_ids"));
  m.def("perturb_calibration", &perturb_calibration, py::arg("cameras"), py::arg("noise"),
        py::arg("seed"));

  // --- volumetric attention ---------------------------------------------
  py::class_<VolumetricGrid>(m, "VolumetricGrid")
      .def_readonly("resolution", &VolumetricGrid::resolution)
      .def_readonly("coords", &VolumetricGrid::coords)
      .def("size", &VolumetricGrid::size)
      .def("spacing", &VolumetricGrid::spacing)
      .def("face_neighbors", &VolumetricGrid::face_neighbors);

  py::class_<ProjectedGrid>(m, "ProjectedGrid")
      .def_readonly("view_id", &ProjectedGrid::view_id)
      .def_readonly("pixels", &ProjectedGrid::pixels)
      .def_readonly("depth", &ProjectedGrid::depth)
      .def_readonly("valid", &ProjectedGrid::valid);

  m.def("make_grid", &make_grid, py::arg("resolution"));
  m.def("project_grid", &project_grid, py::arg("grid"), py::arg("camera"));
  m.def("distance_attention", &distance_attention, py::arg("projected_grid"), py::arg("points"),
        py::arg("temperature"));
  m.def("populate_volume", &populate_volume, py::arg("attention"), py::arg("features"),
        py::arg("chunk_size"), py::arg("n_threads") = 1);

  // --- tracker ------------------------------------------------------------
  py::enum_<AttentionMode>(m, "AttentionMode")
      .value("full", AttentionMode::full)
      .value("uniform", AttentionMode::uniform);

  py::class_<TrackOptions>(m, "TrackOptions")
      .def(py::init<>())
      .def_readwrite("grid_resolution", &TrackOptions::grid_resolution)
      .def_readwrite("chunk_size", &TrackOptions::chunk_size)
      .def_readwrite("n_threads", &TrackOptions::n_threads)
      .def_readwrite("attention", &TrackOptions::attention)
      .def_readwrite("momentum", &TrackOptions::momentum);

  py::class_<MlpSpec>(m, "MlpSpec")
      .def(py::init<>())
      .def_readwrite("layer_sizes", &MlpSpec::layer_sizes)
      .def_readwrite("standardize", &MlpSpec::standardize)
      .def_readwrite("dropout_rate", &MlpSpec::dropout_rate);

  py::class_<ModelParams>(m, "ModelParams")
      .def_readonly("spec", &ModelParams::spec)
      .def_readwrite("temperature", &ModelParams::temperature)
      .def_readwrite("sigma_epi", &ModelParams::sigma_epi)
      .def_readwrite("sigma_sfm", &ModelParams::sigma_sfm)
      .def_readonly("feature_dim", &ModelParams::feature_dim)
      .def_readonly("n_queries", &ModelParams::n_queries)
      .def_readonly("n_views", &ModelParams::n_views)
      .def("validate", &ModelParams::validate);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("model", &Checkpoint::model)
      .def_readonly("step", &Checkpoint::step);

  py::class_<TrackingInput>(m, "TrackingInput")
      .def_readonly("cameras", &TrackingInput::cameras)
      .def_readonly("image_diag", &TrackingInput::image_diag)
      .def("n_frames", &TrackingInput::n_frames)
      .def("n_views", &TrackingInput::n_views)
      .def("n_points", &TrackingInput::n_points);

  py::class_<Trajectory3D>(m, "Trajectory3D")
      .def_readonly("point_id", &Trajectory3D::point_id)
      .def_readonly("positions", &Trajectory3D::positions)
      .def_readonly("valid", &Trajectory3D::valid)
      .def_property_readonly("xyz", &positions_matrix);

  m.def("compound_feature_size", &compound_feature_size, py::arg("feature_dim"),
        py::arg("n_queries"), py::arg("n_views"));
  m.def("init_model", &init_model, py::arg("hidden_sizes"), py::arg("feature_dim"),
        py::arg("n_queries"), py::arg("n_views"), py::arg("seed"),
        py::arg("standardize") = true, py::arg("dropout_rate") = 0.0);
  m.def("model_param_count", &model_param_count, py::arg("model"));
  m.def("flatten_model", &flatten_model, py::arg("model"));
  m.def("tracking_input", &tracking_input, py::arg("scene"));
  m.def(
      "track_sequence",
      [](const TrackingInput& input, const ModelParams& model, const TrackOptions& opts) {
        return track_sequence(input, model, opts);
      },
      py::arg("input"), py::arg("model"), py::arg("options"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("checkpoint"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("save_trajectories_json", &save_trajectories_json, py::arg("tracks"), py::arg("path"));
  m.def("load_trajectories_json", &load_trajectories_json, py::arg("path"));

  // --- training -----------------------------------------------------------
  py::class_<LossWeights>(m, "LossWeights")
      .def(py::init<>())
      .def_readwrite("recon", &LossWeights::recon)
      .def_readwrite("proj", &LossWeights::proj)
      .def_readwrite("attn", &LossWeights::attn);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("max_steps", &TrainConfig::max_steps)
      .def_readwrite("warmup_steps", &TrainConfig::warmup_steps)
      .def_readwrite("base_lr", &TrainConfig::base_lr)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("weights", &TrainConfig::weights)
      .def_readwrite("options", &TrainConfig::options)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<TrainSample>(m, "TrainSample")
      .def_readonly("input", &TrainSample::input)
      .def_readonly("gt", &TrainSample::gt);

  py::class_<TrainLogRow>(m, "TrainLogRow")
      .def_readonly("step", &TrainLogRow::step)
      .def_readonly("lr", &TrainLogRow::lr)
      .def_readonly("recon", &TrainLogRow::recon)
      .def_readonly("proj", &TrainLogRow::proj)
      .def_readonly("attn", &TrainLogRow::attn)
      .def_readonly("total", &TrainLogRow::total);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("checkpoint", &TrainResult::checkpoint)
      .def_readonly("log", &TrainResult::log);

  m.def("train_sample", &train_sample, py::arg("scene"));
  m.def(
      "train",
      [](const TrainConfig& cfg, const std::vector<TrainSample>& scenes,
         const ModelParams& init) { return train(cfg, scenes, init); },
      py::arg("config"), py::arg("scenes"), py::arg("init"));

  // --- metrics ------------------------------------------------------------
  py::class_<MetricReport>(m, "MetricReport")
      .def_readonly("apd", &MetricReport::apd)
      .def_readonly("oa", &MetricReport::oa)
      .def_readonly("aj3d", &MetricReport::aj3d)
      .def_readonly("aj2d", &MetricReport::aj2d)
      .def_readonly("apd_per_threshold", &MetricReport::apd_per_threshold)
      .def_readonly("thresholds_3d", &MetricReport::thresholds_3d)
      .def_readonly("thresholds_2d", &MetricReport::thresholds_2d)
      .def_readonly("n_points", &MetricReport::n_points)
      .def_readonly("n_frames", &MetricReport::n_frames);

  py::class_<CalibrationSweepRow>(m, "CalibrationSweepRow")
      .def_readonly("group", &CalibrationSweepRow::group)
      .def_readonly("level", &CalibrationSweepRow::level)
      .def_readonly("apd", &CalibrationSweepRow::apd)
      .def_readonly("aj3d", &CalibrationSweepRow::aj3d);

  py::class_<FlopBreakdown>(m, "FlopBreakdown")
      .def_readonly("grid_projection", &FlopBreakdown::grid_projection)
      .def_readonly("attention", &FlopBreakdown::attention)
      .def_readonly("masks", &FlopBreakdown::masks)
      .def_readonly("aggregation", &FlopBreakdown::aggregation)
      .def_readonly("readout", &FlopBreakdown::readout)
      .def_readonly("mlp", &FlopBreakdown::mlp)
      .def("voxel_total", &FlopBreakdown::voxel_total)
      .def("total", &FlopBreakdown::total);

  m.attr("default_thresholds_3d") = kDefaultThresholds3D;
  m.def(
      "apd",
      [](const std::vector<Trajectory3D>& pred, const std::vector<std::vector<Point3>>& gt,
         const std::vector<double>& thresholds) { return apd(pred, gt, thresholds); },
      py::arg("pred"), py::arg("gt"), py::arg("thresholds"));
  m.def("mean_3d_error", &mean_3d_error, py::arg("pred"), py::arg("gt"));
  m.def("jaccard3d", &jaccard3d, py::arg("pred"), py::arg("gt"), py::arg("visible"),
        py::arg("thresholds"));
  m.def("evaluate", &evaluate, py::arg("pred"), py::arg("scene"),
        py::arg("thresholds_3d") = kDefaultThresholds3D,
        py::arg("thresholds_2d") = kDefaultThresholds2D);
  m.def("calibration_sweep", &calibration_sweep, py::arg("scene"), py::arg("model"),
        py::arg("options"), py::arg("intrinsic_px"), py::arg("rotation_deg"),
        py::arg("translation_cm"), py::arg("seeds"),
        py::arg("thresholds_3d") = kDefaultThresholds3D);
  m.def("flop_estimate", &flop_estimate, py::arg("grid_resolution"), py::arg("n_views"),
        py::arg("n_points"), py::arg("feature_dim"), py::arg("spec"));

  // --- misc ---------------------------------------------------------------
  m.def("derive_seed", &derive_seed, py::arg("root"), py::arg("tag"));
}
