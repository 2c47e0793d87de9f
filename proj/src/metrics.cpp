#include "voltrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace voltrack {

namespace {

void check_thresholds(const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ConfigInvalid("threshold ladder must not be empty");
  for (size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] <= 0.0) throw ConfigInvalid("thresholds must be positive");
    if (i > 0 && thresholds[i] <= thresholds[i - 1])
      throw ConfigInvalid("thresholds must be sorted ascending");
  }
}

int visible_view_count(const std::vector<std::vector<std::vector<uint8_t>>>& visible, int frame,
                       int point) {
  int n = 0;
  for (const auto& view : visible[frame]) n += view[point] ? 1 : 0;
  return n;
}

}  // namespace

double apd(const std::vector<Trajectory3D>& pred, const std::vector<std::vector<Point3>>& gt,
           const std::vector<double>& thresholds, std::vector<double>* per_threshold) {
  check_thresholds(thresholds);
  std::vector<int64_t> hits(thresholds.size(), 0);
  int64_t pairs = 0;
  for (const auto& tr : pred) {
    if (tr.point_id < 0 || tr.point_id >= static_cast<int>(gt.size())) continue;
    const auto& truth = gt[tr.point_id];
    const size_t frames = std::min(tr.positions.size(), truth.size());
    for (size_t t = 0; t < frames; ++t) {
      ++pairs;
      if (!tr.valid[t]) continue;  // invalid predictions are misses
      const double err = (tr.positions[t] - truth[t]).norm();
      for (size_t k = 0; k < thresholds.size(); ++k)
        if (err < thresholds[k]) ++hits[k];
    }
  }
  if (pairs == 0) throw EmptyIntersection("no (point, frame) pairs align with ground truth");
  if (per_threshold) {
    per_threshold->clear();
    for (int64_t h : hits) per_threshold->push_back(100.0 * h / pairs);
  }
  double mean = 0.0;
  for (int64_t h : hits) mean += static_cast<double>(h) / pairs;
  return 100.0 * mean / thresholds.size();
}

std::optional<double> occlusion_accuracy(
    const std::vector<Trajectory3D>& pred, const std::vector<std::vector<Point3>>& gt,
    const std::vector<std::vector<std::vector<uint8_t>>>& visible,
    const std::vector<double>& thresholds) {
  check_thresholds(thresholds);
  const int n_frames = static_cast<int>(visible.size());
  int64_t hits = 0, pairs = 0;
  for (const auto& tr : pred) {
    if (tr.point_id < 0 || tr.point_id >= static_cast<int>(gt.size())) continue;
    const int m = tr.point_id;
    const int frames =
        std::min({n_frames, static_cast<int>(tr.positions.size()),
                  static_cast<int>(gt[m].size())});
    int t = 0;
    while (t < frames) {
      if (visible_view_count(visible, t, m) != 0) {
        ++t;
        continue;
      }
      while (t < frames && visible_view_count(visible, t, m) == 0) ++t;  // the episode
      // reappearance: first frame seen by >= 2 views
      while (t < frames && visible_view_count(visible, t, m) < 2) {
        if (visible_view_count(visible, t, m) == 0) break;  // a new episode begins
        ++t;
      }
      if (t >= frames || visible_view_count(visible, t, m) < 2) continue;
      for (int w = 0; w < kOcclusionWindow && t < frames; ++w, ++t) {
        if (visible_view_count(visible, t, m) == 0) break;  // window truncates
        ++pairs;
        if (!tr.valid[t]) continue;
        const double err = (tr.positions[t] - gt[m][t]).norm();
        for (double tau : thresholds)
          if (err < tau) ++hits;
      }
    }
  }
  if (pairs == 0) return std::nullopt;
  return 100.0 * static_cast<double>(hits) /
         (static_cast<double>(pairs) * thresholds.size());
}

double jaccard3d(const std::vector<Trajectory3D>& pred,
                 const std::vector<std::vector<Point3>>& gt,
                 const std::vector<std::vector<std::vector<uint8_t>>>& visible,
                 const std::vector<double>& thresholds) {
  check_thresholds(thresholds);
  double score_sum = 0.0;
  int64_t any_pairs = 0;
  for (double tau : thresholds) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (const auto& tr : pred) {
      if (tr.point_id < 0 || tr.point_id >= static_cast<int>(gt.size())) continue;
      const int m = tr.point_id;
      const size_t frames = std::min({tr.positions.size(), gt[m].size(), visible.size()});
      for (size_t t = 0; t < frames; ++t) {
        ++any_pairs;
        const bool gt_vis = visible_view_count(visible, static_cast<int>(t), m) > 0;
        const bool claimed = tr.valid[t] != 0;
        const bool within = claimed && (tr.positions[t] - gt[m][t]).norm() < tau;
        if (claimed && gt_vis && within) ++tp;
        if (claimed && (!gt_vis || !within)) ++fp;
        if (gt_vis && (!claimed || !within)) ++fn;
      }
    }
    const int64_t denom = tp + fp + fn;
    score_sum += denom > 0 ? static_cast<double>(tp) / denom : 1.0;
  }
  if (any_pairs == 0) throw EmptyIntersection("no (point, frame) pairs align with ground truth");
  return score_sum / thresholds.size();
}

double jaccard2d(const std::vector<Trajectory3D>& pred,
                 const std::vector<std::vector<Point3>>& gt,
                 const std::vector<CameraParams>& cams,
                 const std::vector<std::vector<std::vector<uint8_t>>>& visible,
                 const std::vector<double>& thresholds_px) {
  check_thresholds(thresholds_px);
  if (cams.empty()) throw InsufficientViews("2D Jaccard needs at least one camera");
  double score_sum = 0.0;
  int64_t any_pairs = 0;
  for (size_t v = 0; v < cams.size(); ++v) {
    for (double tau : thresholds_px) {
      int64_t tp = 0, fp = 0, fn = 0;
      for (const auto& tr : pred) {
        if (tr.point_id < 0 || tr.point_id >= static_cast<int>(gt.size())) continue;
        const int m = tr.point_id;
        const size_t frames = std::min({tr.positions.size(), gt[m].size(), visible.size()});
        for (size_t t = 0; t < frames; ++t) {
          ++any_pairs;
          bool gt_vis = visible[t][v][m] != 0;
          Point2 gt_px = Point2::Zero();
          if (gt_vis) {
            try {
              gt_px = project(gt[m][t], cams[v]).pixel;
            } catch (const DegenerateProjection&) {
              gt_vis = false;  // not observable by this camera
            }
          }
          const bool claimed = tr.valid[t] != 0;
          bool within = false;
          if (claimed && gt_vis) {
            try {
              within = (project(tr.positions[t], cams[v]).pixel - gt_px).norm() < tau;
            } catch (const DegenerateProjection&) {
              within = false;  // behind the camera counts as off target
            }
          }
          if (claimed && gt_vis && within) ++tp;
          if (claimed && (!gt_vis || !within)) ++fp;
          if (gt_vis && (!claimed || !within)) ++fn;
        }
      }
      const int64_t denom = tp + fp + fn;
      score_sum += denom > 0 ? static_cast<double>(tp) / denom : 1.0;
    }
  }
  if (any_pairs == 0) throw EmptyIntersection("no (point, frame) pairs align with ground truth");
  return score_sum / (thresholds_px.size() * cams.size());
}

MetricReport evaluate(const std::vector<Trajectory3D>& pred, const SceneData& scene,
                      const std::vector<double>& thresholds_3d,
                      const std::vector<double>& thresholds_2d) {
  scene.check_consistent();
  MetricReport report;
  report.thresholds_3d = thresholds_3d;
  report.thresholds_2d = thresholds_2d;
  report.n_points = scene.n_points();
  report.n_frames = scene.n_frames();
  report.apd = apd(pred, scene.gt, thresholds_3d, &report.apd_per_threshold);
  report.oa = occlusion_accuracy(pred, scene.gt, scene.visible, thresholds_3d);
  report.aj3d = jaccard3d(pred, scene.gt, scene.visible, thresholds_3d);
  report.aj2d = jaccard2d(pred, scene.gt, scene.cameras, scene.visible, thresholds_2d);
  return report;
}

double mean_3d_error(const std::vector<Trajectory3D>& pred,
                     const std::vector<std::vector<Point3>>& gt) {
  double sum = 0.0;
  int64_t pairs = 0;
  for (const auto& tr : pred) {
    if (tr.point_id < 0 || tr.point_id >= static_cast<int>(gt.size())) continue;
    const auto& truth = gt[tr.point_id];
    const size_t frames = std::min(tr.positions.size(), truth.size());
    for (size_t t = 0; t < frames; ++t) {
      if (!tr.valid[t]) continue;
      sum += (tr.positions[t] - truth[t]).norm();
      ++pairs;
    }
  }
  if (pairs == 0) throw EmptyIntersection("no valid predictions align with ground truth");
  return sum / pairs;
}

nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json j;
  j["apd"] = report.apd;
  if (report.oa)
    j["oa"] = *report.oa;
  else
    j["oa"] = nullptr;
  j["aj3d"] = report.aj3d;
  j["aj2d"] = report.aj2d;
  j["apd_per_threshold"] = report.apd_per_threshold;
  j["thresholds_3d"] = report.thresholds_3d;
  j["thresholds_2d"] = report.thresholds_2d;
  j["n_points"] = report.n_points;
  j["n_frames"] = report.n_frames;
  return j;
}

std::string report_table(const MetricReport& report) {
  const auto pct = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v << " %";
    return s.str();
  };
  const auto num = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
  };
  std::ostringstream out;
  const auto row = [&](const std::string& name, const std::string& value) {
    out << std::left << std::setw(12) << name << value << "\n";
  };
  row("APD", pct(report.apd));
  row("OA", report.oa ? pct(*report.oa) : std::string("undefined"));
  row("3D-AJ", num(report.aj3d));
  row("2D-AJ", num(report.aj2d));
  for (size_t k = 0; k < report.apd_per_threshold.size(); ++k) {
    std::ostringstream name;
    name << "APD@" << report.thresholds_3d[k];
    row(name.str(), pct(report.apd_per_threshold[k]));
  }
  return out.str();
}

std::vector<CalibrationSweepRow> calibration_sweep(
    const SceneData& scene, const ModelParams& model, const TrackOptions& opts,
    const std::vector<double>& intrinsic_px, const std::vector<double>& rotation_deg,
    const std::vector<double>& translation_cm, const std::vector<uint64_t>& seeds,
    const std::vector<double>& thresholds_3d) {
  if (seeds.empty()) throw ConfigInvalid("the calibration sweep needs at least one seed");
  const TrackingInput clean = tracking_input(scene);

  const auto run = [&](const std::vector<CameraParams>& cams) {
    TrackingInput input = clean;
    input.cameras = cams;
    const auto tracks = track_sequence(input, model, opts);
    CalibrationSweepRow row;
    row.apd = apd(tracks, scene.gt, thresholds_3d);
    row.aj3d = jaccard3d(tracks, scene.gt, scene.visible, thresholds_3d);
    return row;
  };

  std::vector<CalibrationSweepRow> rows;
  CalibrationSweepRow zero = run(scene.cameras);
  zero.group = "none";
  zero.level = 0.0;
  rows.push_back(zero);

  const auto sweep_group = [&](const std::string& group, const std::vector<double>& levels,
                               const auto& make_noise) {
    for (double level : levels) {
      CalibrationSweepRow acc;
      acc.group = group;
      acc.level = level;
      for (uint64_t seed : seeds) {
        const auto cams = perturb_calibration(scene.cameras, make_noise(level),
                                              derive_seed(seed, "sweep-" + group));
        const CalibrationSweepRow one = run(cams);
        acc.apd += one.apd;
        acc.aj3d += one.aj3d;
      }
      acc.apd /= static_cast<double>(seeds.size());
      acc.aj3d /= static_cast<double>(seeds.size());
      rows.push_back(acc);
    }
  };

  sweep_group("intrinsic_px", intrinsic_px, [](double level) {
    CalibrationNoise n;
    n.intrinsic_px = level;
    return n;
  });
  sweep_group("rotation_deg", rotation_deg, [](double level) {
    CalibrationNoise n;
    n.rotation_deg = level;
    return n;
  });
  sweep_group("translation_cm", translation_cm, [](double level) {
    CalibrationNoise n;
    n.translation_cm = level;
    return n;
  });
  return rows;
}

void write_sweep_csv(const std::vector<CalibrationSweepRow>& rows,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write sweep CSV " + path.string());
  out << "group,level,apd,aj3d\n";
  out.precision(17);
  for (const auto& row : rows)
    out << row.group << ',' << row.level << ',' << row.apd << ',' << row.aj3d << "\n";
  if (!out) throw IoError("failed while writing " + path.string());
}

double FlopBreakdown::voxel_total() const {
  return grid_projection + attention + masks + aggregation + readout;
}

double FlopBreakdown::total() const { return voxel_total() + mlp; }

FlopBreakdown flop_estimate(int grid_resolution, int n_views, int n_points, int feature_dim,
                            const MlpSpec& spec) {
  if (grid_resolution < 2 || n_views < 1 || n_points < 1 || feature_dim < 1)
    throw ConfigInvalid("flop estimate needs positive dimensions");
  spec.validate();
  const double v3 = std::pow(static_cast<double>(grid_resolution), 3.0);
  const double n = n_views, k = n_points, d = feature_dim;

  // multiply-add constants per element, doubled into FLOPs
  FlopBreakdown fb;
  fb.grid_projection = 2.0 * 12.0 * n * v3;       // rotate + translate + divide
  fb.attention = 2.0 * 4.0 * n * v3 * k;          // squared distance + softmax
  fb.masks = 2.0 * 12.0 * n * v3 * k;             // line transfer + two gates
  fb.aggregation = 2.0 * n * v3 * k * d;          // the O(V^3 N K D) gather
  fb.readout = 2.0 * (d + 2.0) * k * v3;          // cosine scores + argmax scan
  double mlp_macs = 0.0;
  for (int l = 0; l + 1 < static_cast<int>(spec.layer_sizes.size()); ++l)
    mlp_macs += static_cast<double>(spec.layer_sizes[l]) * spec.layer_sizes[l + 1];
  fb.mlp = 2.0 * mlp_macs * k;
  return fb;
}

}  // namespace voltrack
