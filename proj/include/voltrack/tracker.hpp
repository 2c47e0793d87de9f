#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "voltrack/losses.hpp"
#include "voltrack/nnet.hpp"
#include "voltrack/scenesim.hpp"
#include "voltrack/volume.hpp"

namespace voltrack {

/// Width of the per-voxel compound feature: 3 grid coordinates, the D
/// aggregated feature channels, one correspondence score per query and one
/// scaled reprojection residual per view.
int compound_feature_size(int feature_dim, int n_queries, int n_views);

/// Every learnable quantity of the tracker. The scalar temperature and the
/// two mask bandwidths are trained raw with a small positivity floor.
struct ModelParams {
  MlpSpec spec;
  MlpParams mlp;
  Eigen::MatrixXd f_q;  // D x D query projection
  double temperature = 0.1;
  double sigma_epi = 0.1;
  double sigma_sfm = 0.5;
  int feature_dim = 0;
  int n_queries = 0;
  int n_views = 0;

  void validate() const;  // throws ConfigInvalid / DimensionMismatch
};

inline constexpr double kScalarParamFloor = 1e-6;

ModelParams init_model(const std::vector<int>& hidden_sizes, int feature_dim, int n_queries,
                       int n_views, uint64_t seed, bool standardize = true,
                       double dropout_rate = 0.0);

int model_param_count(const ModelParams& model);
Eigen::VectorXd flatten_model(const ModelParams& model);
/// Writes the flat vector back (shapes must already match), bumps the
/// parameter version and applies the positivity floor to the scalars.
void unflatten_model(const Eigen::VectorXd& flat, ModelParams& model);

struct Checkpoint {
  ModelParams model;
  int64_t step = 0;
};

/// Binary checkpoint: 8-byte magic, little-endian u64 header length, JSON
/// header (layout + step), float32 blob in flatten_model order.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The observable slice of a scene: cameras, 2D tracks, visibility and
/// descriptors — everything the tracker may see (no ground truth).
struct TrackingInput {
  std::vector<CameraParams> cameras;
  std::vector<std::vector<Eigen::MatrixXd>> track_xy;      // [frame][view] K x 2
  std::vector<std::vector<std::vector<uint8_t>>> visible;  // [frame][view] K
  std::vector<std::vector<Eigen::MatrixXd>> features;      // [frame][view] K x D
  double image_diag = 0.0;

  int n_frames() const { return static_cast<int>(track_xy.size()); }
  int n_views() const { return static_cast<int>(cameras.size()); }
  int n_points() const;
  int feature_dim() const;
  bool any_visible(int frame, int point) const;
  int visible_views(int frame, int point) const;
  void check() const;  // throws ShapeMismatch / ConfigInvalid
};

TrackingInput tracking_input(const SceneData& scene);

enum class AttentionMode { full, uniform };
AttentionMode attention_mode_from_string(const std::string& s);
std::string to_string(AttentionMode m);

struct TrackOptions {
  int grid_resolution = 16;
  int chunk_size = 8192;
  int n_threads = 1;
  AttentionMode attention = AttentionMode::full;
  double momentum = 0.8;   // weight on the previous query state
  bool train_mode = false; // enables dropout in the head
  uint64_t dropout_seed = 0;

  void validate() const;
};

/// Persistent per-point query state.
struct TrackQuery {
  int point_id = 0;
  Point3 position = Point3::Zero();
  Eigen::VectorXd embedding;
  bool active = false;
};

/// Bootstraps queries from one frame: points seen by at least two views are
/// triangulated and activated; the embedding starts as the mean descriptor
/// over the views that saw the point.
std::vector<TrackQuery> init_queries(const TrackingInput& input, int frame = 0);

/// Tries the same bootstrap for still-inactive queries at a later frame.
void activate_queries(std::vector<TrackQuery>& queries, const TrackingInput& input, int frame);

/// Scene-constant geometry shared by every frame.
struct FrameGeometry {
  VolumetricGrid grid;
  std::vector<ProjectedGrid> grids;
  std::vector<std::vector<FundamentalMatrix>> fundamentals;
};

FrameGeometry make_frame_geometry(const std::vector<CameraParams>& cams, int grid_resolution);

/// Everything the backward pass needs from one forward evaluation.
struct FrameTape {
  uint64_t params_version = 0;
  std::vector<Eigen::MatrixXd> sq_dist;         // per view, scaled squared px dist
  std::vector<Eigen::MatrixXd> attention;       // per view A
  std::vector<Eigen::MatrixXd> mask_epi;        // per view E
  std::vector<Eigen::MatrixXd> epi_weighted_sq; // per view, sigma sensitivity
  std::vector<int> epi_partners;
  std::vector<Eigen::MatrixXd> mask_sfm;        // per view
  std::vector<Eigen::MatrixXd> combined;        // per view, rows zeroed when invalid
  std::vector<uint8_t> view_has_visible;        // per view: any visible column
  Eigen::MatrixXd v_feat;                       // V^3 x D
  Eigen::MatrixXd query_u;                      // M x D
  Eigen::VectorXd query_u_norm;                 // M
  Eigen::VectorXd v_feat_norm;                  // V^3
  Eigen::MatrixXd corr;                         // M x V^3 cosine scores
  std::vector<std::vector<int>> hood;           // per query readout indices
  std::vector<Eigen::VectorXd> hood_weights;    // per query, normalized
  std::vector<Eigen::VectorXd> compound;        // per query MLP input
  std::vector<MlpTape> mlp_tapes;
};

struct FrameResult {
  std::vector<Point3> positions;      // MLP outputs, one per query
  std::vector<uint8_t> valid;         // point observed by >= 1 view this frame
  std::vector<Point3> blend_positions;  // attention-weighted voxel readout
  Eigen::MatrixXd blend_features;     // M x D readout features
};

FrameResult run_frame(const TrackingInput& input, int frame, const FrameGeometry& geo,
                      const std::vector<TrackQuery>& queries, const ModelParams& model,
                      const TrackOptions& opts, FrameTape* tape = nullptr);

/// Momentum update of query states from a frame's outputs; only active
/// queries for points seen this frame move. Positions clamp to [-1.5, 1.5].
void update_queries(std::vector<TrackQuery>& queries, const TrackingInput& input, int frame,
                    const FrameResult& result, double momentum);

struct FrameLoss {
  double recon = 0.0;
  double proj = 0.0;
  double attn = 0.0;
  double total = 0.0;
};

/// Loss of one frame with the query states held fixed, plus (optionally)
/// the analytic gradient with respect to flatten_model order.
struct FrameLossResult {
  FrameLoss loss;
  FrameResult result;
  Eigen::VectorXd grads;  // empty unless want_grads
};

FrameLossResult frame_loss_and_grads(const TrackingInput& input, int frame,
                                     const FrameGeometry& geo,
                                     const std::vector<TrackQuery>& queries,
                                     const ModelParams& model, const TrackOptions& opts,
                                     const std::vector<std::vector<Point3>>& gt,
                                     const LossWeights& weights, bool want_grads);

struct Trajectory3D {
  int point_id = 0;
  std::vector<Point3> positions;
  std::vector<uint8_t> valid;
};

/// Per-frame attention summary captured during tracking; the first frame
/// additionally keeps the full combined matrices.
struct AttentionDump {
  struct ViewStats {
    int view_id = 0;
    double row_sum_min = 0.0, row_sum_max = 0.0, row_sum_mean = 0.0;
    double entropy_mean = 0.0;
  };
  std::vector<std::vector<ViewStats>> frames;
  std::vector<Eigen::MatrixXd> first_frame_combined;
};

/// Tracks every point through the sequence. Frames where a point is seen by
/// no view keep the previous output and are flagged invalid.
std::vector<Trajectory3D> track_sequence(const TrackingInput& input, const ModelParams& model,
                                         const TrackOptions& opts,
                                         AttentionDump* dump = nullptr);

void save_trajectories_json(const std::vector<Trajectory3D>& tracks,
                            const std::filesystem::path& path);
std::vector<Trajectory3D> load_trajectories_json(const std::filesystem::path& path);
void save_trajectories_csv(const std::vector<Trajectory3D>& tracks,
                           const std::filesystem::path& path);

}  // namespace voltrack
