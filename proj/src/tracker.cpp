#include "voltrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace voltrack {

int compound_feature_size(int feature_dim, int n_queries, int n_views) {
  if (feature_dim < 1 || n_queries < 1 || n_views < 1)
    throw ConfigInvalid("compound feature needs positive dimensions");
  return 3 + feature_dim + n_queries + n_views;
}

void ModelParams::validate() const {
  spec.validate();
  if (spec.input_size() != compound_feature_size(feature_dim, n_queries, n_views))
    throw DimensionMismatch("MLP input width disagrees with the compound feature layout");
  if (spec.output_size() != 3) throw DimensionMismatch("the head must emit 3D coordinates");
  if (static_cast<int>(mlp.weights.size()) != spec.n_affine())
    throw ShapeMismatch("MLP parameter count disagrees with spec");
  if (f_q.rows() != feature_dim || f_q.cols() != feature_dim)
    throw ShapeMismatch("query projection must be feature_dim x feature_dim");
  if (temperature <= 0.0 || sigma_epi <= 0.0 || sigma_sfm <= 0.0)
    throw ConfigInvalid("temperature and mask bandwidths must be positive");
}

ModelParams init_model(const std::vector<int>& hidden_sizes, int feature_dim, int n_queries,
                       int n_views, uint64_t seed, bool standardize, double dropout_rate) {
  ModelParams model;
  model.feature_dim = feature_dim;
  model.n_queries = n_queries;
  model.n_views = n_views;
  model.spec.layer_sizes.push_back(compound_feature_size(feature_dim, n_queries, n_views));
  for (int h : hidden_sizes) model.spec.layer_sizes.push_back(h);
  model.spec.layer_sizes.push_back(3);
  model.spec.standardize = standardize;
  model.spec.dropout_rate = dropout_rate;
  model.mlp = init_mlp(model.spec, derive_seed(seed, "head"));
  model.f_q = Eigen::MatrixXd::Identity(feature_dim, feature_dim);
  model.validate();
  return model;
}

int model_param_count(const ModelParams& model) {
  return model.mlp.scalar_count() + static_cast<int>(model.f_q.size()) + 3;
}

Eigen::VectorXd flatten_model(const ModelParams& model) {
  Eigen::VectorXd flat(model_param_count(model));
  Eigen::Index at = 0;
  for (size_t l = 0; l < model.mlp.weights.size(); ++l) {
    const Eigen::MatrixXd& w = model.mlp.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat(at++) = w(r, c);
    const Eigen::VectorXd& b = model.mlp.biases[l];
    flat.segment(at, b.size()) = b;
    at += b.size();
  }
  for (Eigen::Index r = 0; r < model.f_q.rows(); ++r)
    for (Eigen::Index c = 0; c < model.f_q.cols(); ++c) flat(at++) = model.f_q(r, c);
  flat(at++) = model.temperature;
  flat(at++) = model.sigma_epi;
  flat(at++) = model.sigma_sfm;
  return flat;
}

void unflatten_model(const Eigen::VectorXd& flat, ModelParams& model) {
  if (flat.size() != model_param_count(model))
    throw ShapeMismatch("flat parameter vector has the wrong length");
  Eigen::Index at = 0;
  for (size_t l = 0; l < model.mlp.weights.size(); ++l) {
    Eigen::MatrixXd& w = model.mlp.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat(at++);
    Eigen::VectorXd& b = model.mlp.biases[l];
    b = flat.segment(at, b.size());
    at += b.size();
  }
  for (Eigen::Index r = 0; r < model.f_q.rows(); ++r)
    for (Eigen::Index c = 0; c < model.f_q.cols(); ++c) model.f_q(r, c) = flat(at++);
  model.temperature = std::max(flat(at++), kScalarParamFloor);
  model.sigma_epi = std::max(flat(at++), kScalarParamFloor);
  model.sigma_sfm = std::max(flat(at++), kScalarParamFloor);
  ++model.mlp.version;
}

namespace {
constexpr char kCheckpointMagic[8] = {'V', 'T', 'C', 'K', 'P', 'T', '0', '1'};
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.model.validate();
  nlohmann::json header;
  header["format_version"] = 1;
  header["step"] = ckpt.step;
  header["layer_sizes"] = ckpt.model.spec.layer_sizes;
  header["standardize"] = ckpt.model.spec.standardize;
  header["dropout_rate"] = ckpt.model.spec.dropout_rate;
  header["feature_dim"] = ckpt.model.feature_dim;
  header["n_queries"] = ckpt.model.n_queries;
  header["n_views"] = ckpt.model.n_views;
  header["param_count"] = model_param_count(ckpt.model);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const Eigen::VectorXd flat = flatten_model(ckpt.model);
  std::vector<float> blob(flat.size());
  for (Eigen::Index i = 0; i < flat.size(); ++i) blob[i] = static_cast<float>(flat(i));
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!out) throw IoError("failed while writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError("bad checkpoint magic in " + path.string());
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 20)) throw IoError("bad checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint header: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  try {
    if (header.at("format_version").get<int>() != 1)
      throw SpecMismatch("unsupported checkpoint format version");
    ckpt.step = header.at("step").get<int64_t>();
    ckpt.model.spec.layer_sizes = header.at("layer_sizes").get<std::vector<int>>();
    ckpt.model.spec.standardize = header.at("standardize").get<bool>();
    ckpt.model.spec.dropout_rate = header.at("dropout_rate").get<double>();
    ckpt.model.feature_dim = header.at("feature_dim").get<int>();
    ckpt.model.n_queries = header.at("n_queries").get<int>();
    ckpt.model.n_views = header.at("n_views").get<int>();
    ckpt.model.spec.validate();
    if (ckpt.model.spec.input_size() !=
        compound_feature_size(ckpt.model.feature_dim, ckpt.model.n_queries, ckpt.model.n_views))
      throw SpecMismatch("checkpoint layer widths disagree with its declared layout");
    // allocate parameter storage, then overwrite from the blob
    ckpt.model.mlp = init_mlp(ckpt.model.spec, 0);
    ckpt.model.f_q =
        Eigen::MatrixXd::Zero(ckpt.model.feature_dim, ckpt.model.feature_dim);
    const int expected = model_param_count(ckpt.model);
    if (header.at("param_count").get<int>() != expected)
      throw SpecMismatch("checkpoint parameter count disagrees with its layout");
    std::vector<float> blob(expected);
    in.read(reinterpret_cast<char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!in) throw IoError("checkpoint blob truncated");
    Eigen::VectorXd flat(expected);
    for (int i = 0; i < expected; ++i) flat(i) = blob[i];
    unflatten_model(flat, ckpt.model);
    ckpt.model.mlp.version = 0;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint header field: " + std::string(e.what()));
  }
  ckpt.model.validate();
  return ckpt;
}

int TrackingInput::n_points() const {
  return track_xy.empty() || track_xy[0].empty() ? 0
                                                 : static_cast<int>(track_xy[0][0].rows());
}

int TrackingInput::feature_dim() const {
  return features.empty() || features[0].empty() ? 0
                                                 : static_cast<int>(features[0][0].cols());
}

bool TrackingInput::any_visible(int frame, int point) const {
  return visible_views(frame, point) > 0;
}

int TrackingInput::visible_views(int frame, int point) const {
  int n = 0;
  for (int v = 0; v < n_views(); ++v) n += visible[frame][v][point] ? 1 : 0;
  return n;
}

void TrackingInput::check() const {
  if (cameras.size() < 2) throw InsufficientViews("tracking needs at least two cameras");
  if (track_xy.empty()) throw ConfigInvalid("tracking input has no frames");
  if (!(image_diag > 0.0)) throw ConfigInvalid("image diagonal must be positive");
  const size_t f = track_xy.size(), n = cameras.size();
  if (visible.size() != f || features.size() != f)
    throw ShapeMismatch("per-frame array lengths disagree");
  const int k = n_points(), d = feature_dim();
  if (k < 1) throw ConfigInvalid("tracking input has no points");
  for (size_t t = 0; t < f; ++t) {
    if (track_xy[t].size() != n || visible[t].size() != n || features[t].size() != n)
      throw ShapeMismatch("per-view array lengths disagree");
    for (size_t v = 0; v < n; ++v) {
      if (track_xy[t][v].rows() != k || track_xy[t][v].cols() != 2 ||
          features[t][v].rows() != k || features[t][v].cols() != d ||
          static_cast<int>(visible[t][v].size()) != k)
        throw ShapeMismatch("per-frame matrix shapes disagree");
    }
  }
}

TrackingInput tracking_input(const SceneData& scene) {
  scene.check_consistent();
  TrackingInput input;
  input.cameras = scene.cameras;
  input.track_xy = scene.track_xy;
  input.visible = scene.visible;
  input.features = scene.features;
  input.image_diag = scene.config.image_diagonal();
  return input;
}

AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "full") return AttentionMode::full;
  if (s == "uniform") return AttentionMode::uniform;
  throw ConfigInvalid("unknown attention mode '" + s + "' (expected full|uniform)");
}

std::string to_string(AttentionMode m) {
  return m == AttentionMode::full ? "full" : "uniform";
}

void TrackOptions::validate() const {
  if (grid_resolution < 2) throw ResolutionTooSmall("grid_resolution must be >= 2");
  if (chunk_size < 1) throw ConfigInvalid("chunk_size must be >= 1");
  if (n_threads < 1) throw ConfigInvalid("n_threads must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigInvalid("momentum must lie in [0, 1)");
}

namespace {

Point3 clamp_position(const Point3& p) {
  return p.cwiseMax(Point3::Constant(-1.5)).cwiseMin(Point3::Constant(1.5));
}

void try_activate(TrackQuery& query, const TrackingInput& input, int frame, int m) {
  std::vector<Observation> obs;
  std::vector<int> views;
  for (int v = 0; v < input.n_views(); ++v)
    if (input.visible[frame][v][m]) {
      obs.push_back({input.cameras[v], input.track_xy[frame][v].row(m).transpose()});
      views.push_back(v);
    }
  if (obs.size() < 2) return;
  Point3 position;
  try {
    position = dlt_triangulate(obs);
  } catch (const Error&) {
    return;  // stay inactive; a later frame may be better conditioned
  }
  query.position = clamp_position(position);
  query.embedding = Eigen::VectorXd::Zero(input.feature_dim());
  for (int v : views) query.embedding += input.features[frame][v].row(m).transpose();
  query.embedding /= static_cast<double>(views.size());
  query.active = true;
}

}  // namespace

std::vector<TrackQuery> init_queries(const TrackingInput& input, int frame) {
  if (frame < 0 || frame >= input.n_frames()) throw IndexMismatch("query init frame out of range");
  std::vector<TrackQuery> queries(input.n_points());
  for (int m = 0; m < input.n_points(); ++m) {
    queries[m].point_id = m;
    queries[m].embedding = Eigen::VectorXd::Zero(input.feature_dim());
    try_activate(queries[m], input, frame, m);
  }
  return queries;
}

void activate_queries(std::vector<TrackQuery>& queries, const TrackingInput& input, int frame) {
  for (int m = 0; m < static_cast<int>(queries.size()); ++m)
    if (!queries[m].active) try_activate(queries[m], input, frame, m);
}

FrameGeometry make_frame_geometry(const std::vector<CameraParams>& cams, int grid_resolution) {
  if (cams.size() < 2) throw InsufficientViews("frame geometry needs at least two cameras");
  FrameGeometry geo;
  geo.grid = make_grid(grid_resolution);
  for (const auto& cam : cams) geo.grids.push_back(project_grid(geo.grid, cam));
  const size_t n = cams.size();
  geo.fundamentals.assign(n, std::vector<FundamentalMatrix>(n));
  for (size_t a = 0; a < n; ++a)
    for (size_t b = 0; b < n; ++b)
      if (a != b) geo.fundamentals[a][b] = fundamental_matrix(cams[a], cams[b]);
  return geo;
}

namespace {

// Correspondence guard: scores are zero (and carry no gradient) when either
// side has a vanishing norm.
constexpr double kCosineGuard = 1e-12;

Eigen::VectorXd compound_feature(const FrameGeometry& geo, const FrameTape& tape,
                                 const TrackingInput& input, int frame, int m, int voxel,
                                 const ModelParams& model) {
  const int d = model.feature_dim, mq = model.n_queries, n = model.n_views;
  Eigen::VectorXd phi(compound_feature_size(d, mq, n));
  phi.head<3>() = geo.grid.coords.row(voxel).transpose();
  phi.segment(3, d) = tape.v_feat.row(voxel).transpose();
  phi.segment(3 + d, mq) = tape.corr.col(voxel);
  for (int v = 0; v < n; ++v)
    phi(3 + d + mq + v) =
        input.visible[frame][v][m] ? std::sqrt(tape.sq_dist[v](voxel, m)) : 1.0;
  return phi;
}

}  // namespace

FrameResult run_frame(const TrackingInput& input, int frame, const FrameGeometry& geo,
                      const std::vector<TrackQuery>& queries, const ModelParams& model,
                      const TrackOptions& opts, FrameTape* tape_out) {
  model.validate();
  opts.validate();
  if (frame < 0 || frame >= input.n_frames()) throw IndexMismatch("frame index out of range");
  if (model.feature_dim != input.feature_dim() || model.n_queries != input.n_points() ||
      model.n_views != input.n_views())
    throw SpecMismatch(
        "model layout (feature_dim=" + std::to_string(model.feature_dim) +
        ", points=" + std::to_string(model.n_queries) +
        ", views=" + std::to_string(model.n_views) + ") does not match the input (feature_dim=" +
        std::to_string(input.feature_dim()) + ", points=" + std::to_string(input.n_points()) +
        ", views=" + std::to_string(input.n_views()) + ")");
  if (static_cast<int>(queries.size()) != input.n_points())
    throw ShapeMismatch("query count must match point count");
  if (!(input.image_diag > 0.0)) throw ConfigInvalid("image diagonal must be positive");

  const int n_views = input.n_views(), k = input.n_points(), d = input.feature_dim();
  const int n_voxels = geo.grid.size();
  const double scale = 1.0 / input.image_diag;

  FrameTape local;
  FrameTape& tape = tape_out ? *tape_out : local;
  tape = FrameTape{};
  tape.params_version = model.mlp.version;

  for (int v = 0; v < n_views; ++v) {
    const Eigen::MatrixXd& points = input.track_xy[frame][v];
    const std::vector<uint8_t>& vis = input.visible[frame][v];
    bool any = false;
    for (uint8_t f : vis) any |= (f != 0);
    tape.view_has_visible.push_back(any ? 1 : 0);

    Eigen::MatrixXd sq = pairwise_sq_dist(geo.grids[v], points, scale);
    Eigen::MatrixXd attention, epi, sfm, weighted;
    int partners = 0;
    if (opts.attention == AttentionMode::full) {
      attention = distance_attention_from(sq, model.temperature, &geo.grids[v].valid, &vis);
      EpipolarMaskResult e =
          epipolar_mask(v, geo.grids, geo.fundamentals, points, model.sigma_epi, scale);
      epi = std::move(e.mask);
      weighted = std::move(e.weighted_sq);
      partners = e.partners;
      sfm = sfm_mask_from(sq, geo.grids[v].valid, model.sigma_sfm);
    } else {
      int n_vis = 0;
      for (uint8_t f : vis) n_vis += f ? 1 : 0;
      attention = Eigen::MatrixXd::Zero(n_voxels, k);
      if (n_vis > 0)
        for (int j = 0; j < k; ++j)
          if (vis[j]) attention.col(j).setConstant(1.0 / n_vis);
      epi = Eigen::MatrixXd::Ones(n_voxels, k);
      weighted = Eigen::MatrixXd::Zero(n_voxels, k);
      sfm = Eigen::MatrixXd::Ones(n_voxels, k);
    }
    Eigen::MatrixXd combined = combine_masks(attention, epi, sfm);
    if (!any)
      combined.setZero();  // a fully hidden view contributes nothing
    else
      for (int i = 0; i < n_voxels; ++i)
        if (!geo.grids[v].valid[i]) combined.row(i).setZero();

    tape.sq_dist.push_back(std::move(sq));
    tape.attention.push_back(std::move(attention));
    tape.mask_epi.push_back(std::move(epi));
    tape.epi_weighted_sq.push_back(std::move(weighted));
    tape.epi_partners.push_back(partners);
    tape.mask_sfm.push_back(std::move(sfm));
    tape.combined.push_back(std::move(combined));
  }

  tape.v_feat =
      populate_volume(tape.combined, input.features[frame], opts.chunk_size, opts.n_threads);

  // query correspondence scores
  tape.query_u = Eigen::MatrixXd::Zero(k, d);
  for (int m = 0; m < k; ++m) {
    if (queries[m].embedding.size() != d)
      throw ShapeMismatch("query embedding width must match the feature dimension");
    tape.query_u.row(m) = (model.f_q * queries[m].embedding).transpose();
  }
  tape.query_u_norm = tape.query_u.rowwise().norm();
  tape.v_feat_norm = tape.v_feat.rowwise().norm();
  tape.corr = Eigen::MatrixXd::Zero(k, n_voxels);
  for (int m = 0; m < k; ++m) {
    if (tape.query_u_norm(m) < kCosineGuard) continue;
    for (int i = 0; i < n_voxels; ++i) {
      if (tape.v_feat_norm(i) < kCosineGuard) continue;
      tape.corr(m, i) = tape.query_u.row(m).dot(tape.v_feat.row(i)) /
                        (tape.query_u_norm(m) * tape.v_feat_norm(i));
    }
  }

  FrameResult result;
  result.positions.resize(k);
  result.valid.resize(k);
  result.blend_positions.resize(k);
  result.blend_features = Eigen::MatrixXd::Zero(k, d);
  tape.hood.resize(k);
  tape.hood_weights.resize(k);
  tape.compound.resize(k);
  tape.mlp_tapes.resize(k);

  // the readout voxel is picked by combined cross-view attention mass, not
  // by the cosine scores: cosine is scale-invariant, so every voxel along a
  // single view's ray looks alike and only the multi-view mass resolves
  // depth. The selection is gradient-stopped either way.
  Eigen::VectorXd mass(n_voxels);
  for (int m = 0; m < k; ++m) {
    mass.setZero();
    for (int v = 0; v < n_views; ++v) mass += tape.combined[v].col(m);
    int best = 0;
    for (int i = 1; i < n_voxels; ++i)
      if (mass(i) > mass(best)) best = i;
    std::vector<int> hood = {best};
    for (int nb : geo.grid.face_neighbors(best)) hood.push_back(nb);

    Eigen::VectorXd w(hood.size());
    for (size_t h = 0; h < hood.size(); ++h)
      w(h) = std::max(tape.corr(m, hood[h]), 0.0) + 1e-6;
    w /= w.sum();

    Eigen::VectorXd x =
        Eigen::VectorXd::Zero(compound_feature_size(d, k, n_views));
    for (size_t h = 0; h < hood.size(); ++h)
      x += w(h) * compound_feature(geo, tape, input, frame, m, hood[h], model);

    tape.hood[m] = std::move(hood);
    tape.hood_weights[m] = std::move(w);
    tape.compound[m] = x;

    const uint64_t seed =
        derive_seed(opts.dropout_seed, "frame-" + std::to_string(frame) + "-query-" +
                                           std::to_string(m));
    const Eigen::VectorXd y =
        mlp_forward(model.mlp, model.spec, x, opts.train_mode, seed, &tape.mlp_tapes[m]);
    result.positions[m] = y;
    result.valid[m] = input.any_visible(frame, m) ? 1 : 0;
    result.blend_positions[m] = x.head<3>();
    result.blend_features.row(m) = x.segment(3, d).transpose();
  }
  return result;
}

void update_queries(std::vector<TrackQuery>& queries, const TrackingInput& input, int frame,
                    const FrameResult& result, double momentum) {
  if (queries.size() != result.positions.size())
    throw ShapeMismatch("query/result length mismatch");
  for (size_t m = 0; m < queries.size(); ++m) {
    TrackQuery& q = queries[m];
    if (!q.active || !result.valid[m]) continue;
    (void)input;
    (void)frame;
    q.position = clamp_position(momentum * q.position + (1.0 - momentum) * result.positions[m]);
    q.embedding = momentum * q.embedding +
                  (1.0 - momentum) * result.blend_features.row(m).transpose();
  }
}

namespace {

// d(pixel)/d(world point) for a pinhole camera, 2 x 3.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Point3& p, const CameraParams& cam) {
  const Eigen::Vector3d pc = cam.rotation * p + cam.translation;
  const double z = pc.z();
  const double row0 = cam.intrinsics(0, 0) * pc.x() + cam.intrinsics(0, 1) * pc.y();
  Eigen::Matrix<double, 2, 3> d_pixel_d_pc;
  d_pixel_d_pc << cam.intrinsics(0, 0) / z, cam.intrinsics(0, 1) / z, -row0 / (z * z), 0.0,
      cam.intrinsics(1, 1) / z, -cam.intrinsics(1, 1) * pc.y() / (z * z);
  return d_pixel_d_pc * cam.rotation;
}

}  // namespace

FrameLossResult frame_loss_and_grads(const TrackingInput& input, int frame,
                                     const FrameGeometry& geo,
                                     const std::vector<TrackQuery>& queries,
                                     const ModelParams& model, const TrackOptions& opts,
                                     const std::vector<std::vector<Point3>>& gt,
                                     const LossWeights& weights, bool want_grads) {
  weights.validate();
  const int k = input.n_points(), n_views = input.n_views(), d = input.feature_dim();
  if (static_cast<int>(gt.size()) != k) throw ShapeMismatch("ground-truth point count mismatch");
  const double scale = 1.0 / input.image_diag;

  FrameTape tape;
  FrameLossResult out;
  out.result = run_frame(input, frame, geo, queries, model, opts, &tape);

  std::vector<Point3> gt_frame(k);
  std::vector<uint8_t> valid(k);
  for (int m = 0; m < k; ++m) {
    gt_frame[m] = gt[m][frame];
    valid[m] = out.result.valid[m];
  }

  int recon_count = 0;
  for (int m = 0; m < k; ++m) recon_count += valid[m] ? 1 : 0;
  out.loss.recon = recon_loss(out.result.positions, gt_frame, valid);

  int proj_pairs = 0, proj_degenerate = 0;
  out.loss.proj = proj_loss(out.result.positions, input.cameras, input.track_xy[frame],
                            input.visible[frame], scale, &proj_pairs, &proj_degenerate);

  double attn_dt = 0.0;
  out.loss.attn = attn_loss(input.features[frame], input.visible[frame], model.temperature,
                            want_grads ? &attn_dt : nullptr);
  out.loss.total = total_loss(out.loss.recon, out.loss.proj, out.loss.attn, weights);

  if (!want_grads) return out;

  // ---- backward ----
  std::vector<Eigen::MatrixXd> d_w;
  std::vector<Eigen::VectorXd> d_b;
  for (size_t l = 0; l < model.mlp.weights.size(); ++l) {
    d_w.push_back(Eigen::MatrixXd::Zero(model.mlp.weights[l].rows(), model.mlp.weights[l].cols()));
    d_b.push_back(Eigen::VectorXd::Zero(model.mlp.biases[l].size()));
  }
  Eigen::MatrixXd d_fq = Eigen::MatrixXd::Zero(d, d);
  double d_temp = weights.attn * attn_dt, d_sig_epi = 0.0, d_sig_sfm = 0.0;

  const int n_voxels = geo.grid.size();
  Eigen::MatrixXd d_vfeat = Eigen::MatrixXd::Zero(n_voxels, d);
  Eigen::MatrixXd d_corr = Eigen::MatrixXd::Zero(k, n_voxels);
  std::set<int> touched;

  for (int m = 0; m < k; ++m) {
    Eigen::Vector3d d_pred = Eigen::Vector3d::Zero();
    if (valid[m] && recon_count > 0)
      d_pred += weights.recon * 2.0 * (out.result.positions[m] - gt_frame[m]) / recon_count;
    if (proj_pairs > 0) {
      for (int v = 0; v < n_views; ++v) {
        if (!input.visible[frame][v][m]) continue;
        try {
          const Projection p = project(out.result.positions[m], input.cameras[v]);
          const Point2 obs = input.track_xy[frame][v].row(m).transpose();
          const Eigen::Matrix<double, 2, 3> jac =
              projection_jacobian(out.result.positions[m], input.cameras[v]);
          d_pred += weights.proj * (2.0 * scale * scale / proj_pairs) *
                    (jac.transpose() * (p.pixel - obs));
        } catch (const DegenerateProjection&) {
          // skipped in the loss, skipped here
        }
      }
    }
    if (d_pred.isZero(0.0)) continue;

    const MlpGrads mg = mlp_backward(model.mlp, model.spec, tape.mlp_tapes[m], d_pred);
    for (size_t l = 0; l < d_w.size(); ++l) {
      d_w[l] += mg.d_weights[l];
      d_b[l] += mg.d_biases[l];
    }
    const Eigen::VectorXd& dx = mg.d_input;

    // blended compound feature: x = sum_h w_h phi_h
    const std::vector<int>& hood = tape.hood[m];
    const Eigen::VectorXd& w = tape.hood_weights[m];
    Eigen::VectorXd d_what(hood.size());
    for (size_t h = 0; h < hood.size(); ++h) {
      const Eigen::VectorXd phi =
          compound_feature(geo, tape, input, frame, m, hood[h], model);
      d_what(h) = dx.dot(phi);
      d_vfeat.row(hood[h]) += w(h) * dx.segment(3, d).transpose();
      d_corr.col(hood[h]) += w(h) * dx.segment(3 + d, k);
      touched.insert(hood[h]);
    }
    // normalization and relu-plus-epsilon backward
    double raw_sum = 0.0;
    for (size_t h = 0; h < hood.size(); ++h)
      raw_sum += std::max(tape.corr(m, hood[h]), 0.0) + 1e-6;
    const double dot = d_what.dot(w);
    for (size_t h = 0; h < hood.size(); ++h) {
      const double d_raw = (d_what(h) - dot) / raw_sum;
      if (tape.corr(m, hood[h]) > 0.0) d_corr(m, hood[h]) += d_raw;
    }
  }

  // cosine backward: scores feed both the readout weights and the compound
  // correspondence block
  for (int i : touched) {
    if (tape.v_feat_norm(i) < kCosineGuard) continue;
    for (int m = 0; m < k; ++m) {
      const double g = d_corr(m, i);
      if (g == 0.0 || tape.query_u_norm(m) < kCosineGuard) continue;
      const double nu = tape.query_u_norm(m), nv = tape.v_feat_norm(i);
      const Eigen::RowVectorXd u = tape.query_u.row(m);
      const Eigen::RowVectorXd vf = tape.v_feat.row(i);
      const double c = tape.corr(m, i);
      const Eigen::RowVectorXd du = g * (vf / (nu * nv) - c * u / (nu * nu));
      d_vfeat.row(i) += g * (u / (nu * nv) - c * vf / (nv * nv));
      d_fq += du.transpose() * queries[m].embedding.transpose();
    }
  }

  // aggregation, mask and attention backward on touched voxel rows only
  if (opts.attention == AttentionMode::full) {
    const double t_sq = model.temperature * model.temperature;
    const double sig_epi_cu = model.sigma_epi * model.sigma_epi * model.sigma_epi;
    const double sig_sfm_cu = model.sigma_sfm * model.sigma_sfm * model.sigma_sfm;
    for (int i : touched) {
      if (d_vfeat.row(i).isZero(0.0)) continue;
      for (int v = 0; v < n_views; ++v) {
        if (!tape.view_has_visible[v] || !geo.grids[v].valid[i]) continue;
        const Eigen::MatrixXd& feats = input.features[frame][v];
        const std::vector<uint8_t>& vis = input.visible[frame][v];
        Eigen::VectorXd d_attn = Eigen::VectorXd::Zero(k);
        for (int j = 0; j < k; ++j) {
          const double d_combined = d_vfeat.row(i).dot(feats.row(j));
          const double epi = tape.mask_epi[v](i, j);
          const double sfm = tape.mask_sfm[v](i, j);
          const double gate = std::max(epi, sfm);
          d_attn(j) = d_combined * gate;
          const double d_gate = d_combined * tape.attention[v](i, j);
          if (epi >= sfm) {
            if (tape.epi_partners[v] > 0)
              d_sig_epi +=
                  d_gate * tape.epi_weighted_sq[v](i, j) / (tape.epi_partners[v] * sig_epi_cu);
          } else {
            d_sig_sfm += d_gate * sfm * tape.sq_dist[v](i, j) / sig_sfm_cu;
          }
        }
        // softmax row backward -> temperature
        double dot = 0.0;
        for (int j = 0; j < k; ++j) dot += d_attn(j) * tape.attention[v](i, j);
        for (int j = 0; j < k; ++j) {
          if (!vis[j]) continue;
          const double ds = tape.attention[v](i, j) * (d_attn(j) - dot);
          d_temp += ds * tape.sq_dist[v](i, j) / t_sq;
        }
      }
    }
  }

  // flatten in flatten_model order
  Eigen::VectorXd flat(model_param_count(model));
  Eigen::Index at = 0;
  for (size_t l = 0; l < d_w.size(); ++l) {
    for (Eigen::Index r = 0; r < d_w[l].rows(); ++r)
      for (Eigen::Index c = 0; c < d_w[l].cols(); ++c) flat(at++) = d_w[l](r, c);
    flat.segment(at, d_b[l].size()) = d_b[l];
    at += d_b[l].size();
  }
  for (Eigen::Index r = 0; r < d_fq.rows(); ++r)
    for (Eigen::Index c = 0; c < d_fq.cols(); ++c) flat(at++) = d_fq(r, c);
  flat(at++) = d_temp;
  flat(at++) = d_sig_epi;
  flat(at++) = d_sig_sfm;
  out.grads = std::move(flat);
  if (!out.grads.allFinite()) throw NonFinite("non-finite frame gradients");
  return out;
}

std::vector<Trajectory3D> track_sequence(const TrackingInput& input, const ModelParams& model,
                                         const TrackOptions& opts, AttentionDump* dump) {
  input.check();
  const FrameGeometry geo = make_frame_geometry(input.cameras, opts.grid_resolution);
  std::vector<TrackQuery> queries = init_queries(input, 0);

  const int k = input.n_points(), f = input.n_frames();
  std::vector<Trajectory3D> tracks(k);
  for (int m = 0; m < k; ++m) {
    tracks[m].point_id = m;
    tracks[m].positions.reserve(f);
    tracks[m].valid.reserve(f);
  }
  std::vector<Point3> last(k, Point3::Zero());
  for (int m = 0; m < k; ++m)
    if (queries[m].active) last[m] = queries[m].position;

  for (int t = 0; t < f; ++t) {
    if (t > 0) activate_queries(queries, input, t);
    FrameTape tape;
    const FrameResult res =
        run_frame(input, t, geo, queries, model, opts, dump ? &tape : nullptr);
    for (int m = 0; m < k; ++m) {
      const Point3 out = (res.valid[m] && queries[m].active) ? res.positions[m] : last[m];
      tracks[m].positions.push_back(out);
      tracks[m].valid.push_back(res.valid[m]);
      last[m] = out;
    }
    update_queries(queries, input, t, res, opts.momentum);

    if (dump) {
      std::vector<AttentionDump::ViewStats> frame_stats;
      for (int v = 0; v < input.n_views(); ++v) {
        AttentionDump::ViewStats s;
        s.view_id = input.cameras[v].view_id;
        const Eigen::VectorXd sums = tape.combined[v].rowwise().sum();
        s.row_sum_min = sums.minCoeff();
        s.row_sum_max = sums.maxCoeff();
        s.row_sum_mean = sums.mean();
        double entropy = 0.0;
        for (Eigen::Index i = 0; i < tape.attention[v].rows(); ++i)
          for (Eigen::Index j = 0; j < tape.attention[v].cols(); ++j) {
            const double a = tape.attention[v](i, j);
            if (a > 0.0) entropy -= a * std::log(a);
          }
        s.entropy_mean = entropy / tape.attention[v].rows();
        frame_stats.push_back(s);
        if (t == 0) dump->first_frame_combined.push_back(tape.combined[v]);
      }
      dump->frames.push_back(std::move(frame_stats));
    }
  }
  return tracks;
}

void save_trajectories_json(const std::vector<Trajectory3D>& tracks,
                            const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& tr : tracks) {
    nlohmann::json frames = nlohmann::json::array();
    for (size_t t = 0; t < tr.positions.size(); ++t)
      frames.push_back({{"frame", static_cast<int>(t)},
                        {"xyz", {tr.positions[t].x(), tr.positions[t].y(), tr.positions[t].z()}},
                        {"valid", tr.valid[t] != 0}});
    j.push_back({{"point_id", tr.point_id}, {"frames", std::move(frames)}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trajectory file " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<Trajectory3D> load_trajectories_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("trajectory file " + path.string() + ": " + e.what());
  }
  std::vector<Trajectory3D> tracks;
  try {
    for (const auto& tj : j) {
      Trajectory3D tr;
      tr.point_id = tj.at("point_id").get<int>();
      int expected = 0;
      for (const auto& fj : tj.at("frames")) {
        if (fj.at("frame").get<int>() != expected)
          throw FrameGap("trajectory frames must be contiguous from 0");
        const auto xyz = fj.at("xyz").get<std::vector<double>>();
        if (xyz.size() != 3) throw ShapeMismatch("xyz must have 3 entries");
        tr.positions.emplace_back(xyz[0], xyz[1], xyz[2]);
        tr.valid.push_back(fj.at("valid").get<bool>() ? 1 : 0);
        ++expected;
      }
      tracks.push_back(std::move(tr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("trajectory file " + path.string() + ": " + e.what());
  }
  return tracks;
}

void save_trajectories_csv(const std::vector<Trajectory3D>& tracks,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trajectory file " + path.string());
  out << "frame,point_id,x,y,z,valid\n";
  out.precision(17);
  size_t n_frames = 0;
  for (const auto& tr : tracks) n_frames = std::max(n_frames, tr.positions.size());
  for (size_t t = 0; t < n_frames; ++t)
    for (const auto& tr : tracks) {
      if (t >= tr.positions.size()) continue;
      out << t << ',' << tr.point_id << ',' << tr.positions[t].x() << ','
          << tr.positions[t].y() << ',' << tr.positions[t].z() << ','
          << (tr.valid[t] ? 1 : 0) << "\n";
    }
  if (!out) throw IoError("failed while writing " + path.string());
}

}  // namespace voltrack
