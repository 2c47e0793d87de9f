#include "voltrack/volume.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

namespace voltrack {

int VolumetricGrid::index(int ix, int iy, int iz) const {
  const int v = resolution;
  if (ix < 0 || iy < 0 || iz < 0 || ix >= v || iy >= v || iz >= v)
    throw IndexMismatch("voxel index out of range");
  return (ix * v + iy) * v + iz;
}

std::array<int, 3> VolumetricGrid::cell(int i) const {
  const int v = resolution;
  if (i < 0 || i >= size()) throw IndexMismatch("voxel index out of range");
  return {i / (v * v), (i / v) % v, i % v};
}

double VolumetricGrid::spacing() const { return 2.0 / (resolution - 1); }

std::vector<int> VolumetricGrid::face_neighbors(int i) const {
  const auto [ix, iy, iz] = cell(i);
  std::vector<int> out;
  const int v = resolution;
  if (ix > 0) out.push_back(index(ix - 1, iy, iz));
  if (ix + 1 < v) out.push_back(index(ix + 1, iy, iz));
  if (iy > 0) out.push_back(index(ix, iy - 1, iz));
  if (iy + 1 < v) out.push_back(index(ix, iy + 1, iz));
  if (iz > 0) out.push_back(index(ix, iy, iz - 1));
  if (iz + 1 < v) out.push_back(index(ix, iy, iz + 1));
  return out;
}

VolumetricGrid make_grid(int resolution) {
  if (resolution < 2)
    throw ResolutionTooSmall("grid resolution must be >= 2, got " + std::to_string(resolution));
  VolumetricGrid grid;
  grid.resolution = resolution;
  grid.coords.resize(static_cast<Eigen::Index>(resolution) * resolution * resolution, 3);
  const double denom = resolution - 1;
  int row = 0;
  for (int ix = 0; ix < resolution; ++ix)
    for (int iy = 0; iy < resolution; ++iy)
      for (int iz = 0; iz < resolution; ++iz, ++row) {
        grid.coords(row, 0) = (2.0 * ix - denom) / denom;
        grid.coords(row, 1) = (2.0 * iy - denom) / denom;
        grid.coords(row, 2) = (2.0 * iz - denom) / denom;
      }
  return grid;
}

ProjectedGrid project_grid(const VolumetricGrid& grid, const CameraParams& cam) {
  ProjectedGrid pg;
  pg.view_id = cam.view_id;
  const int n = grid.size();
  pg.pixels = Eigen::MatrixXd::Zero(n, 2);
  pg.depth = Eigen::VectorXd::Zero(n);
  pg.valid.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d pc = cam.rotation * grid.coords.row(i).transpose() + cam.translation;
    if (pc.z() <= kMinProjectionDepth) continue;
    const Eigen::Vector3d h = cam.intrinsics * pc;
    pg.pixels(i, 0) = h.x() / h.z();
    pg.pixels(i, 1) = h.y() / h.z();
    pg.depth(i) = pc.z();
    pg.valid[i] = 1;
  }
  return pg;
}

Eigen::MatrixXd pairwise_sq_dist(const ProjectedGrid& pg, const Eigen::MatrixXd& points,
                                 double scale) {
  if (points.cols() != 2) throw ShapeMismatch("points must be K x 2");
  if (!points.allFinite()) throw NonFinite("non-finite 2D points");
  if (!(scale > 0.0)) throw ConfigInvalid("distance scale must be positive");
  const int n = static_cast<int>(pg.pixels.rows());
  const int k = static_cast<int>(points.rows());
  Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(n, k);
  const double s2 = scale * scale;
  for (int i = 0; i < n; ++i) {
    if (!pg.valid[i]) continue;
    for (int j = 0; j < k; ++j) {
      const double dx = pg.pixels(i, 0) - points(j, 0);
      const double dy = pg.pixels(i, 1) - points(j, 1);
      sq(i, j) = (dx * dx + dy * dy) * s2;
    }
  }
  return sq;
}

Eigen::MatrixXd distance_attention_from(const Eigen::MatrixXd& sq_dist, double temperature,
                                        const std::vector<uint8_t>* row_valid,
                                        const std::vector<uint8_t>* col_visible) {
  if (temperature <= 0.0)
    throw NonPositiveTemperature("temperature must be positive, got " +
                                 std::to_string(temperature));
  if (!sq_dist.allFinite()) throw NonFinite("non-finite attention distances");
  const int n = static_cast<int>(sq_dist.rows());
  const int k = static_cast<int>(sq_dist.cols());
  if (k == 0) throw ShapeMismatch("attention needs at least one point column");
  if (row_valid && static_cast<int>(row_valid->size()) != n)
    throw ShapeMismatch("row_valid length mismatch");
  if (col_visible && static_cast<int>(col_visible->size()) != k)
    throw ShapeMismatch("col_visible length mismatch");

  int n_visible = 0;
  for (int j = 0; j < k; ++j)
    if (!col_visible || (*col_visible)[j]) ++n_visible;

  Eigen::MatrixXd attn = Eigen::MatrixXd::Zero(n, k);
  for (int i = 0; i < n; ++i) {
    const bool fallback_uniform = (row_valid && !(*row_valid)[i]) || n_visible == 0;
    if (fallback_uniform) {
      if (n_visible == 0) {
        attn.row(i).setConstant(1.0 / k);
      } else {
        for (int j = 0; j < k; ++j)
          if (!col_visible || (*col_visible)[j]) attn(i, j) = 1.0 / n_visible;
      }
      continue;
    }
    double best = std::numeric_limits<double>::lowest();
    for (int j = 0; j < k; ++j) {
      if (col_visible && !(*col_visible)[j]) continue;
      best = std::max(best, -sq_dist(i, j) / temperature);
    }
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      if (col_visible && !(*col_visible)[j]) continue;
      const double w = std::exp(-sq_dist(i, j) / temperature - best);
      attn(i, j) = w;
      total += w;
    }
    attn.row(i) /= total;
  }
  return attn;
}

Eigen::MatrixXd distance_attention(const ProjectedGrid& pg, const Eigen::MatrixXd& points,
                                   double temperature) {
  return distance_attention_from(pairwise_sq_dist(pg, points, 1.0), temperature, &pg.valid,
                                 nullptr);
}

EpipolarMaskResult epipolar_mask(int view_index, const std::vector<ProjectedGrid>& grids,
                                 const std::vector<std::vector<FundamentalMatrix>>& fundamentals,
                                 const Eigen::MatrixXd& points, double sigma, double scale) {
  if (sigma <= 0.0) throw ConfigInvalid("epipolar mask sigma must be positive");
  if (!(scale > 0.0)) throw ConfigInvalid("distance scale must be positive");
  if (points.cols() != 2) throw ShapeMismatch("points must be K x 2");
  if (view_index < 0 || view_index >= static_cast<int>(grids.size()))
    throw IndexMismatch("view index out of range");
  const int n_views = static_cast<int>(grids.size());
  const int n = static_cast<int>(grids[view_index].pixels.rows());
  const int k = static_cast<int>(points.rows());

  EpipolarMaskResult out;
  out.mask = Eigen::MatrixXd::Zero(n, k);
  out.weighted_sq = Eigen::MatrixXd::Zero(n, k);
  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
  for (int b = 0; b < n_views; ++b) {
    if (b == view_index) continue;
    ++out.partners;
    const FundamentalMatrix& f = fundamentals[b][view_index];
    if (f.degenerate) {
      out.mask.array() += 1.0;
      continue;
    }
    const ProjectedGrid& pg_b = grids[b];
    if (static_cast<int>(pg_b.pixels.rows()) != n)
      throw ShapeMismatch("projected grids disagree on voxel count");
    for (int i = 0; i < n; ++i) {
      if (!pg_b.valid[i]) {
        out.mask.row(i).array() += 1.0;
        continue;
      }
      const Eigen::Vector3d line =
          f.m * Eigen::Vector3d(pg_b.pixels(i, 0), pg_b.pixels(i, 1), 1.0);
      const double denom = std::hypot(line.x(), line.y());
      if (denom < 1e-12) {
        out.mask.row(i).array() += 1.0;
        continue;
      }
      for (int j = 0; j < k; ++j) {
        const double d =
            scale * std::abs(line.x() * points(j, 0) + line.y() * points(j, 1) + line.z()) / denom;
        const double contribution = std::exp(-d * d * inv_two_sigma_sq);
        out.mask(i, j) += contribution;
        out.weighted_sq(i, j) += contribution * d * d;
      }
    }
  }
  if (out.partners == 0) {
    out.mask.setOnes();
  } else {
    out.mask /= out.partners;
  }
  return out;
}

Eigen::MatrixXd sfm_mask_from(const Eigen::MatrixXd& sq_dist,
                              const std::vector<uint8_t>& row_valid, double sigma) {
  if (sigma <= 0.0) throw ConfigInvalid("reprojection mask sigma must be positive");
  if (static_cast<int>(row_valid.size()) != sq_dist.rows())
    throw ShapeMismatch("row_valid length mismatch");
  Eigen::MatrixXd mask = (-sq_dist / (2.0 * sigma * sigma)).array().exp();
  for (int i = 0; i < sq_dist.rows(); ++i)
    if (!row_valid[i]) mask.row(i).setZero();
  return mask;
}

Eigen::MatrixXd sfm_mask(const ProjectedGrid& pg, const Eigen::MatrixXd& points, double sigma,
                         double scale) {
  return sfm_mask_from(pairwise_sq_dist(pg, points, scale), pg.valid, sigma);
}

Eigen::MatrixXd combine_masks(const Eigen::MatrixXd& attention, const Eigen::MatrixXd& mask_epi,
                              const Eigen::MatrixXd& mask_sfm) {
  if (attention.rows() != mask_epi.rows() || attention.cols() != mask_epi.cols() ||
      attention.rows() != mask_sfm.rows() || attention.cols() != mask_sfm.cols())
    throw ShapeMismatch("attention and masks must share a shape");
  return attention.cwiseProduct(mask_epi.cwiseMax(mask_sfm));
}

Eigen::MatrixXd populate_volume(const std::vector<Eigen::MatrixXd>& attn,
                                const std::vector<Eigen::MatrixXd>& feats, int chunk_size,
                                int n_threads) {
  if (chunk_size < 1) throw ConfigInvalid("chunk_size must be >= 1");
  if (attn.empty() || attn.size() != feats.size())
    throw ShapeMismatch("need matching attention/feature lists");
  const Eigen::Index n = attn[0].rows();
  const Eigen::Index d = feats[0].cols();
  for (size_t v = 0; v < attn.size(); ++v) {
    if (attn[v].rows() != n) throw ShapeMismatch("attention row counts differ across views");
    if (feats[v].cols() != d) throw ShapeMismatch("feature widths differ across views");
    if (attn[v].cols() != feats[v].rows())
      throw ShapeMismatch("attention columns must match feature rows");
  }

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, d);
  const auto run_chunk = [&](Eigen::Index begin, Eigen::Index len) {
    for (size_t v = 0; v < attn.size(); ++v)
      out.middleRows(begin, len).noalias() += attn[v].middleRows(begin, len) * feats[v];
  };

  std::vector<std::pair<Eigen::Index, Eigen::Index>> chunks;
  for (Eigen::Index begin = 0; begin < n; begin += chunk_size)
    chunks.emplace_back(begin, std::min<Eigen::Index>(chunk_size, n - begin));

  if (n_threads <= 1 || chunks.size() <= 1) {
    for (const auto& [begin, len] : chunks) run_chunk(begin, len);
    return out;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min<int>(n_threads, static_cast<int>(chunks.size()));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (size_t c = next.fetch_add(1); c < chunks.size(); c = next.fetch_add(1))
        run_chunk(chunks[c].first, chunks[c].second);
    });
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace voltrack
