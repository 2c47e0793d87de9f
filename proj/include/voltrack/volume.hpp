#pragma once

#include <array>
#include <vector>

#include "voltrack/geometry.hpp"

namespace voltrack {

/// Axis-aligned voxel lattice over the normalized working cube [-1, 1]^3.
/// Linear index runs x-major: i = ix * V^2 + iy * V + iz.
struct VolumetricGrid {
  int resolution = 0;
  Eigen::Matrix<double, Eigen::Dynamic, 3> coords;  // V^3 x 3

  int size() const { return static_cast<int>(coords.rows()); }
  int index(int ix, int iy, int iz) const;
  std::array<int, 3> cell(int i) const;
  double spacing() const;  // edge length between adjacent voxel centers
  std::vector<int> face_neighbors(int i) const;  // up to 6
};

/// Throws ResolutionTooSmall below 2.
VolumetricGrid make_grid(int resolution);

/// All voxel centers pushed through one camera. Voxels at or behind the
/// camera plane get valid = 0 and zeroed pixel/depth instead of throwing.
struct ProjectedGrid {
  int view_id = 0;
  Eigen::Matrix<double, Eigen::Dynamic, 2> pixels;  // V^3 x 2
  Eigen::VectorXd depth;
  std::vector<uint8_t> valid;
};

ProjectedGrid project_grid(const VolumetricGrid& grid, const CameraParams& cam);

/// Squared pixel distances between every projected voxel and every 2D point,
/// scaled by `scale` (pass 1/image_diagonal to work in normalized units).
/// Rows for invalid voxels are filled with zeros.
Eigen::MatrixXd pairwise_sq_dist(const ProjectedGrid& pg, const Eigen::MatrixXd& points,
                                 double scale);

/// Row softmax of -sq_dist / temperature. Columns with col_visible == 0 get
/// zero weight. Rows that are invalid (row_valid == 0) or have no visible
/// column fall back to uniform. Every row sums to exactly one visible mass.
Eigen::MatrixXd distance_attention_from(const Eigen::MatrixXd& sq_dist, double temperature,
                                        const std::vector<uint8_t>* row_valid,
                                        const std::vector<uint8_t>* col_visible);

/// Convenience wrapper in raw pixel units.
Eigen::MatrixXd distance_attention(const ProjectedGrid& pg, const Eigen::MatrixXd& points,
                                   double temperature);

/// Soft epipolar consistency gate for one view. For voxel i and point j the
/// partner view b contributes exp(-d^2 / (2 sigma^2)) where d is the scaled
/// distance from point j to the epipolar line of voxel i's pixel in b,
/// transferred into this view; contributions average over partners.
/// Degenerate pairs, invalid partner voxels and vanishing lines contribute a
/// neutral 1. weighted_sq accumulates contribution * d^2 (the sigma
/// sensitivity of the unaveraged sum), and partners counts the views b != a.
struct EpipolarMaskResult {
  Eigen::MatrixXd mask;         // V^3 x K in [0, 1]
  Eigen::MatrixXd weighted_sq;  // V^3 x K
  int partners = 0;
};

EpipolarMaskResult epipolar_mask(int view_index, const std::vector<ProjectedGrid>& grids,
                                 const std::vector<std::vector<FundamentalMatrix>>& fundamentals,
                                 const Eigen::MatrixXd& points, double sigma, double scale);

/// Reprojection proximity gate exp(-sq_dist / (2 sigma^2)) from a
/// precomputed (already scaled) squared-distance matrix. Invalid rows -> 0.
Eigen::MatrixXd sfm_mask_from(const Eigen::MatrixXd& sq_dist,
                              const std::vector<uint8_t>& row_valid, double sigma);

Eigen::MatrixXd sfm_mask(const ProjectedGrid& pg, const Eigen::MatrixXd& points, double sigma,
                         double scale);

/// attention ⊙ max(mask_epi, mask_sfm); deliberately not renormalized, so
/// rows may sum to less than one.
Eigen::MatrixXd combine_masks(const Eigen::MatrixXd& attention, const Eigen::MatrixXd& mask_epi,
                              const Eigen::MatrixXd& mask_sfm);

/// V_feat = sum_v attn[v] * feats[v], evaluated chunk_size voxel rows at a
/// time. Chunks are independent, so thread count never changes the result.
Eigen::MatrixXd populate_volume(const std::vector<Eigen::MatrixXd>& attn,
                                const std::vector<Eigen::MatrixXd>& feats, int chunk_size,
                                int n_threads = 1);

}  // namespace voltrack
