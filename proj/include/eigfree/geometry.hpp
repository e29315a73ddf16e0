#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "eigfree/errors.hpp"

namespace eigfree::geometry {

/// One 2D-2D match in intrinsics-normalized image coordinates; (u, v) in the
/// first view, (u2, v2) in the second.
struct Correspondence2D2D {
  double u = 0, v = 0, u2 = 0, v2 = 0;
};

/// A world point and its intrinsics-normalized image observation.
struct Correspondence3D2D {
  double x = 0, y = 0, z = 0, u = 0, v = 0;
};

/// Rows of the linear system whose weighted Gram matrix X^T W X carries the
/// zero eigenvalue. Rows 0..rows_per_correspondence-1 belong to
/// correspondence 0, and so on.
struct DataMatrix {
  Eigen::MatrixXd rows;
  int rows_per_correspondence = 1;

  Eigen::Index dim() const { return rows.cols(); }
  Eigen::Index correspondences() const { return rows.rows() / rows_per_correspondence; }
  void validate() const;
};

/// Weighted Gram matrix X^T W X, each correspondence weight applied to all of
/// its rows.
Eigen::MatrixXd weighted_gram(const DataMatrix& x, const Eigen::VectorXd& weights);

struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  bool is_valid(double tol = 1e-8) const;
};

/// x' = scale * x + offset.
struct SimilarityTransform2D {
  double scale = 1.0;
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();

  Eigen::Matrix3d matrix() const;
  Eigen::Matrix3d inverse_matrix() const;
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return scale * p + offset; }
};

/// X' = scale * X + offset, as a 4x4 homogeneous matrix.
struct SimilarityTransform3D {
  double scale = 1.0;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();

  Eigen::Matrix4d matrix() const;
  Eigen::Matrix4d inverse_matrix() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * p + offset; }
};

/// Which epipolar row to build. `paper` uses u*v as the second entry;
/// `classical` uses u*v2, the row that actually encodes x2^T E x = 0. Only `classical` is annihilated by the true
/// essential matrix.
enum class RowForm { paper, classical };

RowForm parse_row_form(std::string_view name);
std::string_view to_string(RowForm form);

/// C x 9 rows [u u2, u v|u v2, u, v u2, v v2, v, u2, v2, 1]. Requires C >= 8.
///
/// With the classical form the matching unknown is the column-major
/// vectorization of E (E(0,0), E(1,0), E(2,0), E(0,1), ...), where
/// x2^T E x1 = 0.
DataMatrix build_essential_matrix_rows(std::span<const Correspondence2D2D> corrs,
                                       RowForm form = RowForm::classical);

/// Centroid to the origin, RMS distance sqrt(2).
struct Normalized2D {
  std::vector<Eigen::Vector2d> points;
  SimilarityTransform2D transform;
};
Normalized2D hartley_normalize(std::span<const Eigen::Vector2d> points);

/// Centroid to the origin, RMS distance sqrt(3).
struct Normalized3D {
  std::vector<Eigen::Vector3d> points;
  SimilarityTransform3D transform;
};
Normalized3D normalize_points_3d(std::span<const Eigen::Vector3d> points);

/// Unit 9-vector of E_norm = T2^-T E T1^-1 in column-major order.
Eigen::VectorXd transform_gt_essential(const Eigen::Matrix3d& essential,
                                       const SimilarityTransform2D& t1,
                                       const SimilarityTransform2D& t2);

/// 2C x 12 DLT rows; requires C >= 6.
DataMatrix build_pnp_rows(std::span<const Correspondence3D2D> corrs);

/// Unit 12-vector of T2d [R|t] T3d^-1, row-major (p1..p12).
Eigen::VectorXd pnp_target_vector(const Pose& pose, const SimilarityTransform2D& t2d,
                                  const SimilarityTransform3D& t3d = {});

/// Scaled and sign-fixed 3x4 DLT solution before orthonormalization.
struct DltEstimate {
  Eigen::Matrix3d rotation_block;
  Eigen::Vector3d translation;
};

/// Reshapes a unit 12-vector (row-major [R~|t~]) and fixes its scale so that
/// |det R~| = 1 and its sign so that `sample` has positive depth.
DltEstimate dlt_pose_from_vector(const Eigen::VectorXd& e, const Correspondence3D2D& sample);

/// Nearest rotation in Frobenius norm: U diag(1, 1, det(U V^T)) V^T.
Eigen::Matrix3d procrustes_project(const Eigen::Matrix3d& m);

Pose refine_dlt(const DltEstimate& estimate);

/// Weighted DLT: Hartley 2D and RMS-sqrt(3) 3D normalization, smallest
/// eigenvector of X^T W X, de-normalization, cheirality from the median-depth
/// correspondence, Procrustes.
Pose estimate_pose_dlt(std::span<const Correspondence3D2D> corrs, const Eigen::VectorXd& weights);

/// RANSAC over minimal 6-point DLT samples, scored by reprojection error in
/// normalized image units; refits on the consensus set.
struct RansacOptions {
  double threshold = 0.02;
  int max_iterations = 1000;
  double confidence = 0.999;
};
Pose estimate_pose_ransac_dlt(std::span<const Correspondence3D2D> corrs, std::uint64_t seed,
                              const RansacOptions& options = {});

/// Weighted eight-point estimate (classical rows, Hartley normalized), mapped
/// back to the input frame; rank-2 projection applied.
Eigen::Matrix3d estimate_essential(std::span<const Correspondence2D2D> corrs,
                                   const Eigen::VectorXd& weights);

/// Relative pose (x2 = R x1 + t, |t| = 1) from E by cheirality voting over
/// the four candidates.
Pose decompose_essential(const Eigen::Matrix3d& essential,
                         std::span<const Correspondence2D2D> corrs);

Eigen::Matrix3d skew(const Eigen::Vector3d& t);

/// 2 acos |<qa, qb>|, radians (evaluated via atan2 of the relative rotation
/// for accuracy near zero).
double rotation_error(const Eigen::Matrix3d& ra, const Eigen::Matrix3d& rb);
/// |ta - tb| / |tb|.
double translation_error(const Eigen::Vector3d& ta, const Eigen::Vector3d& tb_gt);
/// Angle between two directions, sign ignored, radians.
double direction_error(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

/// Area under the recall-vs-threshold curve from 0 to the largest threshold
/// (degrees), trapezoidal over 1 degree bins, normalized by that threshold.
double map_score(std::span<const double> errors_rad, std::span<const double> thresholds_deg);

}  // namespace eigfree::geometry
