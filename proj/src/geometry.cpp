#include "eigfree/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "eigfree/linalg.hpp"
#include "eigfree/rng.hpp"

namespace eigfree::geometry {

void DataMatrix::validate() const {
  const auto d = rows.cols();
  if (d != 3 && d != 9 && d != 12)
    throw ContractViolation("DataMatrix: column count must be 3, 9 or 12, got " + std::to_string(d));
  if (rows_per_correspondence != 1 && rows_per_correspondence != 2)
    throw ContractViolation("DataMatrix: rows_per_correspondence must be 1 or 2");
  if (rows.rows() % rows_per_correspondence != 0)
    throw ContractViolation("DataMatrix: row count is not a multiple of rows_per_correspondence");
  if (!rows.allFinite()) throw ContractViolation("DataMatrix: non-finite entry");
}

Eigen::MatrixXd weighted_gram(const DataMatrix& x, const Eigen::VectorXd& weights) {
  if (weights.size() != x.correspondences())
    throw ContractViolation("weighted_gram: one weight per correspondence required");
  const int k = x.rows_per_correspondence;
  Eigen::VectorXd row_weights(x.rows.rows());
  for (Eigen::Index r = 0; r < x.rows.rows(); ++r) row_weights(r) = weights(r / k);
  Eigen::MatrixXd m = x.rows.transpose() * row_weights.asDiagonal() * x.rows;
  return 0.5 * (m + m.transpose());
}

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

Eigen::Matrix3d SimilarityTransform2D::matrix() const {
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 0) = t(1, 1) = scale;
  t.block<2, 1>(0, 2) = offset;
  return t;
}

Eigen::Matrix3d SimilarityTransform2D::inverse_matrix() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ContractViolation("SimilarityTransform2D: singular");
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 0) = t(1, 1) = 1.0 / scale;
  t.block<2, 1>(0, 2) = -offset / scale;
  return t;
}

Eigen::Matrix4d SimilarityTransform3D::matrix() const {
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topLeftCorner<3, 3>() *= scale;
  t.block<3, 1>(0, 3) = offset;
  return t;
}

Eigen::Matrix4d SimilarityTransform3D::inverse_matrix() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ContractViolation("SimilarityTransform3D: singular");
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topLeftCorner<3, 3>() /= scale;
  t.block<3, 1>(0, 3) = -offset / scale;
  return t;
}

RowForm parse_row_form(std::string_view name) {
  if (name == "paper") return RowForm::paper;
  if (name == "classical") return RowForm::classical;
  throw ContractViolation("unknown row form '" + std::string(name) + "' (expected paper|classical)");
}

std::string_view to_string(RowForm form) { return form == RowForm::paper ? "paper" : "classical"; }

DataMatrix build_essential_matrix_rows(std::span<const Correspondence2D2D> corrs, RowForm form) {
  if (corrs.size() < 8)
    throw ContractViolation("build_essential_matrix_rows: need at least 8 correspondences");
  DataMatrix x{Eigen::MatrixXd(static_cast<Eigen::Index>(corrs.size()), 9), 1};
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const auto& q = corrs[i];
    const double second = form == RowForm::paper ? q.u * q.v : q.u * q.v2;
    x.rows.row(static_cast<Eigen::Index>(i)) << q.u * q.u2, second, q.u, q.v * q.u2, q.v * q.v2, q.v,
        q.u2, q.v2, 1.0;
  }
  x.validate();
  return x;
}

Normalized2D hartley_normalize(std::span<const Eigen::Vector2d> points) {
  if (points.size() < 2) throw ContractViolation("hartley_normalize: need at least 2 points");
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  double extent = 1.0;
  for (const auto& p : points) {
    centroid += p;
    extent = std::max(extent, p.cwiseAbs().maxCoeff());
  }
  centroid /= static_cast<double>(points.size());
  double ms = 0.0;
  for (const auto& p : points) ms += (p - centroid).squaredNorm();
  const double rms = std::sqrt(ms / static_cast<double>(points.size()));
  if (!(rms > 1e-12 * extent)) throw DegenerateConfiguration("hartley_normalize: all points coincide");

  Normalized2D out;
  out.transform.scale = std::numbers::sqrt2 / rms;
  out.transform.offset = -out.transform.scale * centroid;
  out.points.reserve(points.size());
  for (const auto& p : points) out.points.push_back(out.transform.apply(p));
  return out;
}

Normalized3D normalize_points_3d(std::span<const Eigen::Vector3d> points) {
  if (points.size() < 2) throw ContractViolation("normalize_points_3d: need at least 2 points");
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  double extent = 1.0;
  for (const auto& p : points) {
    centroid += p;
    extent = std::max(extent, p.cwiseAbs().maxCoeff());
  }
  centroid /= static_cast<double>(points.size());
  double ms = 0.0;
  for (const auto& p : points) ms += (p - centroid).squaredNorm();
  const double rms = std::sqrt(ms / static_cast<double>(points.size()));
  if (!(rms > 1e-12 * extent)) throw DegenerateConfiguration("normalize_points_3d: all points coincide");

  Normalized3D out;
  out.transform.scale = std::numbers::sqrt3 / rms;
  out.transform.offset = -out.transform.scale * centroid;
  out.points.reserve(points.size());
  for (const auto& p : points) out.points.push_back(out.transform.apply(p));
  return out;
}

Eigen::VectorXd transform_gt_essential(const Eigen::Matrix3d& essential, const SimilarityTransform2D& t1,
                                       const SimilarityTransform2D& t2) {
  const Eigen::Matrix3d en = t2.inverse_matrix().transpose() * essential * t1.inverse_matrix();
  Eigen::VectorXd e = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(en.data());
  const double n = e.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ContractViolation("transform_gt_essential: zero essential matrix");
  return e / n;
}

DataMatrix build_pnp_rows(std::span<const Correspondence3D2D> corrs) {
  if (corrs.size() < 6) throw ContractViolation("build_pnp_rows: need at least 6 correspondences");
  DataMatrix x{Eigen::MatrixXd(2 * static_cast<Eigen::Index>(corrs.size()), 12), 2};
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const auto& q = corrs[i];
    const auto r = 2 * static_cast<Eigen::Index>(i);
    x.rows.row(r) << q.x, q.y, q.z, 1, 0, 0, 0, 0, -q.u * q.x, -q.u * q.y, -q.u * q.z, -q.u;
    x.rows.row(r + 1) << 0, 0, 0, 0, q.x, q.y, q.z, 1, -q.v * q.x, -q.v * q.y, -q.v * q.z, -q.v;
  }
  x.validate();
  return x;
}

namespace {

Eigen::VectorXd row_major(const Eigen::Matrix<double, 3, 4>& p) {
  Eigen::VectorXd e(12);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) e(4 * r + c) = p(r, c);
  return e;
}

Eigen::Matrix<double, 3, 4> from_row_major(const Eigen::VectorXd& e) {
  Eigen::Matrix<double, 3, 4> p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) p(r, c) = e(4 * r + c);
  return p;
}

}  // namespace

Eigen::VectorXd pnp_target_vector(const Pose& pose, const SimilarityTransform2D& t2d,
                                  const SimilarityTransform3D& t3d) {
  Eigen::Matrix<double, 3, 4> rt;
  rt << pose.rotation, pose.translation;
  const Eigen::Matrix<double, 3, 4> p = t2d.matrix() * rt * t3d.inverse_matrix();
  Eigen::VectorXd e = row_major(p);
  return e / e.norm();
}

DltEstimate dlt_pose_from_vector(const Eigen::VectorXd& e, const Correspondence3D2D& sample) {
  if (e.size() != 12 || !e.allFinite()) throw ContractViolation("dlt_pose_from_vector: expected a finite 12-vector");
  Eigen::Matrix<double, 3, 4> p = from_row_major(e);
  const Eigen::Matrix3d block = p.leftCols<3>();
  const double fro = block.norm();
  if (fro < 1e-9) throw DegenerateConfiguration("dlt_pose_from_vector: near-zero rotation block");
  const double scale = std::cbrt(std::abs(block.determinant()));
  if (!(scale > 1e-12 * fro)) throw DegenerateConfiguration("dlt_pose_from_vector: rank-deficient rotation block");
  p /= scale;
  const double depth = p.row(2).dot(Eigen::Vector4d(sample.x, sample.y, sample.z, 1.0));
  if (depth < 0.0) p = -p;
  return {p.leftCols<3>(), p.col(3)};
}

Eigen::Matrix3d procrustes_project(const Eigen::Matrix3d& m) {
  const auto svd = linalg::svd3(m);
  if (!(svd.s(1) > 1e-12 * svd.s(0)))
    throw DegenerateConfiguration("procrustes_project: rank-deficient input");
  Eigen::Vector3d d(1.0, 1.0, (svd.u * svd.v.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  return svd.u * d.asDiagonal() * svd.v.transpose();
}

Pose refine_dlt(const DltEstimate& estimate) {
  return {procrustes_project(estimate.rotation_block), estimate.translation};
}

Pose estimate_pose_dlt(std::span<const Correspondence3D2D> corrs, const Eigen::VectorXd& weights) {
  if (static_cast<Eigen::Index>(corrs.size()) != weights.size())
    throw ContractViolation("estimate_pose_dlt: one weight per correspondence required");
  std::vector<Eigen::Vector2d> image;
  std::vector<Eigen::Vector3d> world;
  image.reserve(corrs.size());
  world.reserve(corrs.size());
  for (const auto& c : corrs) {
    image.emplace_back(c.u, c.v);
    world.emplace_back(c.x, c.y, c.z);
  }
  const auto n2 = hartley_normalize(image);
  const auto n3 = normalize_points_3d(world);
  std::vector<Correspondence3D2D> normalized(corrs.size());
  for (std::size_t i = 0; i < corrs.size(); ++i)
    normalized[i] = {n3.points[i].x(), n3.points[i].y(), n3.points[i].z(), n2.points[i].x(), n2.points[i].y()};

  const auto x = build_pnp_rows(normalized);
  const auto es = linalg::sym_eig(linalg::SymMatrix::symmetrized(weighted_gram(x, weights)));
  const Eigen::Matrix<double, 3, 4> pn = from_row_major(es.smallest());
  const Eigen::Matrix<double, 3, 4> p = n2.transform.inverse_matrix() * pn * n3.transform.matrix();
  Eigen::VectorXd e = row_major(p);
  e /= e.norm();

  std::vector<std::pair<double, std::size_t>> depths(corrs.size());
  for (std::size_t i = 0; i < corrs.size(); ++i)
    depths[i] = {p.row(2).dot(Eigen::Vector4d(corrs[i].x, corrs[i].y, corrs[i].z, 1.0)), i};
  const auto mid = depths.begin() + static_cast<std::ptrdiff_t>(depths.size() / 2);
  std::nth_element(depths.begin(), mid, depths.end());
  return refine_dlt(dlt_pose_from_vector(e, corrs[mid->second]));
}

Pose estimate_pose_ransac_dlt(std::span<const Correspondence3D2D> corrs, std::uint64_t seed,
                              const RansacOptions& options) {
  const std::size_t n = corrs.size();
  if (n < 6) throw ContractViolation("estimate_pose_ransac_dlt: need at least 6 correspondences");
  Rng rng(seed);

  const auto inliers_of = [&](const Pose& pose) {
    std::vector<std::size_t> in;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector3d pc = pose.rotation * Eigen::Vector3d(corrs[i].x, corrs[i].y, corrs[i].z) + pose.translation;
      if (pc.z() <= 0.0) continue;
      const double err = std::hypot(pc.x() / pc.z() - corrs[i].u, pc.y() / pc.z() - corrs[i].v);
      if (err < options.threshold) in.push_back(i);
    }
    return in;
  };

  std::vector<std::size_t> best;
  long needed = options.max_iterations;
  for (long it = 0; it < needed && it < options.max_iterations; ++it) {
    std::vector<Correspondence3D2D> sample;
    std::vector<std::size_t> picked;
    while (picked.size() < 6) {
      const auto k = static_cast<std::size_t>(rng.below(n));
      if (std::find(picked.begin(), picked.end(), k) == picked.end()) picked.push_back(k);
    }
    for (auto k : picked) sample.push_back(corrs[k]);
    std::vector<std::size_t> in;
    try {
      in = inliers_of(estimate_pose_dlt(sample, Eigen::VectorXd::Ones(6)));
    } catch (const std::runtime_error&) {
      continue;
    }
    if (in.size() > best.size()) {
      best = std::move(in);
      const double ratio = static_cast<double>(best.size()) / static_cast<double>(n);
      const double p_all = std::pow(ratio, 6.0);
      if (p_all >= 1.0) {
        needed = 0;
      } else if (p_all > 0.0) {
        needed = static_cast<long>(std::ceil(std::log(1.0 - options.confidence) / std::log(1.0 - p_all)));
      }
    }
  }
  if (best.size() < 6) throw DegenerateConfiguration("estimate_pose_ransac_dlt: no consensus set");
  std::vector<Correspondence3D2D> consensus;
  for (auto k : best) consensus.push_back(corrs[k]);
  return estimate_pose_dlt(consensus, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(consensus.size())));
}

Eigen::Matrix3d estimate_essential(std::span<const Correspondence2D2D> corrs, const Eigen::VectorXd& weights) {
  if (static_cast<Eigen::Index>(corrs.size()) != weights.size())
    throw ContractViolation("estimate_essential: one weight per correspondence required");
  std::vector<Eigen::Vector2d> a, b;
  for (const auto& c : corrs) {
    a.emplace_back(c.u, c.v);
    b.emplace_back(c.u2, c.v2);
  }
  const auto na = hartley_normalize(a);
  const auto nb = hartley_normalize(b);
  std::vector<Correspondence2D2D> normalized(corrs.size());
  for (std::size_t i = 0; i < corrs.size(); ++i)
    normalized[i] = {na.points[i].x(), na.points[i].y(), nb.points[i].x(), nb.points[i].y()};
  const auto x = build_essential_matrix_rows(normalized, RowForm::classical);
  const auto es = linalg::sym_eig(linalg::SymMatrix::symmetrized(weighted_gram(x, weights)));
  const Eigen::VectorXd e = es.smallest();
  const Eigen::Matrix3d en = Eigen::Map<const Eigen::Matrix3d>(e.data());
  const Eigen::Matrix3d raw = nb.transform.matrix().transpose() * en * na.transform.matrix();
  const auto svd = linalg::svd3(raw);
  const double s = 0.5 * (svd.s(0) + svd.s(1));
  const Eigen::Matrix3d essential = svd.u * Eigen::Vector3d(s, s, 0.0).asDiagonal() * svd.v.transpose();
  return essential / essential.norm();
}

Eigen::Matrix3d skew(const Eigen::Vector3d& t) {
  Eigen::Matrix3d s;
  s << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
  return s;
}

Pose decompose_essential(const Eigen::Matrix3d& essential, std::span<const Correspondence2D2D> corrs) {
  if (!essential.allFinite()) throw ContractViolation("decompose_essential: non-finite matrix");
  if (corrs.empty()) throw ContractViolation("decompose_essential: no correspondences");
  if (essential.norm() <= 1e-12)
    throw DegenerateConfiguration("decompose_essential: vanishing essential matrix (zero baseline)");
  auto svd = linalg::svd3(essential);
  if (svd.u.determinant() < 0.0) svd.u = -svd.u;
  if (svd.v.determinant() < 0.0) svd.v = -svd.v;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;

  const Eigen::Matrix3d rotations[2] = {svd.u * w * svd.v.transpose(), svd.u * w.transpose() * svd.v.transpose()};
  const Eigen::Vector3d base = svd.u.col(2).normalized();
  const Eigen::Vector3d translations[2] = {base, -base};

  Pose best;
  std::size_t best_count = 0;
  for (const auto& r : rotations) {
    for (const auto& t : translations) {
      std::size_t count = 0;
      for (const auto& c : corrs) {
        Eigen::Matrix<double, 3, 2> a;
        a.col(0) = r * Eigen::Vector3d(c.u, c.v, 1.0);
        a.col(1) = -Eigen::Vector3d(c.u2, c.v2, 1.0);
        const Eigen::Vector2d depth = a.colPivHouseholderQr().solve(-t);
        if (depth(0) > 0.0 && depth(1) > 0.0) ++count;
      }
      if (count > best_count) {
        best_count = count;
        best = {r, t};
      }
    }
  }
  if (2 * best_count <= corrs.size())
    throw DegenerateConfiguration("decompose_essential: no candidate puts a majority of points in front");
  return best;
}

double rotation_error(const Eigen::Matrix3d& ra, const Eigen::Matrix3d& rb) {
  const Eigen::Quaterniond qa(ra), qb(rb);
  const Eigen::Quaterniond rel = qa.conjugate() * qb;
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

double translation_error(const Eigen::Vector3d& ta, const Eigen::Vector3d& tb_gt) {
  const double n = tb_gt.norm();
  if (!(n > 0.0)) throw ContractViolation("translation_error: zero ground-truth translation");
  return (ta - tb_gt).norm() / n;
}

double direction_error(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), std::abs(a.dot(b)));
}

double map_score(std::span<const double> errors_rad, std::span<const double> thresholds_deg) {
  if (errors_rad.empty()) throw ContractViolation("map_score: empty error list");
  if (thresholds_deg.empty()) throw ContractViolation("map_score: empty threshold list");
  if (!std::is_sorted(thresholds_deg.begin(), thresholds_deg.end()))
    throw ContractViolation("map_score: thresholds must be ascending");
  const double max_deg = thresholds_deg.back();
  if (!(max_deg > 0.0)) throw ContractViolation("map_score: largest threshold must be positive");

  std::vector<double> deg(errors_rad.size());
  std::transform(errors_rad.begin(), errors_rad.end(), deg.begin(),
                 [](double e) { return e * 180.0 / std::numbers::pi; });
  const auto recall = [&](double th) {
    const auto hits = std::count_if(deg.begin(), deg.end(), [&](double d) { return d <= th; });
    return static_cast<double>(hits) / static_cast<double>(deg.size());
  };

  double area = 0.0;
  double prev_x = 0.0;
  double prev_y = recall(0.0);
  for (double x = 1.0; prev_x < max_deg; x += 1.0) {
    const double cur_x = std::min(x, max_deg);
    const double cur_y = recall(cur_x);
    area += 0.5 * (prev_y + cur_y) * (cur_x - prev_x);
    prev_x = cur_x;
    prev_y = cur_y;
  }
  return area / max_deg;
}

}  // namespace eigfree::geometry
