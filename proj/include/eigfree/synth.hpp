#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eigfree/errors.hpp"
#include "eigfree/geometry.hpp"
#include "eigfree/rng.hpp"

namespace eigfree::synth {

/// Pinhole camera in pixels; image spans [0, width] x [0, height].
struct Camera {
  double focal = 800.0;
  double cx = 320.0;
  double cy = 240.0;
  double width = 640.0;
  double height = 480.0;

  Eigen::Vector2d to_normalized(const Eigen::Vector2d& px) const {
    return {(px.x() - cx) / focal, (px.y() - cy) / focal};
  }
  Eigen::Vector2d project(const Eigen::Vector3d& p_cam) const {
    return {focal * p_cam.x() / p_cam.z() + cx, focal * p_cam.y() / p_cam.z() + cy};
  }
  bool inside(const Eigen::Vector2d& px) const {
    return px.x() >= 0.0 && px.x() <= width && px.y() >= 0.0 && px.y() <= height;
  }
};

struct PlaneScene {
  std::vector<Eigen::Vector3d> points;  // inliers first, then outliers
  std::vector<bool> inlier_mask;
  Eigen::Vector3d e_gt = Eigen::Vector3d::UnitZ();
};

/// Inliers: x ~ U[0,40], y ~ U[0,2], z = 1 + N(0, 0.001) truncated at 5 sigma.
/// Outliers: same x, y ranges, z ~ N(50, 5).
PlaneScene gen_plane(int n_in, int n_out, std::uint64_t seed);

struct PnPScene {
  std::vector<Eigen::Vector3d> points3d;   // world frame, centered on the origin
  std::vector<Eigen::Vector2d> pixels;
  std::vector<geometry::Correspondence3D2D> correspondences;  // normalized image coordinates
  geometry::Pose pose_gt;                  // p_cam = R p_world + t
  std::vector<bool> inlier_mask;
  Camera camera;
};

/// Points uniform in [-2,2]^2 x [4,8] in the camera frame (kept only if they
/// project inside the image), random rotation, t = centroid of the camera-frame
/// points. Inliers get N(0, noise_px) pixel noise; outliers are reassigned to
/// uniform positions in the image.
PnPScene gen_pnp(int n_points, int n_outliers, double noise_px, std::uint64_t seed, const Camera& camera = {});

struct EpipolarConfig {
  double baseline = 2.0;
  double max_rotation_deg = 10.0;
  Camera camera;
};

struct EpipolarScene {
  std::vector<Eigen::Vector3d> points3d;  // first camera frame
  geometry::Pose pose1;                   // identity
  geometry::Pose pose2;                   // x2 = R x1 + t
  std::vector<geometry::Correspondence2D2D> correspondences;
  Eigen::Matrix3d e_gt;                   // [t]x R, unit Frobenius norm
  std::vector<bool> inlier_mask;
};

/// Two views of points in [-2,2]^2 x [4,8] (first camera frame) visible in
/// both images; rotation about a random axis by up to max_rotation_deg,
/// translation of length `baseline` in a random direction. Outliers get a
/// uniformly re-sampled second-view point.
EpipolarScene gen_epipolar(int n_points, int n_outliers, double noise_px, std::uint64_t seed,
                           const EpipolarConfig& cfg = {});

Eigen::Matrix3d random_rotation(Rng& rng);

/// Line-oriented text format:
///   eigfree-scene 1 <kind>
///   # comment lines
///   key value...          (header lines)
///   points <N>
///   <N data lines>, one correspondence per line, first field the inlier flag
void write_scene(std::ostream& out, const PlaneScene& s);
void write_scene(std::ostream& out, const PnPScene& s);
void write_scene(std::ostream& out, const EpipolarScene& s);
PlaneScene read_plane_scene(std::istream& in);
PnPScene read_pnp_scene(std::istream& in);
EpipolarScene read_epipolar_scene(std::istream& in);

}  // namespace eigfree::synth
