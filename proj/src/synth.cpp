#include "eigfree/synth.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "eigfree/format.hpp"

namespace eigfree::synth {

namespace {

constexpr long kMaxDraws = 10'000'000;

}  // namespace

PlaneScene gen_plane(int n_in, int n_out, std::uint64_t seed) {
  if (n_in < 3) throw ContractViolation("gen_plane: need at least 3 inliers");
  if (n_out < 0) throw ContractViolation("gen_plane: negative outlier count");
  Rng rng(seed);
  PlaneScene s;
  const double sigma = 0.001;
  for (int i = 0; i < n_in; ++i) {
    const double x = rng.uniform(0.0, 40.0);
    const double y = rng.uniform(0.0, 2.0);
    double noise = rng.normal(0.0, sigma);
    while (std::abs(noise) > 5.0 * sigma) noise = rng.normal(0.0, sigma);
    s.points.emplace_back(x, y, 1.0 + noise);
    s.inlier_mask.push_back(true);
  }
  for (int i = 0; i < n_out; ++i) {
    const double x = rng.uniform(0.0, 40.0);
    const double y = rng.uniform(0.0, 2.0);
    s.points.emplace_back(x, y, rng.normal(50.0, 5.0));
    s.inlier_mask.push_back(false);
  }
  return s;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector4d q;
  do {
    for (int i = 0; i < 4; ++i) q(i) = rng.normal();
  } while (q.norm() < 1e-6);
  q.normalize();
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).toRotationMatrix();
}

namespace {

Eigen::Vector3d sample_box(Rng& rng) {
  const double x = rng.uniform(-2.0, 2.0);
  const double y = rng.uniform(-2.0, 2.0);
  const double z = rng.uniform(4.0, 8.0);
  return {x, y, z};
}

Eigen::Vector2d uniform_pixel(Rng& rng, const Camera& c) {
  const double u = rng.uniform(0.0, c.width);
  const double v = rng.uniform(0.0, c.height);
  return {u, v};
}

Eigen::Vector2d noisy(Rng& rng, const Eigen::Vector2d& px, double sigma) {
  if (sigma == 0.0) return px;
  const double du = rng.normal(0.0, sigma);
  const double dv = rng.normal(0.0, sigma);
  return px + Eigen::Vector2d(du, dv);
}

std::vector<bool> outlier_layout(Rng& rng, int n, int n_out) {
  std::vector<bool> mask(static_cast<std::size_t>(n), true);
  const auto perm = rng.permutation(static_cast<std::size_t>(n));
  for (int k = 0; k < n_out; ++k) mask[perm[static_cast<std::size_t>(k)]] = false;
  return mask;
}

}  // namespace

PnPScene gen_pnp(int n_points, int n_outliers, double noise_px, std::uint64_t seed, const Camera& camera) {
  if (n_outliers < 0 || n_outliers >= n_points)
    throw ContractViolation("gen_pnp: outlier count must lie in [0, n_points)");
  if (n_points < 6 + n_outliers) throw ContractViolation("gen_pnp: need at least 6 inliers");
  if (!(noise_px >= 0.0)) throw ContractViolation("gen_pnp: noise must be nonnegative");
  Rng rng(seed);

  std::vector<Eigen::Vector3d> cam_points;
  for (long draws = 0; static_cast<int>(cam_points.size()) < n_points; ++draws) {
    if (draws > kMaxDraws) throw DegenerateConfiguration("gen_pnp: camera sees no sampled points");
    const Eigen::Vector3d p = sample_box(rng);
    if (camera.inside(camera.project(p))) cam_points.push_back(p);
  }
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : cam_points) centroid += p;
  centroid /= static_cast<double>(n_points);

  PnPScene s;
  s.camera = camera;
  s.pose_gt.rotation = random_rotation(rng);
  s.pose_gt.translation = centroid;
  s.inlier_mask = outlier_layout(rng, n_points, n_outliers);
  for (int i = 0; i < n_points; ++i) {
    const Eigen::Vector3d& pc = cam_points[static_cast<std::size_t>(i)];
    const Eigen::Vector3d world = s.pose_gt.rotation.transpose() * (pc - centroid);
    const Eigen::Vector2d px = s.inlier_mask[static_cast<std::size_t>(i)]
                                   ? noisy(rng, camera.project(pc), noise_px)
                                   : uniform_pixel(rng, camera);
    const Eigen::Vector2d n = camera.to_normalized(px);
    s.points3d.push_back(world);
    s.pixels.push_back(px);
    s.correspondences.push_back({world.x(), world.y(), world.z(), n.x(), n.y()});
  }
  return s;
}

EpipolarScene gen_epipolar(int n_points, int n_outliers, double noise_px, std::uint64_t seed,
                           const EpipolarConfig& cfg) {
  if (n_outliers < 0 || n_outliers >= n_points)
    throw ContractViolation("gen_epipolar: outlier count must lie in [0, n_points)");
  if (n_points < 8 + n_outliers) throw ContractViolation("gen_epipolar: need at least 8 inliers");
  if (!(noise_px >= 0.0)) throw ContractViolation("gen_epipolar: noise must be nonnegative");
  if (!(cfg.baseline >= 1e-6)) throw DegenerateConfiguration("gen_epipolar: baseline below 1e-6");
  Rng rng(seed);
  const Camera& cam = cfg.camera;

  Eigen::Vector3d axis;
  do {
    for (int i = 0; i < 3; ++i) axis(i) = rng.normal();
  } while (axis.norm() < 1e-6);
  const double angle = rng.uniform(0.0, cfg.max_rotation_deg) * std::numbers::pi / 180.0;
  Eigen::Vector3d dir;
  do {
    for (int i = 0; i < 3; ++i) dir(i) = rng.normal();
  } while (dir.norm() < 1e-6);

  EpipolarScene s;
  s.pose2.rotation = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  s.pose2.translation = cfg.baseline * dir.normalized();
  const Eigen::Matrix3d e = geometry::skew(s.pose2.translation) * s.pose2.rotation;
  s.e_gt = e / e.norm();

  std::vector<Eigen::Vector2d> px1, px2;
  for (long draws = 0; static_cast<int>(s.points3d.size()) < n_points; ++draws) {
    if (draws > kMaxDraws) throw DegenerateConfiguration("gen_epipolar: no points visible in both views");
    const Eigen::Vector3d p = sample_box(rng);
    const Eigen::Vector3d q = s.pose2.rotation * p + s.pose2.translation;
    if (q.z() <= 0.1) continue;
    const Eigen::Vector2d a = cam.project(p);
    const Eigen::Vector2d b = cam.project(q);
    if (!cam.inside(a) || !cam.inside(b)) continue;
    s.points3d.push_back(p);
    px1.push_back(a);
    px2.push_back(b);
  }

  s.inlier_mask = outlier_layout(rng, n_points, n_outliers);
  for (int i = 0; i < n_points; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Eigen::Vector2d a = cam.to_normalized(noisy(rng, px1[k], noise_px));
    const Eigen::Vector2d b =
        cam.to_normalized(s.inlier_mask[k] ? noisy(rng, px2[k], noise_px) : uniform_pixel(rng, cam));
    s.correspondences.push_back({a.x(), a.y(), b.x(), b.y()});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Text serialization

namespace {

void write_values(std::ostream& out, std::string_view key, std::initializer_list<double> values) {
  out << key;
  for (double v : values) out << ' ' << fmt_double(v);
  out << '\n';
}

void write_matrix(std::ostream& out, std::string_view key, const Eigen::Matrix3d& m) {
  write_values(out, key, {m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2), m(2, 0), m(2, 1), m(2, 2)});
}

struct Parsed {
  std::string kind;
  std::vector<std::pair<std::string, std::vector<double>>> header;
  std::vector<std::vector<double>> rows;

  const std::vector<double>& get(std::string_view key, std::size_t count) const {
    for (const auto& [k, v] : header)
      if (k == key) {
        if (v.size() != count)
          throw std::runtime_error("scene: header '" + k + "' expects " + std::to_string(count) + " values");
        return v;
      }
    throw std::runtime_error("scene: missing header '" + std::string(key) + "'");
  }
};

Parsed parse(std::istream& in, std::string_view expected_kind, std::size_t fields) {
  Parsed p;
  std::string line;
  bool seen_magic = false;
  long expected_rows = -1;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (!seen_magic) {
      int version = 0;
      if (key != "eigfree-scene" || !(ls >> version >> p.kind) || version != 1)
        throw std::runtime_error("scene: missing 'eigfree-scene 1 <kind>' header");
      if (p.kind != expected_kind)
        throw std::runtime_error("scene: expected kind '" + std::string(expected_kind) + "', got '" + p.kind + "'");
      seen_magic = true;
      continue;
    }
    if (expected_rows < 0) {
      if (key == "points") {
        if (!(ls >> expected_rows) || expected_rows < 0) throw std::runtime_error("scene: bad point count");
        continue;
      }
      std::vector<double> values;
      for (std::string tok; ls >> tok;) values.push_back(parse_double(tok));
      p.header.emplace_back(key, std::move(values));
      continue;
    }
    std::vector<double> row{parse_double(key)};
    for (std::string tok; ls >> tok;) row.push_back(parse_double(tok));
    if (row.size() != fields)
      throw std::runtime_error("scene: data line has " + std::to_string(row.size()) + " fields, expected " +
                               std::to_string(fields));
    p.rows.push_back(std::move(row));
  }
  if (!seen_magic) throw std::runtime_error("scene: empty input");
  if (expected_rows < 0 || static_cast<long>(p.rows.size()) != expected_rows)
    throw std::runtime_error("scene: point count does not match the number of data lines");
  return p;
}

Eigen::Matrix3d matrix_from(const std::vector<double>& v) {
  Eigen::Matrix3d m;
  m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  return m;
}

}  // namespace

void write_scene(std::ostream& out, const PlaneScene& s) {
  out << "eigfree-scene 1 plane\n# fields: inlier x y z\n";
  write_values(out, "normal", {s.e_gt.x(), s.e_gt.y(), s.e_gt.z()});
  out << "points " << s.points.size() << '\n';
  for (std::size_t i = 0; i < s.points.size(); ++i)
    out << (s.inlier_mask[i] ? 1 : 0) << ' ' << fmt_double(s.points[i].x()) << ' ' << fmt_double(s.points[i].y())
        << ' ' << fmt_double(s.points[i].z()) << '\n';
}

void write_scene(std::ostream& out, const PnPScene& s) {
  out << "eigfree-scene 1 pnp\n# fields: inlier x y z u v px py (u, v normalized; px, py in pixels)\n";
  write_values(out, "camera", {s.camera.focal, s.camera.cx, s.camera.cy, s.camera.width, s.camera.height});
  write_matrix(out, "rotation", s.pose_gt.rotation);
  write_values(out, "translation", {s.pose_gt.translation.x(), s.pose_gt.translation.y(), s.pose_gt.translation.z()});
  out << "points " << s.correspondences.size() << '\n';
  for (std::size_t i = 0; i < s.correspondences.size(); ++i) {
    const auto& c = s.correspondences[i];
    out << (s.inlier_mask[i] ? 1 : 0);
    for (double v : {c.x, c.y, c.z, c.u, c.v, s.pixels[i].x(), s.pixels[i].y()}) out << ' ' << fmt_double(v);
    out << '\n';
  }
}

void write_scene(std::ostream& out, const EpipolarScene& s) {
  out << "eigfree-scene 1 epipolar\n# fields: inlier u v u2 v2 X Y Z (normalized coordinates; X in the first camera)\n";
  write_matrix(out, "rotation", s.pose2.rotation);
  write_values(out, "translation", {s.pose2.translation.x(), s.pose2.translation.y(), s.pose2.translation.z()});
  write_matrix(out, "essential", s.e_gt);
  out << "points " << s.correspondences.size() << '\n';
  for (std::size_t i = 0; i < s.correspondences.size(); ++i) {
    const auto& c = s.correspondences[i];
    out << (s.inlier_mask[i] ? 1 : 0);
    for (double v : {c.u, c.v, c.u2, c.v2, s.points3d[i].x(), s.points3d[i].y(), s.points3d[i].z()})
      out << ' ' << fmt_double(v);
    out << '\n';
  }
}

PlaneScene read_plane_scene(std::istream& in) {
  const Parsed p = parse(in, "plane", 4);
  PlaneScene s;
  const auto& n = p.get("normal", 3);
  s.e_gt = {n[0], n[1], n[2]};
  for (const auto& r : p.rows) {
    s.inlier_mask.push_back(r[0] != 0.0);
    s.points.emplace_back(r[1], r[2], r[3]);
  }
  return s;
}

PnPScene read_pnp_scene(std::istream& in) {
  const Parsed p = parse(in, "pnp", 8);
  PnPScene s;
  const auto& c = p.get("camera", 5);
  s.camera = {c[0], c[1], c[2], c[3], c[4]};
  s.pose_gt.rotation = matrix_from(p.get("rotation", 9));
  const auto& t = p.get("translation", 3);
  s.pose_gt.translation = {t[0], t[1], t[2]};
  for (const auto& r : p.rows) {
    s.inlier_mask.push_back(r[0] != 0.0);
    s.points3d.emplace_back(r[1], r[2], r[3]);
    s.correspondences.push_back({r[1], r[2], r[3], r[4], r[5]});
    s.pixels.emplace_back(r[6], r[7]);
  }
  return s;
}

EpipolarScene read_epipolar_scene(std::istream& in) {
  const Parsed p = parse(in, "epipolar", 8);
  EpipolarScene s;
  s.pose2.rotation = matrix_from(p.get("rotation", 9));
  const auto& t = p.get("translation", 3);
  s.pose2.translation = {t[0], t[1], t[2]};
  s.e_gt = matrix_from(p.get("essential", 9));
  for (const auto& r : p.rows) {
    s.inlier_mask.push_back(r[0] != 0.0);
    s.correspondences.push_back({r[1], r[2], r[3], r[4]});
    s.points3d.emplace_back(r[5], r[6], r[7]);
  }
  return s;
}

}  // namespace eigfree::synth
