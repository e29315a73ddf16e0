// Acceptance checks 1-8. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. CSVs of every run land under --out; criterion 8
// re-executes the runs into a second directory and compares bytes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eigfree/geometry.hpp"
#include "eigfree/harness.hpp"
#include "eigfree/linalg.hpp"
#include "eigfree/loss.hpp"
#include "eigfree/net.hpp"
#include "eigfree/synth.hpp"
#include "test_util.hpp"

using namespace eigfree;
using namespace eigfree::harness;
namespace fs = std::filesystem;
using testutil::central_diff;
using testutil::gaussian;
using testutil::grad_rel_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int digits = 4) {
  std::ostringstream ss;
  ss << std::setprecision(digits) << x;
  return ss.str();
}

std::string full(double x) {
  std::ostringstream ss;
  ss << std::setprecision(17) << x;
  return ss.str();
}

std::string lr_tag(double lr) {
  std::ostringstream ss;
  ss << lr;
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. Gradient oracles

Outcome criterion_fd() {
  Rng rng(2024);
  double worst_loss = 0, worst_plane = 0, worst_net = 0, worst_base = 0;
  int instances = 0;

  struct Shape {
    int dim, rows_per;
  };
  for (Shape s : {Shape{3, 1}, Shape{9, 1}, Shape{12, 2}}) {
    for (int k = 0; k < 50; ++k) {
      const int c = static_cast<int>(rng.range(s.dim + 2, 30));
      const geometry::DataMatrix x{gaussian(rng, c * s.rows_per, s.dim), s.rows_per};
      const loss::WeightState w(gaussian(rng, c, 1, 2.0), s.rows_per);
      const auto e = loss::TargetVector::normalized(gaussian(rng, s.dim, 1));
      const double t = loss::eigfree_loss(x, w, e, {1.0, 1.0}).trace;
      const loss::LossConfig cfg{rng.uniform(0.1, 10.0), rng.uniform(0.3, 3.0) / t};
      const auto numeric = central_diff(
          [&](const Eigen::VectorXd& l) {
            return loss::eigfree_loss(x, loss::WeightState(l, s.rows_per), e, cfg).total;
          },
          w.logits());
      worst_loss = std::max(worst_loss, grad_rel_error(loss::eigfree_grad_logits(x, w, e, cfg), numeric));
      ++instances;
    }
  }

  for (int k = 0; k < 50; ++k) {
    const int n = static_cast<int>(rng.range(5, 40));
    std::vector<Eigen::Vector3d> pts(static_cast<std::size_t>(n));
    for (auto& q : pts) q = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal(0, 0.3));
    const loss::WeightState w(gaussian(rng, n, 1, 2.0));
    const auto e = loss::TargetVector::normalized(gaussian(rng, 3, 1));
    const double t = loss::plane_loss(pts, w, e, {1.0, 1.0}).trace;
    const loss::LossConfig cfg{rng.uniform(0.1, 10.0), rng.uniform(0.3, 3.0) / t};
    const auto numeric = central_diff(
        [&](const Eigen::VectorXd& l) { return loss::plane_loss(pts, loss::WeightState(l), e, cfg).total; },
        w.logits());
    worst_plane = std::max(worst_plane, grad_rel_error(loss::plane_grad_logits(pts, w, e, cfg), numeric));
    ++instances;
  }

  for (int done = 0; done < 50;) {
    const net::WeightNet base(done % 2 ? 5 : 4, rng.next());
    const Eigen::MatrixXd f = gaussian(rng, static_cast<Eigen::Index>(rng.range(8, 40)), base.input_dim());
    const Eigen::VectorXd gw = gaussian(rng, f.rows(), 1);
    net::WeightNet::Cache cache;
    base.forward(f, &cache);
    // Stay clear of ReLU kinks, where central differences straddle two pieces.
    double margin = cache.logits.cwiseAbs().minCoeff();
    for (const auto& z : cache.normalized) margin = std::min(margin, z.cwiseAbs().minCoeff());
    if (margin < 1e-3) continue;
    const Eigen::VectorXd analytic = base.backward(cache, gw);
    net::WeightNet probe = base;
    const double h = 1e-5;
    for (int j = 0; j < 20; ++j) {
      const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(probe.param_count())));
      const double p0 = probe.params()(i);
      probe.params()(i) = p0 + h;
      const double up = gw.dot(probe.forward(f));
      probe.params()(i) = p0 - h;
      const double dn = gw.dot(probe.forward(f));
      probe.params()(i) = p0;
      const double scale = std::max(std::abs(analytic(i)), analytic.cwiseAbs().maxCoeff());
      worst_net = std::max(worst_net, std::abs((up - dn) / (2 * h) - analytic(i)) / scale);
    }
    ++done;
    ++instances;
  }

  for (Shape s : {Shape{3, 1}, Shape{9, 1}, Shape{12, 2}}) {
    for (int done = 0; done < 50;) {
      const int c = static_cast<int>(rng.range(s.dim + 2, 30));
      const geometry::DataMatrix x{gaussian(rng, c * s.rows_per, s.dim), s.rows_per};
      const loss::WeightState w(gaussian(rng, c, 1, 2.0), s.rows_per);
      const auto e = loss::TargetVector::normalized(gaussian(rng, s.dim, 1));
      const auto es = linalg::sym_eig(linalg::SymMatrix::symmetrized(geometry::weighted_gram(x, w.weights())));
      // The baseline is only differentiable away from repeated eigenvalues
      // and from the sign switch inside min |e_min -+ e|.
      if (linalg::min_eigen_gap(es.values) < 1e-3 * es.values(0)) continue;
      if (std::abs(es.smallest().dot(e.vector())) < 0.1) continue;
      const auto numeric = central_diff(
          [&](const Eigen::VectorXd& l) {
            return loss::eig_baseline_loss_grad(x, loss::WeightState(l, s.rows_per), e).loss;
          },
          w.logits());
      worst_base = std::max(worst_base, grad_rel_error(loss::eig_baseline_loss_grad(x, w, e).grad_logits, numeric));
      ++done;
      ++instances;
    }
  }

  const bool ok = worst_loss <= 1e-5 && worst_plane <= 1e-5 && worst_net <= 1e-4 && worst_base <= 1e-4;
  return {ok, std::to_string(instances) + " instances; max rel err eigfree " + fmt(worst_loss, 3) + " plane " +
                  fmt(worst_plane, 3) + " (tol 1e-5), net " + fmt(worst_net, 3) + " baseline " +
                  fmt(worst_base, 3) + " (tol 1e-4)"};
}

// ---------------------------------------------------------------------------
// 2. Plane fitting, one outlier

Outcome criterion_plane(const fs::path& dir) {
  PlaneConfig cfg;  // 100 inliers, 1 outlier, adam, 5000 iterations
  const LrSweep sweep = run_plane_lr_sweep(cfg);
  for (const auto& t : sweep.traces) emit_csv(t, dir / ("plane_eigfree_adam_lr" + lr_tag(t.header.lr) + ".csv"));
  const Trace& best = sweep.traces[sweep.best];
  emit_weights_csv(best, dir / "plane_eigfree_adam_best_weights.csv");

  bool ok = !best.errored;
  const double outlier_w = best.final_weights(100);
  const double min_inlier = best.final_weights.head(100).minCoeff();
  ok = ok && best.final_error_deg < 0.5 && outlier_w < 0.1 && min_inlier > 0.5 && best.switching_events == 0;
  std::string detail = "eigfree adam best lr " + lr_tag(best.header.lr) + ": error " +
                       fmt(best.final_error_deg) + " deg, outlier w " + fmt(outlier_w) + ", min inlier w " +
                       fmt(min_inlier) + ", rank changes " + std::to_string(best.rank_changes) +
                       ", switching events " + std::to_string(best.switching_events) + "; baseline gd 1e5 iters:";

  PlaneConfig base = cfg;
  base.method = Method::eig_svd_baseline;
  base.optimizer = optim::Optimizer::gd;
  base.iters = 100000;
  base.record_every = 1000;
  for (double lr : kLrGrid) {
    base.lr = lr;
    const Trace t = run_plane_experiment(base);
    emit_csv(t, dir / ("plane_baseline_gd_lr" + lr_tag(lr) + ".csv"));
    const bool failed = t.errored || !std::isfinite(t.final_error_deg) || t.final_error_deg > 5.0;
    ok = ok && failed;
    detail += " " + (t.errored ? std::string("err") : fmt(t.final_error_deg, 3));
  }
  return {ok, detail + " deg (all must exceed 5)"};
}

// ---------------------------------------------------------------------------
// 3. Ten outliers

int misclassified(const Trace& t) {
  int wrong = 0;
  for (Eigen::Index i = 0; i < t.final_weights.size(); ++i)
    wrong += (t.final_weights(i) > 0.5) != t.inlier_mask[static_cast<std::size_t>(i)];
  return wrong;
}

Outcome criterion_multi_outlier(const fs::path& dir) {
  PlaneConfig cfg;
  cfg.n_outliers = 10;
  // Judged at convergence: at 5000 iterations the largest lr still holds one
  // inlier near the centroid down from the early, outlier-shifted mean.
  cfg.iters = 20000;
  cfg.record_every = 100;
  const LrSweep ef = run_plane_lr_sweep(cfg);
  for (const auto& t : ef.traces) emit_csv(t, dir / ("plane10_eigfree_adam_lr" + lr_tag(t.header.lr) + ".csv"));
  const Trace& efb = ef.traces[ef.best];
  emit_weights_csv(efb, dir / "plane10_eigfree_weights.csv");

  cfg.method = Method::eig_svd_baseline;
  const LrSweep bl = run_plane_lr_sweep(cfg);
  for (const auto& t : bl.traces) emit_csv(t, dir / ("plane10_baseline_adam_lr" + lr_tag(t.header.lr) + ".csv"));
  const Trace& blb = bl.traces[bl.best];
  emit_weights_csv(blb, dir / "plane10_baseline_weights.csv");

  const int ef_wrong = efb.errored ? -1 : misclassified(efb);
  const bool bl_failed = blb.errored || !blb.final_weights.allFinite() || misclassified(blb) >= 1;
  const std::string bl_text = blb.errored ? "errored" : std::to_string(misclassified(blb)) + " misclassified";
  return {ef_wrong == 0 && bl_failed, "eigfree (lr " + lr_tag(efb.header.lr) + ") " + std::to_string(ef_wrong) +
                                          "/110 misclassified; baseline adam (lr " + lr_tag(blb.header.lr) +
                                          ") " + bl_text};
}

// ---------------------------------------------------------------------------
// 4. Rank of the target-aligned eigenvector

Outcome criterion_rank() {
  const auto scene = synth::gen_plane(100, 1, 0);
  const loss::TargetVector e(scene.e_gt);
  auto rank = [&](const Eigen::VectorXd& w) {
    return loss::probe_spectrum(geometry::weighted_gram(loss::plane_data_matrix(scene.points, w), w), e)
        .smallest_index_of_gt;
  };
  Eigen::VectorXd indicator = Eigen::VectorXd::Ones(101);
  indicator(100) = 0.0;
  const int uniform = rank(Eigen::VectorXd::Ones(101));
  const int oracle = rank(indicator);
  return {uniform != 2 && oracle == 2, "uniform weights rank " + std::to_string(uniform) +
                                           " (must differ from 2), indicator weights rank " +
                                           std::to_string(oracle) + " (must be 2)"};
}

// ---------------------------------------------------------------------------
// 5. PnP robustness sweep

Outcome criterion_pnp(const fs::path& dir) {
  PnPSweepConfig cfg;
  const SweepResult r = run_pnp_sweep(cfg);
  emit_csv(r, dir / "pnp_sweep.csv");
  bool ok = true;
  std::string ef = "eigfree rot/trans:", dlt = "dlt:";
  for (const auto& row : r.rows) {
    const std::string cell = " " + std::to_string(row.outlier_count) + "=" + fmt(row.rotation_error_deg, 3) + "/" +
                             fmt(row.translation_error_norm, 3);
    if (row.method == "eigfree") {
      ef += cell;
      ok = ok && row.failures == 0 && row.rotation_error_deg < 1.0 && row.translation_error_norm < 0.01;
    } else if (row.method == "dlt") {
      dlt += cell;
      if (row.outlier_count >= 70)
        ok = ok && (row.failures > 0 || (row.rotation_error_deg > 1.0 && row.translation_error_norm > 0.01));
    }
  }
  return {ok, ef + "; " + dlt};
}

// ---------------------------------------------------------------------------
// 6. Noise-free exactness

Outcome criterion_exact() {
  double dlt_err = 0, ess_err = 0, pnp_res = 0, ess_res = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = synth::gen_pnp(200, 0, 0.0, seed);
    const auto pose = geometry::estimate_pose_dlt(s.correspondences, Eigen::VectorXd::Ones(200));
    dlt_err = std::max({dlt_err, geometry::rotation_error(pose.rotation, s.pose_gt.rotation),
                        geometry::direction_error(pose.translation, s.pose_gt.translation)});

    std::vector<Eigen::Vector2d> image;
    std::vector<Eigen::Vector3d> world;
    for (const auto& c : s.correspondences) image.emplace_back(c.u, c.v), world.emplace_back(c.x, c.y, c.z);
    const auto n2 = geometry::hartley_normalize(image);
    const auto n3 = geometry::normalize_points_3d(world);
    std::vector<geometry::Correspondence3D2D> nc(image.size());
    for (std::size_t i = 0; i < image.size(); ++i)
      nc[i] = {n3.points[i].x(), n3.points[i].y(), n3.points[i].z(), n2.points[i].x(), n2.points[i].y()};
    const Eigen::VectorXd e = geometry::pnp_target_vector(s.pose_gt, n2.transform, n3.transform).normalized();
    pnp_res = std::max(pnp_res, (geometry::build_pnp_rows(nc).rows * e).cwiseAbs().maxCoeff());

    const auto ep = synth::gen_epipolar(100, 0, 0.0, seed);
    const auto ess = geometry::estimate_essential(ep.correspondences, Eigen::VectorXd::Ones(100));
    const auto rel = geometry::decompose_essential(ess, ep.correspondences);
    ess_err = std::max({ess_err, geometry::rotation_error(rel.rotation, ep.pose2.rotation),
                        geometry::direction_error(rel.translation, ep.pose2.translation)});

    std::vector<Eigen::Vector2d> a, b;
    for (const auto& c : ep.correspondences) a.emplace_back(c.u, c.v), b.emplace_back(c.u2, c.v2);
    const auto na = geometry::hartley_normalize(a), nb = geometry::hartley_normalize(b);
    std::vector<geometry::Correspondence2D2D> n;
    for (std::size_t i = 0; i < a.size(); ++i)
      n.push_back({na.points[i].x(), na.points[i].y(), nb.points[i].x(), nb.points[i].y()});
    const auto target = geometry::transform_gt_essential(ep.e_gt, na.transform, nb.transform);
    const auto rows = geometry::build_essential_matrix_rows(n, geometry::RowForm::classical).rows;
    ess_res = std::max(ess_res, (rows * target).cwiseAbs().maxCoeff());
  }
  const bool ok = dlt_err < 1e-6 && ess_err < 1e-6 && pnp_res < 1e-8 && ess_res < 1e-8;
  return {ok, "10 scenes each: dlt " + fmt(dlt_err, 3) + " rad, essential " + fmt(ess_err, 3) +
                  " rad, residual pnp " + fmt(pnp_res, 3) + " essential (classical rows) " + fmt(ess_res, 3)};
}

// ---------------------------------------------------------------------------
// 7. End-to-end training on two-view scenes

void write_scores(const EpipolarResult& r, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  out << "method,map5,map10,map20,auc,median_error_deg,failures,train_eigfree_loss,train_eigvec_error,diverged\n";
  for (const auto& s : r.scores) {
    out << s.method;
    for (double m : s.map) out << ',' << full(m);
    out << ',' << full(s.auc) << ',' << full(s.median_error_deg) << ',' << s.failures << ','
        << full(s.train_eigfree_loss) << ',' << full(s.train_eigvec_error) << ',' << (s.diverged ? 1 : 0) << '\n';
  }
}

Outcome criterion_epipolar(const fs::path& dir) {
  const EpipolarExperimentConfig cfg;
  const EpipolarResult r = run_epipolar_experiment(cfg);
  emit_csv(r.eigfree_trace, dir / "epipolar_eigfree.csv");
  emit_csv(r.baseline_trace, dir / "epipolar_baseline.csv");
  write_scores(r, dir / "epipolar_scores.csv");

  const EpipolarScore& ef = r.scores[0];
  const EpipolarScore& bl = r.scores[1];
  const bool ef_ok = !r.eigfree_trace.errored && !ef.diverged && ef.auc > 0.9 && ef.map[2] > 0.9;
  const bool bl_worse = bl.diverged || r.baseline_trace.errored || !std::isfinite(bl.train_eigfree_loss) ||
                        bl.train_eigfree_loss > ef.train_eigfree_loss;
  return {ef_ok && bl_worse,
          "eigfree auc " + fmt(ef.auc) + " (> 0.9), map@20 " + fmt(ef.map[2]) + " (> 0.9), map@5/10 " +
              fmt(ef.map[0]) + "/" + fmt(ef.map[1]) + ", train loss " + fmt(ef.train_eigfree_loss) +
              "; baseline " + (bl.diverged ? std::string("diverged") : "train loss " + fmt(bl.train_eigfree_loss)) +
              ", auc " + fmt(bl.auc) + ", map@20 " + fmt(bl.map[2])};
}

// ---------------------------------------------------------------------------
// 8. Determinism

std::map<std::string, std::string> read_dir(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[entry.path().filename().string()] = ss.str();
  }
  return files;
}

struct Runner {
  int failures = 0;

  template <class F>
  Outcome timed(int id, const std::string& name, double limit_s, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& ex) {
      o = {false, std::string("threw: ") + ex.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs >= limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(limit_s) + " s limit";
    }
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
    return o;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string out = "acceptance_out";
  app.add_option("--out", out, "directory for run CSVs");
  CLI11_PARSE(app, argc, argv);

  const fs::path first = fs::path(out) / "run";
  const fs::path second = fs::path(out) / "rerun";
  for (const auto& d : {first, second}) {
    fs::remove_all(d);
    fs::create_directories(d);
  }

  Runner run;
  run.timed(1, "gradient oracles", 60, [] { return criterion_fd(); });
  run.timed(2, "plane fitting", 300, [&] { return criterion_plane(first); });
  run.timed(3, "ten outliers", 300, [&] { return criterion_multi_outlier(first); });
  run.timed(4, "switching rank", 1, [] { return criterion_rank(); });
  run.timed(5, "pnp sweep", 900, [&] { return criterion_pnp(first); });
  run.timed(6, "noise-free exactness", 10, [] { return criterion_exact(); });
  run.timed(7, "two-view training", 1800, [&] { return criterion_epipolar(first); });
  run.timed(8, "determinism", 3600, [&]() -> Outcome {
    criterion_plane(second);
    criterion_multi_outlier(second);
    criterion_pnp(second);
    criterion_epipolar(second);
    const auto a = read_dir(first), b = read_dir(second);
    int differ = 0;
    for (const auto& [name, bytes] : a) {
      const auto it = b.find(name);
      differ += it == b.end() || it->second != bytes;
    }
    differ += static_cast<int>(b.size()) - static_cast<int>(a.size()) > 0;
    return {differ == 0 && !a.empty(),
            std::to_string(a.size()) + " CSVs re-run, " + std::to_string(differ) + " differ"};
  });
  return run.failures == 0 ? 0 : 1;
}
