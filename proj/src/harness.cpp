#include "eigfree/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "eigfree/format.hpp"
#include "eigfree/linalg.hpp"
#include "eigfree/rng.hpp"
#include "eigfree/synth.hpp"

namespace eigfree::harness {

using geometry::DataMatrix;
using loss::TargetVector;
using loss::WeightState;
using nlohmann::ordered_json;

Method parse_method(std::string_view name) {
  if (name == "eigfree") return Method::eigfree;
  if (name == "eig_svd_baseline" || name == "baseline") return Method::eig_svd_baseline;
  throw ContractViolation("unknown method '" + std::string(name) + "' (expected eigfree|eig_svd_baseline)");
}

std::string_view to_string(Method m) { return m == Method::eigfree ? "eigfree" : "eig_svd_baseline"; }

void SwitchDetector::observe(int rank, double loss) {
  ranks_.push_back(rank);
  losses_.push_back(loss);
}

long SwitchDetector::rank_changes() const {
  long n = 0;
  for (std::size_t t = 1; t < ranks_.size(); ++t) n += ranks_[t] != ranks_[t - 1];
  return n;
}

long SwitchDetector::switching_events() const {
  long n = 0;
  for (std::size_t t = 1; t < ranks_.size(); ++t) {
    if (ranks_[t] == ranks_[t - 1]) continue;
    const std::size_t from = t > static_cast<std::size_t>(kSwitchWindow) ? t - kSwitchWindow : 1;
    if (from >= t) continue;
    double recent = 0;
    for (std::size_t i = from; i < t; ++i) recent += std::abs(losses_[i] - losses_[i - 1]);
    recent /= static_cast<double>(t - from);
    const double step = std::abs(losses_[t] - losses_[t - 1]);
    if (!std::isfinite(step) || step > kSwitchAcceleration * recent) ++n;
  }
  return n;
}

namespace {

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    if (!enabled_) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

double deg(double rad) { return rad * 180.0 / std::numbers::pi; }

ordered_json loss_json(const loss::LossConfig& c) { return {{"alpha", c.alpha}, {"beta", c.beta}}; }

}  // namespace

// ---------------------------------------------------------------------------
// Plane fitting

double plane_normal_error_deg(std::span<const Eigen::Vector3d> points, const Eigen::VectorXd& weights,
                              const Eigen::Vector3d& e) {
  const DataMatrix x = loss::plane_data_matrix(points, weights);
  const auto es = linalg::sym_eig(linalg::SymMatrix::symmetrized(geometry::weighted_gram(x, weights)));
  return deg(geometry::direction_error(es.smallest(), e));
}

Trace run_plane_experiment(const PlaneConfig& cfg) {
  Trace trace;
  trace.header.method = to_string(cfg.method);
  trace.header.optimizer = optim::to_string(cfg.optimizer);
  trace.header.lr = cfg.lr;
  trace.header.seed = cfg.seed;
  trace.header.problem = "plane";
  trace.header.config = {{"n_inliers", cfg.n_inliers}, {"n_outliers", cfg.n_outliers},
                         {"iters", cfg.iters},         {"init_logit", cfg.init_logit},
                         {"loss", loss_json(cfg.loss)}, {"record_every", cfg.record_every},
                         {"weights", "sigmoid(logit)"}};

  try {
    if (cfg.iters < 0 || cfg.record_every <= 0) throw ContractViolation("plane: iters >= 0, record_every > 0");
    const auto scene = synth::gen_plane(cfg.n_inliers, cfg.n_outliers, cfg.seed);
    trace.inlier_mask = scene.inlier_mask;
    const TargetVector e(scene.e_gt);
    const auto n = static_cast<Eigen::Index>(scene.points.size());
    WeightState w = WeightState::constant(n, cfg.init_logit);
    optim::Stepper stepper(cfg.optimizer, n, cfg.lr);
    SwitchDetector detector;
    const Stopwatch clock(cfg.record_timing);

    for (long it = 0;; ++it) {
      const DataMatrix x = loss::plane_data_matrix(scene.points, w.weights());
      const auto probe = loss::probe_spectrum(geometry::weighted_gram(x, w.weights()), e);
      const auto terms = loss::eigfree_loss(x, w, e, cfg.loss);

      TraceRecord rec;
      rec.iteration = it;
      rec.first_term = terms.first_term;
      rec.trace_term = terms.trace;
      rec.smallest_index_of_gt = probe.smallest_index_of_gt;
      rec.eigen_gap = probe.eigen_gap;

      Eigen::VectorXd grad;
      bool skip = false;
      if (cfg.method == Method::eigfree) {
        rec.loss_total = terms.total;
        grad = loss::plane_grad_logits(scene.points, w, e, cfg.loss);
      } else {
        rec.loss_total = std::min((probe.smallest - e.vector()).norm(), (probe.smallest + e.vector()).norm());
        try {
          grad = loss::plane_baseline_loss_grad(scene.points, w, e).grad_logits;
        } catch (const DegenerateSpectrum&) {
          ++trace.degenerate_skips;
          grad = Eigen::VectorXd::Zero(n);
          skip = true;
        }
      }
      rec.grad_norm = grad.norm();
      detector.observe(rec.smallest_index_of_gt, rec.loss_total);
      rec.wall_ms = clock.ms();
      if (it % cfg.record_every == 0 || it == cfg.iters) trace.records.push_back(rec);
      if (it == cfg.iters) break;

      if (!skip) {
        Eigen::VectorXd logits = w.logits();
        stepper.step(logits, grad);
        w.set_logits(std::move(logits));
      }
    }
    trace.rank_changes = detector.rank_changes();
    trace.switching_events = detector.switching_events();
    trace.final_weights = w.weights();
    trace.final_error_deg = plane_normal_error_deg(scene.points, w.weights(), scene.e_gt);
  } catch (const std::exception& ex) {
    trace.errored = true;
    trace.error = ex.what();
  }
  return trace;
}

LrSweep run_plane_lr_sweep(PlaneConfig cfg, const std::vector<double>& grid) {
  if (grid.empty()) throw ContractViolation("run_plane_lr_sweep: empty learning-rate grid");
  LrSweep sweep;
  bool found = false;
  for (double lr : grid) {
    cfg.lr = lr;
    sweep.traces.push_back(run_plane_experiment(cfg));
    const Trace& t = sweep.traces.back();
    if (t.errored || t.records.empty() || !std::isfinite(t.records.back().loss_total)) continue;
    const std::size_t idx = sweep.traces.size() - 1;
    if (!found || t.records.back().loss_total < sweep.traces[sweep.best].records.back().loss_total) {
      sweep.best = idx;
      found = true;
    }
  }
  return sweep;
}

// ---------------------------------------------------------------------------
// PnP

geometry::Pose fit_pnp_instance(std::span<const geometry::Correspondence3D2D> corrs, const geometry::Pose& gt,
                                const PnPSweepConfig& cfg, Eigen::VectorXd* weights) {
  std::vector<Eigen::Vector2d> image;
  std::vector<Eigen::Vector3d> world;
  for (const auto& c : corrs) {
    image.emplace_back(c.u, c.v);
    world.emplace_back(c.x, c.y, c.z);
  }
  const auto n2 = geometry::hartley_normalize(image);
  const auto n3 = geometry::normalize_points_3d(world);
  std::vector<geometry::Correspondence3D2D> normalized(corrs.size());
  for (std::size_t i = 0; i < corrs.size(); ++i)
    normalized[i] = {n3.points[i].x(), n3.points[i].y(), n3.points[i].z(), n2.points[i].x(), n2.points[i].y()};
  const DataMatrix x = geometry::build_pnp_rows(normalized);
  const TargetVector e = TargetVector::normalized(geometry::pnp_target_vector(gt, n2.transform, n3.transform));

  const auto c = static_cast<Eigen::Index>(corrs.size());
  WeightState w = WeightState::constant(c, cfg.init_logit, 2);
  optim::Stepper stepper(cfg.optimizer, c, cfg.lr);
  for (long it = 0; it < cfg.iters; ++it) {
    Eigen::VectorXd logits = w.logits();
    stepper.step(logits, loss::eigfree_grad_logits(x, w, e, cfg.loss));
    w.set_logits(std::move(logits));
  }
  if (weights) *weights = w.weights();
  return geometry::estimate_pose_dlt(corrs, w.weights());
}

SweepResult run_pnp_sweep(const PnPSweepConfig& cfg) {
  if (cfg.trials <= 0) throw ContractViolation("run_pnp_sweep: trials must be positive");
  for (int k : cfg.outliers)
    if (k < 0 || k >= cfg.n_points - 5) throw ContractViolation("run_pnp_sweep: outlier count out of range");

  SweepResult result;
  result.config = {{"n_points", cfg.n_points},
                   {"noise_px", cfg.noise_px},
                   {"trials", cfg.trials},
                   {"outliers", cfg.outliers},
                   {"seed", cfg.seed},
                   {"loss", loss_json(cfg.loss)},
                   {"optimizer", optim::to_string(cfg.optimizer)},
                   {"lr", cfg.lr},
                   {"iters", cfg.iters},
                   {"init_logit", cfg.init_logit},
                   {"camera", {{"focal", 800}, {"cx", 320}, {"cy", 240}, {"width", 640}, {"height", 480}}},
                   {"dlt_normalization", "hartley 2D (rms sqrt2) + 3D (rms sqrt3)"},
                   {"methods", cfg.with_ransac ? ordered_json{"eigfree", "dlt", "ransac_dlt"}
                                               : ordered_json{"eigfree", "dlt"}}};

  std::vector<std::string> methods = {"eigfree", "dlt"};
  if (cfg.with_ransac) methods.push_back("ransac_dlt");

  for (int outliers : cfg.outliers) {
    std::vector<SweepRow> rows;
    for (const auto& m : methods) rows.push_back({m, outliers, 0.0, 0.0, cfg.trials, 0});
    for (int trial = 0; trial < cfg.trials; ++trial) {
      const std::uint64_t scene_seed =
          Rng::derive(cfg.seed, static_cast<std::uint64_t>(outliers), static_cast<std::uint64_t>(trial));
      const auto scene = synth::gen_pnp(cfg.n_points, outliers, cfg.noise_px, scene_seed);
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        try {
          geometry::Pose pose;
          if (methods[mi] == "eigfree")
            pose = fit_pnp_instance(scene.correspondences, scene.pose_gt, cfg);
          else if (methods[mi] == "dlt")
            pose = geometry::estimate_pose_dlt(scene.correspondences,
                                               Eigen::VectorXd::Ones(static_cast<Eigen::Index>(cfg.n_points)));
          else
            pose = geometry::estimate_pose_ransac_dlt(scene.correspondences, Rng::derive(scene_seed, 7));
          rows[mi].rotation_error_deg += deg(geometry::rotation_error(pose.rotation, scene.pose_gt.rotation));
          rows[mi].translation_error_norm += geometry::translation_error(pose.translation, scene.pose_gt.translation);
        } catch (const std::exception&) {
          ++rows[mi].failures;
        }
      }
    }
    for (auto& r : rows) {
      const int ok = r.trials - r.failures;
      r.rotation_error_deg = ok > 0 ? r.rotation_error_deg / ok : std::nan("");
      r.translation_error_norm = ok > 0 ? r.translation_error_norm / ok : std::nan("");
      result.rows.push_back(r);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Network training shared pieces

namespace {

struct Problem {
  const Eigen::MatrixXd* features;
  const DataMatrix* x;
  TargetVector target;
  const std::vector<bool>* mask;
};

std::vector<net::Instance> make_instances(const std::vector<Problem>& problems, Method method,
                                          const loss::LossConfig& cfg) {
  std::vector<net::Instance> out;
  out.reserve(problems.size());
  for (const Problem& p : problems) {
    net::Instance inst;
    inst.features = *p.features;
    inst.inlier_mask = *p.mask;
    const DataMatrix* x = p.x;
    const TargetVector e = p.target;
    if (method == Method::eigfree) {
      inst.loss = [x, e, cfg](const Eigen::VectorXd& w, Eigen::VectorXd* grad) {
        *grad = loss::eigfree_grad_weights(*x, w, e, cfg);
        return loss::eigfree_loss(*x, w, e, cfg).total;
      };
    } else {
      inst.loss = [x, e](const Eigen::VectorXd& w, Eigen::VectorXd* grad) {
        auto r = loss::eig_baseline_loss_grad(*x, w, e);
        *grad = std::move(r.grad_weights);
        return r.loss;
      };
    }
    out.push_back(std::move(inst));
  }
  return out;
}

struct SetStats {
  double first_term = 0, trace_term = 0, eigfree_total = 0, eigvec_error = 0;
  int modal_rank = 0;
  double median_gap = 0;
  double auc = 0;
};

SetStats evaluate_set(const net::WeightNet& net, const std::vector<Problem>& problems, const loss::LossConfig& cfg) {
  SetStats s;
  std::map<int, int> ranks;
  std::vector<double> gaps;
  for (const Problem& p : problems) {
    const Eigen::VectorXd w = net.forward(*p.features);
    const auto terms = loss::eigfree_loss(*p.x, w, p.target, cfg);
    s.first_term += terms.first_term;
    s.trace_term += terms.trace;
    s.eigfree_total += terms.total;
    s.auc += net::weight_auc(w, *p.mask);
    const auto probe = loss::probe_spectrum(geometry::weighted_gram(*p.x, w), p.target);
    s.eigvec_error +=
        std::min((probe.smallest - p.target.vector()).norm(), (probe.smallest + p.target.vector()).norm());
    ++ranks[probe.smallest_index_of_gt];
    gaps.push_back(probe.eigen_gap);
  }
  const double n = static_cast<double>(problems.size());
  s.first_term /= n;
  s.trace_term /= n;
  s.eigfree_total /= n;
  s.eigvec_error /= n;
  s.auc /= n;
  s.modal_rank = std::max_element(ranks.begin(), ranks.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
  std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2), gaps.end());
  s.median_gap = gaps[gaps.size() / 2];
  return s;
}

struct Trained {
  Trace trace;
  bool diverged = false;
};

Trained train_with_trace(net::WeightNet& net, const std::vector<Problem>& problems, Method method,
                         const loss::LossConfig& loss_cfg, const net::TrainConfig& train_cfg, bool timing,
                         const std::string& problem_name, ordered_json config) {
  Trained out;
  Trace& trace = out.trace;
  trace.header.method = to_string(method);
  trace.header.optimizer = "adam";
  trace.header.lr = train_cfg.lr;
  trace.header.seed = train_cfg.seed;
  trace.header.problem = problem_name;
  trace.header.config = std::move(config);

  const auto instances = make_instances(problems, method, loss_cfg);
  const Stopwatch clock(timing);
  try {
    const auto tt = net::train(net, instances, train_cfg,
                               [&](const net::WeightNet& current, const net::EpochRecord& rec, long iterations) {
                                 TraceRecord r;
                                 r.iteration = iterations;
                                 r.loss_total = rec.mean_loss;
                                 r.grad_norm = rec.mean_grad_norm;
                                 trace.degenerate_skips += rec.skipped;
                                 if (!rec.diverged && current.params().allFinite()) {
                                   const SetStats s = evaluate_set(current, problems, loss_cfg);
                                   r.first_term = s.first_term;
                                   r.trace_term = s.trace_term;
                                   r.smallest_index_of_gt = s.modal_rank;
                                   r.eigen_gap = s.median_gap;
                                 } else {
                                   r.first_term = r.trace_term = r.eigen_gap = std::nan("");
                                 }
                                 r.wall_ms = clock.ms();
                                 if (trace.records.empty() || r.iteration > trace.records.back().iteration)
                                   trace.records.push_back(r);
                               });
    out.diverged = tt.diverged;
    if (tt.diverged) trace.error = "diverged (non-finite loss or parameters)";
  } catch (const std::exception& ex) {
    trace.errored = true;
    trace.error = ex.what();
  }
  return out;
}

ordered_json net_json() {
  return {{"architecture", "d-32-32-32-1, context norm (eps 1e-3) + relu after each hidden layer, relu(tanh) output"},
          {"init", "uniform(+-1/sqrt(fan_in)) for weights and biases"}};
}

int outlier_count(Rng& rng, int c, double lo, double hi) {
  const long a = static_cast<long>(std::ceil(lo * c));
  const long b = static_cast<long>(std::floor(hi * c));
  if (a > b) throw ContractViolation("outlier ratio range is empty");
  return static_cast<int>(rng.range(a, b));
}

}  // namespace

// ---------------------------------------------------------------------------
// Two-view experiment

EpipolarInstance prepare_epipolar_instance(int correspondences, int outliers, double noise_px, std::uint64_t seed,
                                           geometry::RowForm form) {
  const auto scene = synth::gen_epipolar(correspondences, outliers, noise_px, seed);
  std::vector<Eigen::Vector2d> a, b;
  for (const auto& c : scene.correspondences) {
    a.emplace_back(c.u, c.v);
    b.emplace_back(c.u2, c.v2);
  }
  const auto na = geometry::hartley_normalize(a);
  const auto nb = geometry::hartley_normalize(b);
  std::vector<geometry::Correspondence2D2D> normalized(scene.correspondences.size());
  for (std::size_t i = 0; i < normalized.size(); ++i)
    normalized[i] = {na.points[i].x(), na.points[i].y(), nb.points[i].x(), nb.points[i].y()};

  EpipolarInstance inst;
  inst.features.resize(correspondences, 4);
  for (int i = 0; i < correspondences; ++i) {
    const auto& c = scene.correspondences[static_cast<std::size_t>(i)];
    inst.features.row(i) << c.u, c.v, c.u2, c.v2;
  }
  inst.x = geometry::build_essential_matrix_rows(normalized, form);
  inst.target = geometry::transform_gt_essential(scene.e_gt, na.transform, nb.transform);
  inst.correspondences = scene.correspondences;
  inst.t1 = na.transform;
  inst.t2 = nb.transform;
  inst.pose_gt = scene.pose2;
  inst.inlier_mask = scene.inlier_mask;
  return inst;
}

double epipolar_pose_error(const EpipolarInstance& inst, const Eigen::VectorXd& weights) {
  const double wmax = weights.maxCoeff();
  if (!(wmax > 0.0)) throw DegenerateConfiguration("epipolar: all weights are zero");
  const auto es = linalg::sym_eig(linalg::SymMatrix::symmetrized(geometry::weighted_gram(inst.x, weights)));
  const Eigen::VectorXd e = es.smallest();
  const Eigen::Matrix3d en = Eigen::Map<const Eigen::Matrix3d>(e.data());
  const Eigen::Matrix3d essential = inst.t2.matrix().transpose() * en * inst.t1.matrix();

  std::vector<geometry::Correspondence2D2D> kept;
  for (std::size_t i = 0; i < inst.correspondences.size(); ++i)
    if (weights(static_cast<Eigen::Index>(i)) > 0.5 * wmax) kept.push_back(inst.correspondences[i]);
  const auto pose = geometry::decompose_essential(essential, kept);
  return std::max(geometry::rotation_error(pose.rotation, inst.pose_gt.rotation),
                  geometry::direction_error(pose.translation, inst.pose_gt.translation));
}

namespace {

std::vector<EpipolarInstance> make_epipolar_set(const EpipolarExperimentConfig& cfg, int size, std::uint64_t stream) {
  std::vector<EpipolarInstance> set;
  set.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) {
    Rng rng(Rng::derive(cfg.seed, stream, static_cast<std::uint64_t>(i)));
    const int outliers =
        outlier_count(rng, cfg.correspondences, cfg.min_outlier_ratio, cfg.max_outlier_ratio);
    set.push_back(prepare_epipolar_instance(cfg.correspondences, outliers, cfg.noise_px, rng.next(), cfg.row_form));
  }
  return set;
}

std::vector<Problem> as_problems(const std::vector<EpipolarInstance>& set) {
  std::vector<Problem> out;
  for (const auto& inst : set) out.push_back({&inst.features, &inst.x, TargetVector(inst.target), &inst.inlier_mask});
  return out;
}

EpipolarScore score_net(const std::string& name, const net::WeightNet& net, const std::vector<EpipolarInstance>& test,
                        const std::vector<Problem>& train, const EpipolarExperimentConfig& cfg) {
  EpipolarScore s;
  s.method = name;
  std::vector<double> errors;
  double auc = 0;
  for (const auto& inst : test) {
    const Eigen::VectorXd w = net.forward(inst.features);
    auc += net::weight_auc(w, inst.inlier_mask);
    try {
      errors.push_back(epipolar_pose_error(inst, w));
    } catch (const std::exception&) {
      ++s.failures;
      errors.push_back(std::numbers::pi);
    }
  }
  s.auc = auc / static_cast<double>(test.size());
  for (double th : cfg.thresholds_deg) {
    const double t[] = {th};
    s.map.push_back(geometry::map_score(errors, t));
  }
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  s.median_error_deg = deg(sorted[sorted.size() / 2]);
  if (net.params().allFinite()) {
    const SetStats st = evaluate_set(net, train, cfg.loss);
    s.train_eigfree_loss = st.eigfree_total;
    s.train_eigvec_error = st.eigvec_error;
  } else {
    s.train_eigfree_loss = s.train_eigvec_error = std::nan("");
  }
  return s;
}

}  // namespace

EpipolarResult run_epipolar_experiment(const EpipolarExperimentConfig& cfg) {
  if (cfg.train_size < 1 || cfg.test_size < 1) throw ContractViolation("epipolar: set sizes must be >= 1");
  EpipolarResult result;
  ordered_json config = {{"train_size", cfg.train_size},
                         {"test_size", cfg.test_size},
                         {"correspondences", cfg.correspondences},
                         {"noise_px", cfg.noise_px},
                         {"outlier_ratio", {cfg.min_outlier_ratio, cfg.max_outlier_ratio}},
                         {"epochs", cfg.epochs},
                         {"batch_size", cfg.batch_size},
                         {"lr", cfg.lr},
                         {"loss", loss_json(cfg.loss)},
                         {"row_form", geometry::to_string(cfg.row_form)},
                         {"seed", cfg.seed},
                         {"scene", {{"baseline", 2.0}, {"max_rotation_deg", 10.0}, {"focal", 800}}},
                         {"thresholds_deg", cfg.thresholds_deg},
                         {"pose_error", "max(rotation, translation direction)"},
                         {"net", net_json()}};
  result.config = config;

  const auto train_set = make_epipolar_set(cfg, cfg.train_size, 1);
  const auto test_set = make_epipolar_set(cfg, cfg.test_size, 2);
  const auto train_problems = as_problems(train_set);
  const std::uint64_t net_seed = Rng::derive(cfg.seed, 3);
  const net::TrainConfig tc{cfg.batch_size, cfg.lr, cfg.epochs, Rng::derive(cfg.seed, 4)};

  const net::WeightNet untrained(4, net_seed);
  net::WeightNet eigfree_net(4, net_seed);
  auto ef = train_with_trace(eigfree_net, train_problems, Method::eigfree, cfg.loss, tc, cfg.record_timing,
                             "epipolar", config);
  result.eigfree_trace = std::move(ef.trace);
  auto ef_score = score_net("eigfree", eigfree_net, test_set, train_problems, cfg);
  ef_score.diverged = ef.diverged;
  result.scores.push_back(ef_score);

  if (cfg.train_baseline) {
    net::WeightNet baseline_net(4, net_seed);
    auto bl = train_with_trace(baseline_net, train_problems, Method::eig_svd_baseline, cfg.loss, tc,
                               cfg.record_timing, "epipolar", config);
    result.baseline_trace = std::move(bl.trace);
    EpipolarScore bs;
    if (bl.diverged || !baseline_net.params().allFinite()) {
      bs.method = "eig_svd_baseline";
      bs.map.assign(cfg.thresholds_deg.size(), 0.0);
      bs.train_eigfree_loss = bs.train_eigvec_error = std::nan("");
    } else {
      bs = score_net("eig_svd_baseline", baseline_net, test_set, train_problems, cfg);
    }
    bs.diverged = bl.diverged;
    result.scores.push_back(bs);
  }
  result.scores.push_back(score_net("untrained", untrained, test_set, train_problems, cfg));
  return result;
}

// ---------------------------------------------------------------------------
// PnP network training

namespace {

struct PnPInstance {
  Eigen::MatrixXd features;  // C x 5: x y z u v
  DataMatrix x;
  Eigen::VectorXd target;
  std::vector<bool> mask;
};

PnPInstance prepare_pnp_instance(const PnPTrainConfig& cfg, Rng& rng) {
  const int outliers = outlier_count(rng, cfg.n_points, cfg.min_outlier_ratio, cfg.max_outlier_ratio);
  const auto scene = synth::gen_pnp(cfg.n_points, outliers, cfg.noise_px, rng.next());
  std::vector<Eigen::Vector2d> image;
  std::vector<Eigen::Vector3d> world;
  PnPInstance inst;
  inst.features.resize(cfg.n_points, 5);
  for (int i = 0; i < cfg.n_points; ++i) {
    const auto& c = scene.correspondences[static_cast<std::size_t>(i)];
    inst.features.row(i) << c.x, c.y, c.z, c.u, c.v;
    image.emplace_back(c.u, c.v);
    world.emplace_back(c.x, c.y, c.z);
  }
  const auto n2 = geometry::hartley_normalize(image);
  const auto n3 = geometry::normalize_points_3d(world);
  std::vector<geometry::Correspondence3D2D> normalized(image.size());
  for (std::size_t i = 0; i < image.size(); ++i)
    normalized[i] = {n3.points[i].x(), n3.points[i].y(), n3.points[i].z(), n2.points[i].x(), n2.points[i].y()};
  inst.x = geometry::build_pnp_rows(normalized);
  inst.target = geometry::pnp_target_vector(scene.pose_gt, n2.transform, n3.transform);
  inst.mask = scene.inlier_mask;
  return inst;
}

}  // namespace

PnPTrainResult run_pnp_training(const PnPTrainConfig& cfg) {
  if (cfg.train_size < 1) throw ContractViolation("train: dataset must not be empty");
  std::vector<PnPInstance> train_set, test_set;
  for (int i = 0; i < cfg.train_size; ++i) {
    Rng rng(Rng::derive(cfg.seed, 1, static_cast<std::uint64_t>(i)));
    train_set.push_back(prepare_pnp_instance(cfg, rng));
  }
  const int test_size = std::max(1, cfg.train_size / 5);
  for (int i = 0; i < test_size; ++i) {
    Rng rng(Rng::derive(cfg.seed, 2, static_cast<std::uint64_t>(i)));
    test_set.push_back(prepare_pnp_instance(cfg, rng));
  }
  std::vector<Problem> problems, test_problems;
  for (const auto& p : train_set) problems.push_back({&p.features, &p.x, TargetVector(p.target), &p.mask});
  for (const auto& p : test_set) test_problems.push_back({&p.features, &p.x, TargetVector(p.target), &p.mask});

  PnPTrainResult result{net::WeightNet(5, Rng::derive(cfg.seed, 3)), {}, 0.0};
  ordered_json config = {{"train_size", cfg.train_size},
                         {"n_points", cfg.n_points},
                         {"outlier_ratio", {cfg.min_outlier_ratio, cfg.max_outlier_ratio}},
                         {"noise_px", cfg.noise_px},
                         {"epochs", cfg.epochs},
                         {"batch_size", cfg.batch_size},
                         {"loss", loss_json(cfg.loss)},
                         {"net", net_json()}};
  const net::TrainConfig tc{cfg.batch_size, cfg.lr, cfg.epochs, Rng::derive(cfg.seed, 4)};
  auto trained = train_with_trace(result.net, problems, cfg.method, cfg.loss, tc, cfg.record_timing, "pnp",
                                  std::move(config));
  result.trace = std::move(trained.trace);
  if (result.net.params().allFinite()) result.heldout_auc = evaluate_set(result.net, test_problems, cfg.loss).auc;
  return result;
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

constexpr const char* kTraceHeader =
    "iteration,loss_total,first_term,trace_term,grad_norm,smallest_index_of_gt,eigen_gap,wall_ms";
constexpr const char* kSweepHeader =
    "method,outlier_count,rotation_error_deg,translation_error_norm,trials,failures";

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, const char* header,
                                               std::size_t fields) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw std::runtime_error(path.string() + ": unexpected CSV header");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != fields) throw std::runtime_error(path.string() + ": wrong field count in '" + line + "'");
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

void write_svg(std::ofstream& out, const std::string& title, const std::string& xlabel, const std::string& ylabel,
               const std::vector<Series>& series) {
  const double w = 640, h = 400, left = 70, right = 20, top = 40, bottom = 50;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (!(xmax > xmin)) {
    xmin = std::isfinite(xmin) ? xmin - 1 : 0;
    xmax = xmin + 2;
  }
  if (!(ymax > ymin)) {
    ymin = std::isfinite(ymin) ? ymin - 1 : 0;
    ymax = ymin + 2;
  }
  const auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (w - left - right); };
  const auto py = [&](double y) { return h - bottom - (y - ymin) / (ymax - ymin) * (h - top - bottom); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title)
      << "</text>\n"
      << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << svg_escape(xlabel) << "</text>\n"
      << "<text x=\"16\" y=\"" << h / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
      << h / 2 << ")\">" << svg_escape(ylabel) << "</text>\n";
  for (double f : {0.0, 0.5, 1.0}) {
    out << "<text x=\"" << left - 4 << "\" y=\"" << py(ymin + f * (ymax - ymin)) + 4
        << "\" text-anchor=\"end\" font-size=\"10\">" << fmt_double(ymin + f * (ymax - ymin)).substr(0, 8)
        << "</text>\n";
    out << "<text x=\"" << px(xmin + f * (xmax - xmin)) << "\" y=\"" << h - bottom + 14
        << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt_double(xmin + f * (xmax - xmin)).substr(0, 8)
        << "</text>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = colors[i % 5];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (auto [x, y] : series[i].points)
      if (std::isfinite(x) && std::isfinite(y)) out << px(x) << ',' << py(y) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << w - right - 4 << "\" y=\"" << top + 14 * (i + 1) << "\" text-anchor=\"end\" fill=\""
        << color << "\" font-size=\"11\">" << svg_escape(series[i].label) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void emit_csv(const Trace& trace, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kTraceHeader << '\n';
  for (const auto& r : trace.records)
    out << r.iteration << ',' << fmt_double(r.loss_total) << ',' << fmt_double(r.first_term) << ','
        << fmt_double(r.trace_term) << ',' << fmt_double(r.grad_norm) << ',' << r.smallest_index_of_gt << ','
        << fmt_double(r.eigen_gap) << ',' << fmt_double(r.wall_ms) << '\n';
  finish(out, path);
}

void emit_csv(const SweepResult& sweep, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kSweepHeader << '\n';
  for (const auto& r : sweep.rows)
    out << r.method << ',' << r.outlier_count << ',' << fmt_double(r.rotation_error_deg) << ','
        << fmt_double(r.translation_error_norm) << ',' << r.trials << ',' << r.failures << '\n';
  finish(out, path);
}

void emit_weights_csv(const Trace& trace, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "index,weight,inlier\n";
  for (Eigen::Index i = 0; i < trace.final_weights.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out << i << ',' << fmt_double(trace.final_weights(i)) << ','
        << (k < trace.inlier_mask.size() ? (trace.inlier_mask[k] ? 1 : 0) : -1) << '\n';
  }
  finish(out, path);
}

void emit_plot(const Trace& trace, const std::filesystem::path& path) {
  auto out = open_out(path);
  Series s{trace.header.method, {}};
  for (const auto& r : trace.records) s.points.emplace_back(static_cast<double>(r.iteration), r.loss_total);
  write_svg(out, trace.header.problem + " / " + trace.header.method + " / " + trace.header.optimizer + " lr " +
                     fmt_double(trace.header.lr),
            "iteration", "loss", {s});
  finish(out, path);
}

void emit_plot(const SweepResult& sweep, const std::filesystem::path& path) {
  auto out = open_out(path);
  std::vector<Series> series;
  for (const auto& r : sweep.rows) {
    auto it = std::find_if(series.begin(), series.end(), [&](const Series& s) { return s.label == r.method; });
    if (it == series.end()) {
      series.push_back({r.method, {}});
      it = series.end() - 1;
    }
    it->points.emplace_back(r.outlier_count, r.rotation_error_deg);
  }
  write_svg(out, "PnP rotation error vs outliers", "outliers", "mean rotation error (deg)", series);
  finish(out, path);
}

void emit_json(const ordered_json& j, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

std::vector<TraceRecord> parse_trace_csv(const std::filesystem::path& path) {
  std::vector<TraceRecord> records;
  for (const auto& c : read_csv(path, kTraceHeader, 8)) {
    TraceRecord r;
    r.iteration = std::stol(c[0]);
    r.loss_total = parse_double(c[1]);
    r.first_term = parse_double(c[2]);
    r.trace_term = parse_double(c[3]);
    r.grad_norm = parse_double(c[4]);
    r.smallest_index_of_gt = std::stoi(c[5]);
    r.eigen_gap = parse_double(c[6]);
    r.wall_ms = parse_double(c[7]);
    records.push_back(r);
  }
  return records;
}

std::vector<SweepRow> parse_sweep_csv(const std::filesystem::path& path) {
  std::vector<SweepRow> rows;
  for (const auto& c : read_csv(path, kSweepHeader, 6))
    rows.push_back({c[0], std::stoi(c[1]), parse_double(c[2]), parse_double(c[3]), std::stoi(c[4]), std::stoi(c[5])});
  return rows;
}

ordered_json header_json(const Trace& trace) {
  return {{"method", trace.header.method},
          {"optimizer", trace.header.optimizer},
          {"lr", trace.header.lr},
          {"seed", trace.header.seed},
          {"problem", trace.header.problem},
          {"config", trace.header.config},
          {"records", trace.records.size()},
          {"rank_changes", trace.rank_changes},
          {"switching_events", trace.switching_events},
          {"degenerate_skips", trace.degenerate_skips},
          {"final_error_deg", trace.final_error_deg},
          {"errored", trace.errored},
          {"error", trace.error}};
}

}  // namespace eigfree::harness
