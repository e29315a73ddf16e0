#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "eigfree/geometry.hpp"
#include "eigfree/loss.hpp"
#include "eigfree/net.hpp"
#include "eigfree/optim.hpp"

namespace eigfree::harness {

enum class Method { eigfree, eig_svd_baseline };
Method parse_method(std::string_view name);
std::string_view to_string(Method m);

/// A rank change of the target-aligned eigenvector counts as a switching
/// event when the method's loss jumps with it: the loss step into the change
/// is more than kSwitchAcceleration times the mean step over the preceding
/// kSwitchWindow iterations. A loss built on the smallest eigenvector drops
/// abruptly when the ordering flips; a loss that is smooth in the weights
/// keeps its pace (or slows down) through the reordering.
inline constexpr long kSwitchWindow = 100;
inline constexpr double kSwitchAcceleration = 3.0;

struct TraceRecord {
  long iteration = 0;
  double loss_total = 0;
  double first_term = 0;  // e^T X^T W X e at the current weights, whatever the method
  double trace_term = 0;  // tr(Xbar^T W Xbar) at the current weights
  double grad_norm = 0;
  int smallest_index_of_gt = 0;
  double eigen_gap = 0;
  double wall_ms = 0;  // 0 unless timing was requested
};

struct TraceHeader {
  std::string method;
  std::string optimizer;
  double lr = 0;
  std::uint64_t seed = 0;
  std::string problem;
  nlohmann::ordered_json config;
};

struct Trace {
  TraceHeader header;
  std::vector<TraceRecord> records;
  long rank_changes = 0;      // iterations where smallest_index_of_gt changed
  long switching_events = 0;  // rank changes the loss jumps at (see kSwitchAcceleration)
  long degenerate_skips = 0;  // baseline iterations skipped on a degenerate spectrum
  bool errored = false;
  std::string error;
  Eigen::VectorXd final_weights;
  std::vector<bool> inlier_mask;
  double final_error_deg = 0;  // problem-specific final error (plane: normal angle)
};

/// Collects per-iteration (rank, loss) pairs and counts rank changes and
/// switching events over them.
class SwitchDetector {
 public:
  void observe(int rank, double loss);
  long rank_changes() const;
  long switching_events() const;

 private:
  std::vector<int> ranks_;
  std::vector<double> losses_;
};

// ---------------------------------------------------------------------------
// Plane fitting toy

struct PlaneConfig {
  Method method = Method::eigfree;
  optim::Optimizer optimizer = optim::Optimizer::adam;
  double lr = 1e-2;
  long iters = 5000;
  std::uint64_t seed = 0;
  int n_inliers = 100;
  int n_outliers = 1;
  loss::LossConfig loss{1e4, 1e-4};
  double init_logit = 3.0;
  long record_every = 1;  // the final iteration is always recorded
  bool record_timing = false;
};

Trace run_plane_experiment(const PlaneConfig& cfg);

inline const std::vector<double> kLrGrid = {1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};

struct LrSweep {
  std::vector<Trace> traces;  // one per grid lr, in grid order
  std::size_t best = 0;       // lowest final loss among runs that did not error
};
LrSweep run_plane_lr_sweep(PlaneConfig cfg, const std::vector<double>& grid = kLrGrid);

/// Angle in degrees between the smallest eigenvector of the weighted
/// covariance and e, sign ignored.
double plane_normal_error_deg(std::span<const Eigen::Vector3d> points, const Eigen::VectorXd& weights,
                              const Eigen::Vector3d& e);

// ---------------------------------------------------------------------------
// PnP sweep

struct PnPSweepConfig {
  std::vector<int> outliers = {10, 40, 70, 100, 130};
  int trials = 20;
  int n_points = 200;
  double noise_px = 5.0;
  std::uint64_t seed = 0;
  loss::LossConfig loss{1.0, 5e-3};
  optim::Optimizer optimizer = optim::Optimizer::adam;
  double lr = 0.05;
  long iters = 2000;
  double init_logit = 3.0;
  bool with_ransac = true;
};

struct SweepRow {
  std::string method;
  int outlier_count = 0;
  double rotation_error_deg = 0;      // mean over successful trials
  double translation_error_norm = 0;  // mean over successful trials
  int trials = 0;
  int failures = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  nlohmann::ordered_json config;
};

/// Per-instance fit of the weight logits against the ground-truth target,
/// then weighted DLT + Procrustes.
geometry::Pose fit_pnp_instance(std::span<const geometry::Correspondence3D2D> corrs, const geometry::Pose& gt,
                                const PnPSweepConfig& cfg, Eigen::VectorXd* weights = nullptr);

SweepResult run_pnp_sweep(const PnPSweepConfig& cfg);

// ---------------------------------------------------------------------------
// Two-view training

struct EpipolarExperimentConfig {
  int train_size = 500;
  int test_size = 100;
  int correspondences = 100;
  double noise_px = 0.5;
  double min_outlier_ratio = 0.1;
  double max_outlier_ratio = 0.5;
  int epochs = 300;
  int batch_size = 32;
  double lr = 1e-3;
  loss::LossConfig loss{10.0, 1e-3};
  geometry::RowForm row_form = geometry::RowForm::classical;
  std::uint64_t seed = 0;
  bool train_baseline = true;
  std::vector<double> thresholds_deg = {5, 10, 20};
  bool record_timing = false;
};

struct EpipolarScore {
  std::string method;  // eigfree | eig_svd_baseline | untrained
  std::vector<double> map;  // one per threshold
  double auc = 0;
  double median_error_deg = 0;
  int failures = 0;
  double train_eigfree_loss = 0;     // mean eigfree loss over the training set, final net
  double train_eigvec_error = 0;     // mean min |e_min -+ e_gt| over the training set, final net
  bool diverged = false;
};

struct EpipolarResult {
  std::vector<EpipolarScore> scores;
  Trace eigfree_trace;
  Trace baseline_trace;
  nlohmann::ordered_json config;
};

/// One prepared two-view instance: network features, the Hartley-normalized
/// data matrix, its target, and what is needed to turn weights into a pose.
struct EpipolarInstance {
  Eigen::MatrixXd features;  // C x 4: u v u2 v2
  geometry::DataMatrix x;
  Eigen::VectorXd target;
  std::vector<geometry::Correspondence2D2D> correspondences;
  geometry::SimilarityTransform2D t1, t2;
  geometry::Pose pose_gt;
  std::vector<bool> inlier_mask;
};

EpipolarInstance prepare_epipolar_instance(int correspondences, int outliers, double noise_px,
                                           std::uint64_t seed, geometry::RowForm form);

/// Weighted eight-point on the normalized matrix, decomposed on the
/// correspondences the weights keep (w > 0.5 max w). Error is the larger of
/// the rotation and translation-direction errors, radians.
double epipolar_pose_error(const EpipolarInstance& inst, const Eigen::VectorXd& weights);

EpipolarResult run_epipolar_experiment(const EpipolarExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// PnP network training (the `train` subcommand)

struct PnPTrainConfig {
  int train_size = 500;
  int n_points = 200;
  double min_outlier_ratio = 0.1;
  double max_outlier_ratio = 0.5;
  double noise_px = 5.0;
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-4;
  loss::LossConfig loss{1.0, 5e-3};
  Method method = Method::eigfree;
  std::uint64_t seed = 0;
  bool record_timing = false;
};

struct PnPTrainResult {
  net::WeightNet net;
  Trace trace;
  double heldout_auc = 0;
};

PnPTrainResult run_pnp_training(const PnPTrainConfig& cfg);

// ---------------------------------------------------------------------------
// Output

void emit_csv(const Trace& trace, const std::filesystem::path& path);
void emit_csv(const SweepResult& sweep, const std::filesystem::path& path);
void emit_weights_csv(const Trace& trace, const std::filesystem::path& path);
void emit_plot(const Trace& trace, const std::filesystem::path& path);
void emit_plot(const SweepResult& sweep, const std::filesystem::path& path);
void emit_json(const nlohmann::ordered_json& j, const std::filesystem::path& path);

std::vector<TraceRecord> parse_trace_csv(const std::filesystem::path& path);
std::vector<SweepRow> parse_sweep_csv(const std::filesystem::path& path);

nlohmann::ordered_json header_json(const Trace& trace);

}  // namespace eigfree::harness
