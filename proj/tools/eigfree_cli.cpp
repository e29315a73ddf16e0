// Command-line driver for the experiments.
//
//   eigfree plane     --method eigfree --optimizer adam --lr grid --iters 5000
//   eigfree pnp-sweep --outliers 10,40,70,100,130 --trials 20
//   eigfree epipolar  --iters 300 --lr 1e-3
//   eigfree train     --iters 20 --lr 1e-4
//
// Every run writes CSV traces, an SVG plot and a JSON config echo into --out.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "eigfree/harness.hpp"

namespace fs = std::filesystem;
using namespace eigfree;
using nlohmann::ordered_json;

namespace {

struct Common {
  std::string method = "eigfree";
  std::string optimizer = "adam";
  std::string lr;  // empty: per-subcommand default; "grid" for the plane sweep
  long iters = -1;
  std::uint64_t seed = 0;
  double alpha = -1, beta = -1;
  std::string out = "out";
  int trials = -1;
  std::vector<int> outliers;
  std::string row_form = "classical";
  bool record_timing = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--method", c.method, "eigfree | eig_svd_baseline");
  app->add_option("--optimizer", c.optimizer, "adam | gd");
  app->add_option("--lr", c.lr, "learning rate (plane also accepts 'grid')");
  app->add_option("--iters", c.iters, "iterations (plane, PnP fit) or epochs (training)");
  app->add_option("--seed", c.seed, "base seed");
  app->add_option("--alpha", c.alpha, "trace-term weight");
  app->add_option("--beta", c.beta, "trace-term bandwidth");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--trials", c.trials, "trials per setting (pnp-sweep)");
  app->add_option("--outliers", c.outliers, "outlier counts, comma separated")->delimiter(',');
  app->add_option("--row-form", c.row_form, "epipolar row form: classical | paper");
  app->add_flag("--record-timing", c.record_timing, "fill wall_ms (makes CSVs non-reproducible)");
}

loss::LossConfig loss_config(const Common& c, loss::LossConfig def) {
  if (c.alpha >= 0) def.alpha = c.alpha;
  if (c.beta >= 0) def.beta = c.beta;
  def.validate();
  return def;
}

double lr_or(const Common& c, double def) { return c.lr.empty() ? def : std::stod(c.lr); }

// Short lr labels (1e-05, 0.1) keep file names readable; the exact value is in the JSON echo.
std::string run_name(const harness::Trace& t) {
  std::ostringstream lr;
  lr << t.header.lr;
  return t.header.problem + "_" + t.header.method + "_" + t.header.optimizer + "_lr" + lr.str();
}

void write_trace(const harness::Trace& t, const fs::path& dir, const std::string& name) {
  harness::emit_csv(t, dir / (name + ".csv"));
  harness::emit_plot(t, dir / (name + ".svg"));
  harness::emit_json(harness::header_json(t), dir / (name + ".json"));
  if (t.final_weights.size() > 0) harness::emit_weights_csv(t, dir / (name + "_weights.csv"));
}

int cmd_plane(const Common& c) {
  harness::PlaneConfig cfg;
  cfg.method = harness::parse_method(c.method);
  cfg.optimizer = optim::parse_optimizer(c.optimizer);
  cfg.seed = c.seed;
  cfg.loss = loss_config(c, cfg.loss);
  if (c.iters >= 0) cfg.iters = c.iters;
  if (!c.outliers.empty()) cfg.n_outliers = c.outliers.front();
  cfg.record_every = cfg.iters > 10000 ? 10 : 1;
  cfg.record_timing = c.record_timing;

  std::vector<harness::Trace> traces;
  std::size_t best = 0;
  if (c.lr == "grid") {
    auto sweep = harness::run_plane_lr_sweep(cfg);
    traces = std::move(sweep.traces);
    best = sweep.best;
  } else {
    cfg.lr = lr_or(c, cfg.lr);
    traces.push_back(harness::run_plane_experiment(cfg));
  }

  int status = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    write_trace(t, c.out, run_name(t));
    std::cout << run_name(t) << (traces.size() > 1 && i == best ? "  [best]" : "") << "\n";
    if (t.errored) {
      std::cout << "  error: " << t.error << "\n";
      status = 1;
      continue;
    }
    const auto& last = t.records.back();
    std::cout << "  final loss " << last.loss_total << ", normal error " << t.final_error_deg << " deg, rank changes "
              << t.rank_changes << ", switching events " << t.switching_events << ", degenerate skips "
              << t.degenerate_skips << "\n";
  }
  return status;
}

int cmd_pnp_sweep(const Common& c) {
  harness::PnPSweepConfig cfg;
  if (harness::parse_method(c.method) != harness::Method::eigfree)
    throw std::invalid_argument("pnp-sweep fits weights with the eigfree loss; DLT baselines are always included");
  cfg.optimizer = optim::parse_optimizer(c.optimizer);
  cfg.lr = lr_or(c, cfg.lr);
  if (c.iters >= 0) cfg.iters = c.iters;
  if (c.trials > 0) cfg.trials = c.trials;
  if (!c.outliers.empty()) cfg.outliers = c.outliers;
  cfg.seed = c.seed;
  cfg.loss = loss_config(c, cfg.loss);

  const auto sweep = harness::run_pnp_sweep(cfg);
  const fs::path dir = c.out;
  harness::emit_csv(sweep, dir / "pnp_sweep.csv");
  harness::emit_plot(sweep, dir / "pnp_sweep.svg");
  harness::emit_json(sweep.config, dir / "pnp_sweep.json");

  int status = 0;
  std::cout << "method        outliers  rot_err_deg   trans_err    failures\n";
  for (const auto& r : sweep.rows) {
    std::printf("%-12s  %8d  %11.5f  %10.5f  %4d/%d\n", r.method.c_str(), r.outlier_count, r.rotation_error_deg,
                r.translation_error_norm, r.failures, r.trials);
    if (r.failures > 0) status = 1;
  }
  return status;
}

int cmd_epipolar(const Common& c) {
  harness::EpipolarExperimentConfig cfg;
  if (c.iters >= 0) cfg.epochs = static_cast<int>(c.iters);
  cfg.lr = lr_or(c, cfg.lr);
  cfg.seed = c.seed;
  cfg.loss = loss_config(c, cfg.loss);
  cfg.row_form = geometry::parse_row_form(c.row_form);
  cfg.record_timing = c.record_timing;

  const auto res = harness::run_epipolar_experiment(cfg);
  const fs::path dir = c.out;
  write_trace(res.eigfree_trace, dir, "epipolar_eigfree");
  if (cfg.train_baseline) write_trace(res.baseline_trace, dir, "epipolar_eig_svd_baseline");

  ordered_json table = ordered_json::array();
  std::cout << "method             map@5    map@10   map@20   auc      median_err  train_eigfree  train_eigvec\n";
  for (const auto& s : res.scores) {
    std::printf("%-17s  %.4f   %.4f   %.4f   %.4f   %8.3f    %.6g  %.6g%s\n", s.method.c_str(), s.map[0], s.map[1],
                s.map[2], s.auc, s.median_error_deg, s.train_eigfree_loss, s.train_eigvec_error,
                s.diverged ? "  (diverged)" : "");
    table.push_back({{"method", s.method},
                     {"map", s.map},
                     {"auc", s.auc},
                     {"median_error_deg", s.median_error_deg},
                     {"failures", s.failures},
                     {"train_eigfree_loss", s.train_eigfree_loss},
                     {"train_eigvec_error", s.train_eigvec_error},
                     {"diverged", s.diverged}});
  }
  harness::emit_json({{"config", res.config}, {"scores", table}}, dir / "epipolar.json");
  return res.eigfree_trace.errored || res.baseline_trace.errored ? 1 : 0;
}

int cmd_train(const Common& c) {
  harness::PnPTrainConfig cfg;
  cfg.method = harness::parse_method(c.method);
  if (c.iters >= 0) cfg.epochs = static_cast<int>(c.iters);
  cfg.lr = lr_or(c, cfg.lr);
  cfg.seed = c.seed;
  cfg.loss = loss_config(c, cfg.loss);
  cfg.record_timing = c.record_timing;

  const auto res = harness::run_pnp_training(cfg);
  const fs::path dir = c.out;
  const std::string name = "train_pnp_" + std::string(harness::to_string(cfg.method));
  write_trace(res.trace, dir, name);
  res.net.save(dir / (name + ".weightnet"));
  for (const auto& r : res.trace.records)
    std::cout << "iteration " << r.iteration << "  loss " << r.loss_total << "\n";
  std::cout << "held-out weight AUC " << res.heldout_auc << "\n";
  if (res.trace.errored) std::cout << "error: " << res.trace.error << "\n";
  return res.trace.errored ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Eigendecomposition-free zero-eigenvalue losses: experiments"};
  app.require_subcommand(1);
  Common common;
  auto* plane = app.add_subcommand("plane", "plane fitting with one or more far outliers");
  auto* pnp = app.add_subcommand("pnp-sweep", "PnP robustness versus outlier count");
  auto* epi = app.add_subcommand("epipolar", "train the weight network on two-view scenes");
  auto* train = app.add_subcommand("train", "train the weight network on PnP scenes and save it");
  for (auto* sub : {plane, pnp, epi, train}) add_common(sub, common);
  CLI11_PARSE(app, argc, argv);

  try {
    if (plane->parsed()) return cmd_plane(common);
    if (pnp->parsed()) return cmd_pnp_sweep(common);
    if (epi->parsed()) return cmd_epipolar(common);
    return cmd_train(common);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}
