#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eigfree/errors.hpp"

namespace eigfree::net {

inline constexpr double kContextNormEpsilon = 1e-3;

/// Per-correspondence weight predictor: d -> 32 -> 32 -> 32 -> 1. Every
/// hidden layer is followed by context normalization (each channel
/// standardized over the C correspondences of one instance) and ReLU; the
/// output is relu(tanh(.)), so weights lie in [0, 1).
///
/// Parameters live in one flat vector, layer by layer: W (out x in,
/// row-major) then b.
class WeightNet {
 public:
  WeightNet(int input_dim, std::uint64_t seed, std::vector<int> hidden = {32, 32, 32});

  int input_dim() const { return dims_.front(); }
  const std::vector<int>& dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  Eigen::Index param_count() const { return params_.size(); }

  std::size_t layers() const { return dims_.size() - 1; }
  Eigen::Index weight_offset(std::size_t layer) const { return offsets_[layer]; }
  Eigen::Index bias_offset(std::size_t layer) const {
    return offsets_[layer] + static_cast<Eigen::Index>(dims_[layer + 1]) * dims_[layer];
  }

  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;      // input to each layer, C x in
    std::vector<Eigen::MatrixXd> normalized;  // hidden: CN output before ReLU
    std::vector<Eigen::RowVectorXd> inv_std;  // hidden: 1 / sqrt(var + eps)
    Eigen::VectorXd logits;                   // pre-tanh output
    Eigen::VectorXd weights;
  };

  /// features: C x input_dim. Returns C weights; fills `cache` if given.
  Eigen::VectorXd forward(const Eigen::MatrixXd& features, Cache* cache = nullptr) const;

  /// Parameter gradient for dL/dweights; requires the cache of the matching
  /// forward pass.
  Eigen::VectorXd backward(const Cache& cache, const Eigen::VectorXd& grad_wrt_weights) const;

  void save(const std::filesystem::path& path) const;
  static WeightNet load(const std::filesystem::path& path);

 private:
  std::vector<int> dims_;
  std::vector<Eigen::Index> offsets_;
  std::uint64_t seed_;
  Eigen::VectorXd params_;
};

/// One training example: per-correspondence features plus whatever the loss
/// needs, captured in `loss` (returns loss value, writes dL/dweights).
struct Instance {
  Eigen::MatrixXd features;
  std::vector<bool> inlier_mask;
  std::function<double(const Eigen::VectorXd& weights, Eigen::VectorXd* grad)> loss;
};

struct TrainConfig {
  int batch_size = 32;
  double lr = 1e-4;
  int epochs = 1;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0;
  double mean_inlier_weight = 0;
  double mean_outlier_weight = 0;
  double mean_grad_norm = 0;  // over the epoch's batch gradients
  long skipped = 0;      // instances whose loss threw (degenerate spectrum, ...)
  bool diverged = false; // non-finite loss or parameters
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  long iterations = 0;
  bool diverged = false;
};

/// Mini-batch Adam over instances in a seeded shuffled order; the batch
/// gradient is the mean of the per-instance gradients. Stops early, marking
/// divergence, if the loss or the parameters become non-finite.
/// `on_epoch`, if set, runs after every epoch with the updated network.
using EpochHook = std::function<void(const WeightNet&, const EpochRecord&, long iterations)>;
TrainTrace train(WeightNet& net, const std::vector<Instance>& dataset, const TrainConfig& cfg,
                 const EpochHook& on_epoch = {});

/// Probability that a random inlier is weighted above a random outlier (ties
/// count half). Returns 1 if either class is empty.
double weight_auc(const Eigen::VectorXd& weights, const std::vector<bool>& inlier_mask);

}  // namespace eigfree::net
