#include "eigfree/net.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>

#include "eigfree/optim.hpp"
#include "eigfree/rng.hpp"

namespace eigfree::net {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::array<char, 8> kMagic = {'E', 'F', 'W', 'N', 'E', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

WeightNet::WeightNet(int input_dim, std::uint64_t seed, std::vector<int> hidden) : seed_(seed) {
  if (input_dim <= 0) throw ContractViolation("WeightNet: input dimension must be positive");
  dims_.push_back(input_dim);
  for (int h : hidden) {
    if (h <= 0) throw ContractViolation("WeightNet: hidden widths must be positive");
    dims_.push_back(h);
  }
  dims_.push_back(1);

  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(dims_[l + 1]) * (dims_[l] + 1);
  }
  params_.resize(total);

  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
    const Eigen::Index count = static_cast<Eigen::Index>(dims_[l + 1]) * (dims_[l] + 1);
    for (Eigen::Index i = 0; i < count; ++i) params_(offsets_[l] + i) = rng.uniform(-bound, bound);
  }
}

Eigen::VectorXd WeightNet::forward(const Eigen::MatrixXd& features, Cache* cache) const {
  if (features.cols() != input_dim())
    throw ContractViolation("WeightNet::forward: expected " + std::to_string(input_dim()) + " features, got " +
                            std::to_string(features.cols()));
  if (features.rows() == 0) throw ContractViolation("WeightNet::forward: empty instance");
  if (!features.allFinite()) throw ContractViolation("WeightNet::forward: non-finite feature");

  if (cache) *cache = Cache{};
  Eigen::MatrixXd x = features;
  const std::size_t hidden = layers() - 1;
  for (std::size_t l = 0; l < hidden; ++l) {
    const Eigen::Map<const RowMajor> w(params_.data() + weight_offset(l), dims_[l + 1], dims_[l]);
    const Eigen::Map<const Eigen::RowVectorXd> b(params_.data() + bias_offset(l), dims_[l + 1]);
    if (cache) cache->inputs.push_back(x);

    Eigen::MatrixXd h = x * w.transpose();
    h.rowwise() += b;
    const Eigen::RowVectorXd mean = h.colwise().mean();
    h.rowwise() -= mean;
    const Eigen::RowVectorXd var = h.cwiseAbs2().colwise().mean();
    const Eigen::RowVectorXd inv = (var.array() + kContextNormEpsilon).rsqrt().matrix();
    h = h * inv.asDiagonal();
    if (cache) {
      cache->normalized.push_back(h);
      cache->inv_std.push_back(inv);
    }
    x = h.cwiseMax(0.0);
  }

  const Eigen::Map<const Eigen::RowVectorXd> w_out(params_.data() + weight_offset(hidden), dims_[hidden]);
  const double b_out = params_(bias_offset(hidden));
  if (cache) cache->inputs.push_back(x);
  Eigen::VectorXd logits = (x * w_out.transpose()).array() + b_out;
  Eigen::VectorXd weights = logits.unaryExpr([](double o) { return std::max(std::tanh(o), 0.0); });
  if (cache) {
    cache->logits = logits;
    cache->weights = weights;
  }
  return weights;
}

Eigen::VectorXd WeightNet::backward(const Cache& cache, const Eigen::VectorXd& grad_wrt_weights) const {
  const std::size_t hidden = layers() - 1;
  if (cache.inputs.size() != layers() || cache.logits.size() == 0)
    throw ContractViolation("WeightNet::backward: missing forward cache");
  if (grad_wrt_weights.size() != cache.logits.size())
    throw ContractViolation("WeightNet::backward: gradient size does not match the cached instance");

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  const Eigen::VectorXd g_out = cache.logits.binaryExpr(grad_wrt_weights, [](double o, double g) {
    if (o <= 0.0) return 0.0;
    const double t = std::tanh(o);
    return g * (1.0 - t * t);
  });

  const Eigen::MatrixXd& x_last = cache.inputs[hidden];
  grad.segment(weight_offset(hidden), dims_[hidden]) = x_last.transpose() * g_out;
  grad(bias_offset(hidden)) = g_out.sum();
  const Eigen::Map<const Eigen::RowVectorXd> w_out(params_.data() + weight_offset(hidden), dims_[hidden]);
  Eigen::MatrixXd g_x = g_out * w_out;

  const double c = static_cast<double>(cache.logits.size());
  for (std::size_t l = hidden; l-- > 0;) {
    const Eigen::MatrixXd& n = cache.normalized[l];
    const Eigen::MatrixXd g_n = g_x.cwiseProduct((n.array() > 0.0).cast<double>().matrix());
    // Context-norm backward: per channel, g_h = s (g - mean(g) - n mean(g n)).
    const Eigen::RowVectorXd mean_g = g_n.colwise().sum() / c;
    const Eigen::RowVectorXd mean_gn = g_n.cwiseProduct(n).colwise().sum() / c;
    Eigen::MatrixXd g_h = g_n;
    g_h.rowwise() -= mean_g;
    g_h -= n * mean_gn.asDiagonal();
    g_h = g_h * cache.inv_std[l].asDiagonal();

    Eigen::Map<RowMajor> dw(grad.data() + weight_offset(l), dims_[l + 1], dims_[l]);
    dw = g_h.transpose() * cache.inputs[l];
    grad.segment(bias_offset(l), dims_[l + 1]) = g_h.colwise().sum().transpose();
    if (l > 0) {
      const Eigen::Map<const RowMajor> w(params_.data() + weight_offset(l), dims_[l + 1], dims_[l]);
      g_x = g_h * w;
    }
  }
  return grad;
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_uint(std::istream& in, int bytes, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof())
      throw std::runtime_error("checkpoint " + path.string() + ": truncated file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void WeightNet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(dims_.size()));
  for (int d : dims_) put_u32(out, static_cast<std::uint32_t>(d));
  put_u64(out, seed_);
  put_u64(out, static_cast<std::uint64_t>(params_.size()));
  for (Eigen::Index i = 0; i < params_.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(params_(i)));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

WeightNet WeightNet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
  const auto version = get_uint(in, 4, path);
  if (version != kVersion)
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  const auto ndims = get_uint(in, 4, path);
  if (ndims < 2 || ndims > 64) throw std::runtime_error("checkpoint " + path.string() + ": bad layer count");
  std::vector<int> dims(ndims);
  for (auto& d : dims) d = static_cast<int>(get_uint(in, 4, path));
  if (dims.back() != 1) throw std::runtime_error("checkpoint " + path.string() + ": output width must be 1");
  const auto seed = get_uint(in, 8, path);

  WeightNet net(dims.front(), seed, std::vector<int>(dims.begin() + 1, dims.end() - 1));
  const auto count = get_uint(in, 8, path);
  if (count != static_cast<std::uint64_t>(net.params_.size()))
    throw std::runtime_error("checkpoint " + path.string() + ": parameter count does not match layer spec");
  for (Eigen::Index i = 0; i < net.params_.size(); ++i)
    net.params_(i) = std::bit_cast<double>(get_uint(in, 8, path));
  return net;
}

TrainTrace train(WeightNet& net, const std::vector<Instance>& dataset, const TrainConfig& cfg,
                 const EpochHook& on_epoch) {
  if (dataset.empty()) throw ContractViolation("train: empty dataset");
  if (cfg.batch_size <= 0 || !(cfg.lr > 0.0) || cfg.epochs < 0)
    throw ContractViolation("train: batch size, learning rate and epochs must be positive");
  for (const auto& inst : dataset) {
    if (inst.features.cols() != net.input_dim())
      throw ContractViolation("train: instance dimensionality does not match the network");
    if (!inst.loss) throw ContractViolation("train: instance without a loss");
  }

  TrainTrace trace;
  optim::AdamState adam(net.param_count(), cfg.lr);
  Rng rng(cfg.seed);
  WeightNet::Cache cache;
  Eigen::VectorXd grad_w;

  for (int epoch = 0; epoch < cfg.epochs && !trace.diverged; ++epoch) {
    const auto order = rng.permutation(dataset.size());
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0, in_sum = 0, out_sum = 0;
    long counted = 0, n_in = 0, n_out = 0, batches = 0;
    double grad_norm_sum = 0;

    for (std::size_t start = 0; start < order.size() && !trace.diverged; start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Eigen::VectorXd batch_grad = Eigen::VectorXd::Zero(net.param_count());
      long used = 0;
      for (std::size_t k = start; k < stop; ++k) {
        const Instance& inst = dataset[order[k]];
        const Eigen::VectorXd w = net.forward(inst.features, &cache);
        for (std::size_t i = 0; i < inst.inlier_mask.size() && i < static_cast<std::size_t>(w.size()); ++i) {
          if (inst.inlier_mask[i]) {
            in_sum += w(static_cast<Eigen::Index>(i));
            ++n_in;
          } else {
            out_sum += w(static_cast<Eigen::Index>(i));
            ++n_out;
          }
        }
        double value;
        try {
          value = inst.loss(w, &grad_w);
        } catch (const std::runtime_error&) {
          ++rec.skipped;
          continue;
        }
        if (!std::isfinite(value) || !grad_w.allFinite()) {
          trace.diverged = rec.diverged = true;
          break;
        }
        loss_sum += value;
        ++counted;
        batch_grad += net.backward(cache, grad_w);
        ++used;
      }
      if (trace.diverged || used == 0) continue;
      batch_grad /= static_cast<double>(used);
      grad_norm_sum += batch_grad.norm();
      ++batches;
      optim::adam_step(adam, net.params(), batch_grad);
      ++trace.iterations;
      if (!net.params().allFinite()) trace.diverged = rec.diverged = true;
    }

    rec.mean_loss = counted ? loss_sum / static_cast<double>(counted) : std::nan("");
    rec.mean_inlier_weight = n_in ? in_sum / static_cast<double>(n_in) : 0.0;
    rec.mean_outlier_weight = n_out ? out_sum / static_cast<double>(n_out) : 0.0;
    rec.mean_grad_norm = batches ? grad_norm_sum / static_cast<double>(batches) : 0.0;
    trace.epochs.push_back(rec);
    if (on_epoch) on_epoch(net, rec, trace.iterations);
  }
  return trace;
}

double weight_auc(const Eigen::VectorXd& weights, const std::vector<bool>& inlier_mask) {
  if (static_cast<std::size_t>(weights.size()) != inlier_mask.size())
    throw ContractViolation("weight_auc: mask size does not match weights");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < inlier_mask.size(); ++i)
    (inlier_mask[i] ? pos : neg).push_back(weights(static_cast<Eigen::Index>(i)));
  if (pos.empty() || neg.empty()) return 1.0;
  std::sort(neg.begin(), neg.end());
  double score = 0;
  for (double p : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
    score += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return score / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

}  // namespace eigfree::net
