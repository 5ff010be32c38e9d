#pragma once

// The full segmentation network: shared encoder, edge sub-network, decoder
// with edge skip-connections and deep supervision, RFP head and output
// fusion; plus the composite loss and the optimiser step.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rfp/autodiff.hpp"
#include "rfp/edge.hpp"
#include "rfp/rfp_head.hpp"

namespace rfp::net {

struct NetworkConfig {
  Triple input_shape{32, 32, 16};
  std::array<std::size_t, 5> stage_channels{16, 32, 64, 128, 256};
  std::size_t num_classes = 4;
  /// Edge detector branch and its loss. ESCs need it.
  bool edge_branch = true;
  std::size_t esc_count = 4;
  /// 0 removes the RFP head entirely.
  std::size_t dag_count = 4;
  graph::Neighborhood neighborhood = graph::Neighborhood::four;
  head::Fusion fusion = head::Fusion::sum;
  double lambda_decoder = 1.0;
  double lambda_final = 1.0;
  double lambda_edge = 1.0;
  ad::BatchNormConfig bn;

  /// Throws std::invalid_argument describing the first violated rule.
  void validate() const;
  Triple stage_extent(std::size_t stage) const;  // stage in 1..5
};

/// Named trainable tensors and batch-norm buffers. std::map keeps a stable
/// iteration order and stable element addresses.
template <typename T>
struct ParamStore {
  std::map<std::string, BasicTensor<T>> params;
  std::map<std::string, BasicTensor<T>> buffers;

  std::size_t parameter_count() const;
};

template <typename T>
struct ForwardOutputs {
  std::array<ad::Var<T>, 5> encoder;       // E1..E5 at index 0..4
  std::array<ad::Var<T>, 4> decoder;       // D1..D4 at index 0..3
  std::array<ad::Var<T>, 4> side_outputs;  // full resolution, index 0 = block 1
  std::optional<ad::Var<T>> edge_features;
  std::optional<ad::Var<T>> edge_logits;
  std::optional<ad::Var<T>> rfp_logits;    // full resolution
  ad::Var<T> decoder_scores;               // K-channel projection of the side outputs
  ad::Var<T> final_logits;
};

template <typename T>
class Network {
 public:
  Network(NetworkConfig cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }

  /// One leaf per trainable tensor on `tape`.
  std::map<std::string, ad::Var<T>> bind(ad::Tape<T>& tape) const;

  /// input [N, 1, H, W, D]. Train mode updates batch-norm running stats.
  ForwardOutputs<T> forward(ad::Tape<T>& tape, const std::map<std::string, ad::Var<T>>& vars,
                            ad::Var<T> input, ad::Mode mode);

 private:
  NetworkConfig cfg_;
  ParamStore<T> store_;
  std::shared_ptr<const std::vector<graph::DagLayout>> layouts_;
};

/// Soft Dice (per class, epsilon 1e-5, averaged over classes) plus mean
/// cross-entropy with probabilities clamped at 1e-7. probs and onehot are
/// [N, K, H, W, D]; the batch is pooled into one voxel set.
template <typename T>
struct SegLoss {
  ad::Var<T> total;
  double dice = 0;
  double ce = 0;
};

template <typename T>
SegLoss<T> seg_loss(ad::Var<T> probs, const BasicTensor<T>& onehot);

struct LossRecord {
  double total = 0;
  double dice_decoder = 0, ce_decoder = 0;
  double dice_final = 0, ce_final = 0;
  double edge = 0;  // 0 when the edge branch is off
};

template <typename T>
struct TotalLoss {
  ad::Var<T> total;
  LossRecord record;
};

/// lambda_decoder * seg(decoder scores) + lambda_final * seg(final logits)
/// + lambda_edge * weighted_bce(edge logits) when the edge branch is on.
template <typename T>
TotalLoss<T> total_loss(const NetworkConfig& cfg, const ForwardOutputs<T>& out, const BasicTensor<T>& onehot,
                        const BasicTensor<T>* edge_reference);

/// labels [N][H, W, D] -> [N, K, H, W, D]
template <typename T>
BasicTensor<T> one_hot(const std::vector<const LabelVolume*>& labels, std::size_t classes);

/// Arg-max over channels of [N, K, H, W, D] for sample n.
template <typename T>
LabelVolume argmax_labels(const BasicTensor<T>& logits, std::size_t n);

/// lr_b * (1 - epoch / total)^power
double poly_lr(double base_lr, double epoch, double total_epochs, double power = 0.9);

struct AdamConfig {
  double base_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 3e-4;
};

/// Adam with decoupled weight decay applied to every trainable tensor:
///   p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::map<std::string, BasicTensor<T>>& params,
            const std::map<std::string, BasicTensor<T>>& grads, double lr);

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return steps_; }
  std::map<std::string, BasicTensor<T>>& first_moment() { return m_; }
  std::map<std::string, BasicTensor<T>>& second_moment() { return v_; }
  const std::map<std::string, BasicTensor<T>>& first_moment() const { return m_; }
  const std::map<std::string, BasicTensor<T>>& second_moment() const { return v_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

 private:
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
  std::map<std::string, BasicTensor<T>> m_;
  std::map<std::string, BasicTensor<T>> v_;
};

struct Batch {
  Tensor images;                 // [N, 1, H, W, D]
  std::vector<LabelVolume> labels;
  std::vector<edge::EdgeMap> edges;
};

/// Forward, composite loss, backward and one Adam update at learning rate
/// `lr`. Throws NumericalError naming every loss component when the loss is
/// not finite; parameters are left untouched in that case.
LossRecord train_step(Network<float>& net, Adam<float>& opt, const Batch& batch, double lr);

/// Eval-mode forward; returns the final logits [N, K, H, W, D].
Tensor predict(Network<float>& net, const Tensor& images);

}  // namespace rfp::net
