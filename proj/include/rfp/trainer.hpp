#pragma once

// Experiment driver: epochs over a prepared corpus with augmentation, poly
// learning rate, periodic validation and checkpoints.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "rfp/config.hpp"
#include "rfp/io.hpp"
#include "rfp/log.hpp"
#include "rfp/metrics.hpp"

namespace rfp::train {

/// Preprocessed image plus labels and reference edges.
struct PreparedSample {
  std::string id;
  Tensor image;  // [H, W, D]
  LabelVolume labels;
  edge::EdgeMap edges;
  Spacing spacing{1, 1, 1};
};

PreparedSample prepare(const data::VolumeSample& s, edge::EdgeMode mode);
std::vector<PreparedSample> prepare_all(const std::vector<data::VolumeSample>& s, edge::EdgeMode mode);

/// Eval-mode prediction and metrics for every sample.
metrics::MetricsReport evaluate(net::Network<float>& net, const std::vector<PreparedSample>& samples);

/// Arg-max label volume for one preprocessed [H, W, D] image.
LabelVolume predict_labels(net::Network<float>& net, const Tensor& image);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  net::LossRecord loss;  // mean over the epoch's batches
  std::optional<double> val_dsc;
};

struct TrainResult {
  std::size_t epochs_run = 0;
  std::optional<double> best_val_dsc;
  std::size_t best_epoch = 0;
  std::optional<metrics::MetricsReport> last_val;
  std::vector<EpochRecord> history;
  double seconds = 0;
};

class Trainer {
 public:
  /// Validates the config and initialises the network from cfg.seed.
  Trainer(config::RunConfig cfg, log::Logger& logger);

  /// Parameters, batch-norm buffers, optimiser moments and the epoch counter.
  io::Checkpoint checkpoint() const;
  /// Throws std::invalid_argument on a digest mismatch unless
  /// `ignore_digest`, and on missing or misshapen tensors.
  void restore(const io::Checkpoint& c, bool ignore_digest = false);

  /// Trains from the current epoch up to total_epochs, or at most
  /// `max_epochs` more. Checkpoints go to cfg.output_dir when it is set.
  /// NumericalError propagates after an abort record is logged; checkpoints
  /// already written are left in place.
  TrainResult run(const std::vector<PreparedSample>& train, const std::vector<PreparedSample>& val,
                  std::optional<std::size_t> max_epochs = std::nullopt);

  std::size_t next_epoch() const { return next_epoch_; }
  net::Network<float>& network() { return net_; }
  const net::Adam<float>& optimizer() const { return opt_; }
  const config::RunConfig& config() const { return cfg_; }

 private:
  config::RunConfig cfg_;
  log::Logger& logger_;
  net::Network<float> net_;
  net::Adam<float> opt_;
  std::size_t next_epoch_ = 0;
  std::optional<double> best_;
};

/// Loads the network weights and buffers of a checkpoint written for `cfg`.
/// Throws std::invalid_argument on digest mismatch unless `ignore_digest`.
void load_weights(const io::Checkpoint& c, const config::RunConfig& cfg, net::Network<float>& net,
                  bool ignore_digest = false);

/// The optimiser hyper-parameters stored in a checkpoint:
/// [base_lr, weight_decay, beta1, beta2, eps, next_epoch, total_epochs, steps].
inline constexpr const char* kHparamsTensor = "opt.hparams";

}  // namespace rfp::train
