#include "rfp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace rfp::train {

PreparedSample prepare(const data::VolumeSample& s, edge::EdgeMode mode) {
  return {s.id, data::preprocess(s.image), s.labels, edge::generate_reference_edges(s.labels, mode), s.spacing};
}

std::vector<PreparedSample> prepare_all(const std::vector<data::VolumeSample>& s, edge::EdgeMode mode) {
  std::vector<PreparedSample> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(prepare(x, mode));
  return out;
}

LabelVolume predict_labels(net::Network<float>& net, const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("predict_labels expects [H, W, D], got " + shape_string(image.shape()));
  const Tensor batch = image.reshaped({1, 1, image.extent(0), image.extent(1), image.extent(2)});
  return net::argmax_labels(net::predict(net, batch), 0);
}

metrics::MetricsReport evaluate(net::Network<float>& net, const std::vector<PreparedSample>& samples) {
  std::vector<metrics::CaseMetrics> cases;
  for (const auto& s : samples) {
    cases.push_back(metrics::evaluate_case(s.id, predict_labels(net, s.image), s.labels, net.config().num_classes,
                                           s.spacing));
  }
  return metrics::summarize(std::move(cases));
}

namespace {

net::AdamConfig adam_config(const config::RunConfig& cfg) {
  net::AdamConfig a;
  a.base_lr = cfg.base_lr;
  a.weight_decay = cfg.weight_decay;
  return a;
}

const config::RunConfig& validated(const config::RunConfig& cfg) {
  cfg.validate();
  return cfg;
}

std::string param_key(const std::string& name) { return "param." + name; }
std::string buffer_key(const std::string& name) { return "buffer." + name; }

void copy_checked(const io::Checkpoint& c, const std::string& key, Tensor& dst) {
  auto it = c.tensors.find(key);
  if (it == c.tensors.end()) throw std::invalid_argument("checkpoint lacks tensor '" + key + "'");
  if (it->second.shape() != dst.shape()) {
    throw std::invalid_argument("checkpoint tensor '" + key + "' has shape " + shape_string(it->second.shape()) +
                                ", network expects " + shape_string(dst.shape()));
  }
  dst = it->second;
}

void check_digest(const io::Checkpoint& c, const config::RunConfig& cfg, bool ignore) {
  const config::Digest d = config::config_digest(cfg);
  if (!ignore && d != c.digest) {
    throw std::invalid_argument("checkpoint config digest " + config::digest_hex(c.digest) +
                                " does not match the run config digest " + config::digest_hex(d));
  }
}

// Per-epoch stream so a resumed run draws the same shuffles and
// augmentations as an uninterrupted one.
std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
  return std::mt19937_64(data::sample_seed(seed ^ 0x5bd1e995ULL, epoch));
}

}  // namespace

void load_weights(const io::Checkpoint& c, const config::RunConfig& cfg, net::Network<float>& net,
                  bool ignore_digest) {
  check_digest(c, cfg, ignore_digest);
  for (auto& [name, t] : net.store().params) copy_checked(c, param_key(name), t);
  for (auto& [name, t] : net.store().buffers) copy_checked(c, buffer_key(name), t);
}

Trainer::Trainer(config::RunConfig cfg, log::Logger& logger)
    : cfg_(validated(cfg)), logger_(logger), net_(cfg_.net, cfg_.seed), opt_(adam_config(cfg_)) {}

io::Checkpoint Trainer::checkpoint() const {
  io::Checkpoint c;
  c.digest = config::config_digest(cfg_);
  c.config_text = config::canonical_text(cfg_);
  for (const auto& [name, t] : net_.store().params) c.tensors.emplace(param_key(name), t);
  for (const auto& [name, t] : net_.store().buffers) c.tensors.emplace(buffer_key(name), t);
  for (const auto& [name, t] : opt_.first_moment()) c.tensors.emplace("opt." + name + ".m", t);
  for (const auto& [name, t] : opt_.second_moment()) c.tensors.emplace("opt." + name + ".v", t);
  const net::AdamConfig& a = opt_.config();
  c.tensors.emplace(kHparamsTensor,
                    Tensor({8}, std::vector<float>{float(a.base_lr), float(a.weight_decay), float(a.beta1),
                                                   float(a.beta2), float(a.eps), float(next_epoch_),
                                                   float(cfg_.total_epochs), float(opt_.steps())}));
  return c;
}

void Trainer::restore(const io::Checkpoint& c, bool ignore_digest) {
  load_weights(c, cfg_, net_, ignore_digest);
  auto it = c.tensors.find(kHparamsTensor);
  if (it == c.tensors.end() || it->second.size() != 8) {
    throw std::invalid_argument("checkpoint lacks optimiser state '" + std::string(kHparamsTensor) + "'");
  }
  const Tensor& h = it->second;
  next_epoch_ = static_cast<std::size_t>(h[5]);
  opt_ = net::Adam<float>(adam_config(cfg_));
  opt_.set_steps(static_cast<std::uint64_t>(h[7]));
  for (const auto& [name, t] : net_.store().params) {
    auto m = c.tensors.find("opt." + name + ".m");
    auto v = c.tensors.find("opt." + name + ".v");
    if (m == c.tensors.end() || v == c.tensors.end()) {
      if (opt_.steps() == 0) continue;
      throw std::invalid_argument("checkpoint lacks optimiser moments for '" + name + "'");
    }
    opt_.first_moment()[name] = m->second;
    opt_.second_moment()[name] = v->second;
  }
}

TrainResult Trainer::run(const std::vector<PreparedSample>& train, const std::vector<PreparedSample>& val,
                         std::optional<std::size_t> max_epochs) {
  if (train.empty()) throw std::invalid_argument("training set is empty");
  const auto t_start = std::chrono::steady_clock::now();
  const std::filesystem::path out_dir = cfg_.output_dir;
  if (!cfg_.output_dir.empty()) std::filesystem::create_directories(out_dir);
  const Triple e = cfg_.net.input_shape;
  for (const auto& s : train) {
    if (s.labels.extent != e) throw ShapeError("training sample " + s.id + " does not match input_shape");
  }

  TrainResult result;
  const std::size_t total = cfg_.total_epochs;
  const std::size_t stop = max_epochs ? std::min(total, next_epoch_ + *max_epochs) : total;
  if (cfg_.batch_size == 1 || train.size() % cfg_.batch_size == 1) {
    logger_.write(log::Record("note").add("batch_norm", "single-sample batches use per-sample statistics"));
  }
  logger_.write(log::Record("start")
                    .add("digest", config::digest_hex(config::config_digest(cfg_)))
                    .add("parameters", net_.store().parameter_count())
                    .add("start_epoch", next_epoch_)
                    .add("total_epochs", total)
                    .add("base_lr", cfg_.base_lr)
                    .add("weight_decay", cfg_.weight_decay));

  for (std::size_t epoch = next_epoch_; epoch < stop; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    const double lr = net::poly_lr(cfg_.base_lr, double(epoch), double(total));
    std::mt19937_64 rng = epoch_rng(cfg_.seed, epoch);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    net::LossRecord sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t n = std::min(cfg_.batch_size, order.size() - start);
      net::Batch batch;
      batch.images = Tensor({n, 1, e[0], e[1], e[2]});
      const std::size_t vox = e[0] * e[1] * e[2];
      for (std::size_t b = 0; b < n; ++b) {
        const PreparedSample& s = train[order[start + b]];
        const data::AugmentDraw draw = data::draw_augment(rng, cfg_.augment);
        data::TrainingSample aug = data::apply_augment({s.image, s.labels, s.edges}, draw);
        std::copy(aug.image.data().begin(), aug.image.data().end(), batch.images.ptr() + b * vox);
        batch.labels.push_back(std::move(aug.labels));
        batch.edges.push_back(std::move(aug.edges));
      }
      net::LossRecord r;
      try {
        r = net::train_step(net_, opt_, batch, lr);
      } catch (const NumericalError& err) {
        logger_.write(log::Record("abort").add("epoch", epoch).add("batch", batches).add("reason", "numerical"),
                      log::Level::quiet);
        logger_.message(err.what(), log::Level::quiet);
        throw;
      }
      sum.total += r.total;
      sum.dice_decoder += r.dice_decoder;
      sum.ce_decoder += r.ce_decoder;
      sum.dice_final += r.dice_final;
      sum.ce_final += r.ce_final;
      sum.edge += r.edge;
      ++batches;
    }
    const double inv = 1.0 / double(batches);
    EpochRecord rec{epoch, lr,
                    {sum.total * inv, sum.dice_decoder * inv, sum.ce_decoder * inv, sum.dice_final * inv,
                     sum.ce_final * inv, sum.edge * inv},
                    std::nullopt};
    next_epoch_ = epoch + 1;

    log::Record line("epoch");
    line.add("epoch", epoch)
        .add("lr", lr)
        .add("loss_total", rec.loss.total)
        .add("dice_decoder", rec.loss.dice_decoder)
        .add("ce_decoder", rec.loss.ce_decoder)
        .add("dice_final", rec.loss.dice_final)
        .add("ce_final", rec.loss.ce_final)
        .add("edge", rec.loss.edge);

    const bool last = next_epoch_ == total;
    if (!val.empty() && (next_epoch_ % cfg_.val_every == 0 || last || next_epoch_ == stop)) {
      metrics::MetricsReport rep = evaluate(net_, val);
      rec.val_dsc = rep.mean_foreground_dsc();
      line.add("val_dsc", *rec.val_dsc);
      for (std::size_t k = 0; k < rep.dsc.size(); ++k) {
        line.add("val_dsc_" + std::to_string(k + 1), rep.dsc[k].mean);
      }
      if (!best_ || *rec.val_dsc > *best_) {
        best_ = rec.val_dsc;
        result.best_epoch = epoch;
        if (!cfg_.output_dir.empty()) io::write_checkpoint(out_dir / "best.rfpc", checkpoint());
      }
      result.last_val = std::move(rep);
    }
    line.add("seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count());
    logger_.write(line);
    result.history.push_back(rec);

    if (!cfg_.output_dir.empty() && next_epoch_ % cfg_.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "epoch_%04zu.rfpc", next_epoch_);
      io::write_checkpoint(out_dir / name, checkpoint());
    }
  }
  result.epochs_run = result.history.size();
  result.best_val_dsc = best_;
  if (next_epoch_ == total) {
    logger_.write(log::Record("schedule_end").add("epoch", total).add("lr", net::poly_lr(cfg_.base_lr, double(total), double(total))));
  }
  if (!cfg_.output_dir.empty()) io::write_checkpoint(out_dir / "final.rfpc", checkpoint());
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  logger_.write(log::Record("done").add("epochs_run", result.epochs_run).add("seconds", result.seconds));
  return result;
}

}  // namespace rfp::train
