#include "rfp/segnet.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace rfp::net {

void NetworkConfig::validate() const {
  if (input_shape[0] % 16 != 0 || input_shape[1] % 16 != 0 || input_shape[2] % 16 != 0) {
    throw std::invalid_argument("input shape " + std::to_string(input_shape[0]) + "x" +
                                std::to_string(input_shape[1]) + "x" + std::to_string(input_shape[2]) +
                                " must be divisible by 16 on every axis");
  }
  for (std::size_t s = 0; s < 5; ++s) {
    if (stage_channels[s] == 0) {
      throw std::invalid_argument("stage " + std::to_string(s + 1) + " has zero channels");
    }
  }
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  if (esc_count > 4) throw std::invalid_argument("esc_count must be in 0..4");
  if (dag_count > 4) throw std::invalid_argument("dag_count must be in 0..4");
  if (esc_count > 0 && !edge_branch) {
    throw std::invalid_argument("edge skip-connections require the edge branch");
  }
  if (lambda_decoder < 0 || lambda_final < 0 || lambda_edge < 0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
}

Triple NetworkConfig::stage_extent(std::size_t stage) const {
  if (stage < 1 || stage > 5) throw std::out_of_range("stage must be in 1..5");
  const std::size_t f = std::size_t{1} << (stage - 1);
  return {input_shape[0] / f, input_shape[1] / f, input_shape[2] / f};
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

namespace {

const ops::ConvGeometry kSame{{1, 1, 1}, {1, 1, 1}};
const ops::ConvGeometry kDown{{2, 2, 2}, {1, 1, 1}};
const ops::ConvGeometry kPoint{};

template <typename T>
void add_unit(ParamStore<T>& s, const std::string& prefix, ad::ConvUnitParams<T> u) {
  s.params[prefix + ".kernel"] = std::move(u.kernel);
  s.params[prefix + ".bias"] = std::move(u.bias);
  s.params[prefix + ".gamma"] = std::move(u.bn_gamma);
  s.params[prefix + ".beta"] = std::move(u.bn_beta);
  s.buffers[prefix + ".running_mean"] = std::move(u.bn_running_mean);
  s.buffers[prefix + ".running_var"] = std::move(u.bn_running_var);
}

template <typename T>
void add_pointwise(ParamStore<T>& s, const std::string& prefix, std::size_t in, std::size_t out,
                   std::mt19937_64& rng) {
  s.params[prefix + ".kernel"] = ad::uniform_tensor<T>({out, in, 1, 1, 1}, std::sqrt(6.0 / double(in)), rng);
  s.params[prefix + ".bias"] = BasicTensor<T>({out});
}

template <typename T>
ad::Var<T> var(const std::map<std::string, ad::Var<T>>& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::logic_error("network parameter '" + name + "' is not bound");
  return it->second;
}

template <typename T>
ad::ConvUnitVars<T> unit_vars(const std::map<std::string, ad::Var<T>>& vars, ParamStore<T>& s,
                              const std::string& prefix) {
  return {var(vars, prefix + ".kernel"), var(vars, prefix + ".bias"), var(vars, prefix + ".gamma"),
          var(vars, prefix + ".beta"),
          {&s.buffers.at(prefix + ".running_mean"), &s.buffers.at(prefix + ".running_var")}};
}

template <typename T>
ad::Var<T> pointwise(ad::Var<T> x, const std::map<std::string, ad::Var<T>>& vars, const std::string& prefix) {
  return ad::conv3d(x, var(vars, prefix + ".kernel"), var(vars, prefix + ".bias"), kPoint);
}

Triple spatial(const Shape& s) { return {s[2], s[3], s[4]}; }

head::HeadConfig head_config(const NetworkConfig& cfg) {
  head::HeadConfig h;
  h.channels = cfg.stage_channels[4];
  h.classes = cfg.num_classes;
  h.extent = cfg.stage_extent(5);
  h.directions = graph::directions_for_count(cfg.dag_count);
  h.neighborhood = cfg.neighborhood;
  h.fusion = cfg.fusion;
  return h;
}

}  // namespace

template <typename T>
Network<T>::Network(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const auto& c = cfg_.stage_channels;
  const std::size_t k = cfg_.num_classes;
  auto unit = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t ks) {
    add_unit(store_, name, ad::ConvUnitParams<T>::init(in, out, ks, rng));
  };

  unit("enc1.u1", 1, c[0], 3);
  for (std::size_t s = 2; s <= 5; ++s) {
    unit("enc" + std::to_string(s) + ".u1", c[s - 2], c[s - 1], 3);
    unit("enc" + std::to_string(s) + ".u2", c[s - 1], c[s - 1], 3);
  }

  if (cfg_.edge_branch) {
    auto e = edge::EdgeSubnetParams<T>::init(c[1], c[4], rng);
    add_unit(store_, "edge.adapt", std::move(e.adapt));
    add_unit(store_, "edge.u1", std::move(e.unit1));
    add_unit(store_, "edge.u2", std::move(e.unit2));
    store_.params["edge.head.kernel"] = std::move(e.head_kernel);
    store_.params["edge.head.bias"] = std::move(e.head_bias);
  }

  for (std::size_t s = 4; s >= 1; --s) {
    std::size_t in = c[s] + c[s - 1];
    if (s <= cfg_.esc_count) in += c[1];
    unit("dec" + std::to_string(s) + ".u1", in, c[s - 1], 3);
    unit("dec" + std::to_string(s) + ".u2", c[s - 1], c[s - 1], 3);
    add_pointwise(store_, "side" + std::to_string(s), c[s - 1], k, rng);
  }

  std::size_t fused_in = 4 * k;
  if (cfg_.dag_count > 0) {
    head::HeadConfig hc = head_config(cfg_);
    auto h = head::RfpHeadParams<T>::init(hc, rng);
    store_.params["rfp.U"] = std::move(h.U);
    store_.params["rfp.W"] = std::move(h.W);
    store_.params["rfp.b"] = std::move(h.b);
    store_.params["rfp.proj.kernel"] = std::move(h.proj_kernel);
    store_.params["rfp.proj.bias"] = std::move(h.proj_bias);
    if (cfg_.fusion == head::Fusion::concat) {
      store_.params["rfp.fuse.kernel"] = std::move(h.fuse_kernel);
      store_.params["rfp.fuse.bias"] = std::move(h.fuse_bias);
    }
    layouts_ = std::make_shared<const std::vector<graph::DagLayout>>(head::build_layouts(hc));
    fused_in += k;
  }
  add_pointwise(store_, "fusion", fused_in, k, rng);
  add_pointwise(store_, "decoder_scores", 4 * k, k, rng);
}

template <typename T>
std::map<std::string, ad::Var<T>> Network<T>::bind(ad::Tape<T>& tape) const {
  std::map<std::string, ad::Var<T>> out;
  for (const auto& [name, t] : store_.params) out.emplace(name, tape.leaf(t));
  return out;
}

template <typename T>
ForwardOutputs<T> Network<T>::forward(ad::Tape<T>& tape, const std::map<std::string, ad::Var<T>>& vars,
                                      ad::Var<T> input, ad::Mode mode) {
  (void)tape;
  const Shape& in_shape = input.shape();
  if (in_shape.size() != 5 || in_shape[1] != 1 || spatial(in_shape) != cfg_.input_shape) {
    throw ShapeError("network input " + shape_string(in_shape) + " vs configured [N, 1, " +
                     std::to_string(cfg_.input_shape[0]) + ", " + std::to_string(cfg_.input_shape[1]) + ", " +
                     std::to_string(cfg_.input_shape[2]) + "]");
  }
  const ad::BatchNormConfig& bn = cfg_.bn;
  auto unit = [&](ad::Var<T> x, const std::string& name, const ops::ConvGeometry& geo) {
    return ad::conv_unit(x, unit_vars(vars, store_, name), geo, mode, bn);
  };

  ForwardOutputs<T> out;
  out.encoder[0] = unit(input, "enc1.u1", kSame);
  for (std::size_t s = 2; s <= 5; ++s) {
    const std::string p = "enc" + std::to_string(s);
    ad::Var<T> x = out.encoder[s - 2];
    if (s == 4) {
      x = ad::maxpool3d(x, {2, 2, 2}, {2, 2, 2});
      x = unit(x, p + ".u1", kSame);
    } else {
      x = unit(x, p + ".u1", kDown);
    }
    out.encoder[s - 1] = unit(x, p + ".u2", kSame);
  }

  if (cfg_.edge_branch) {
    edge::EdgeSubnetVars<T> ev{unit_vars(vars, store_, "edge.adapt"), unit_vars(vars, store_, "edge.u1"),
                               unit_vars(vars, store_, "edge.u2"), var(vars, "edge.head.kernel"),
                               var(vars, "edge.head.bias")};
    edge::EdgeOutputs<T> eo =
        edge::edge_subnet_forward(out.encoder[1], out.encoder[4], ev, cfg_.input_shape, mode, bn);
    out.edge_features = eo.features;
    out.edge_logits = eo.logits;
  }

  ad::Var<T> prev = out.encoder[4];
  for (std::size_t s = 4; s >= 1; --s) {
    const std::string p = "dec" + std::to_string(s);
    const Triple ext = cfg_.stage_extent(s);
    std::vector<ad::Var<T>> parts{ad::resize_trilinear(prev, ext), out.encoder[s - 1]};
    if (s <= cfg_.esc_count) parts.push_back(ad::resize_trilinear(*out.edge_features, ext));
    ad::Var<T> x = unit(ad::concat_channels(parts), p + ".u1", kSame);
    x = unit(x, p + ".u2", kSame);
    out.decoder[s - 1] = x;
    ad::Var<T> side = pointwise(x, vars, "side" + std::to_string(s));
    out.side_outputs[s - 1] = ad::resize_trilinear(side, cfg_.input_shape);
    prev = x;
  }

  std::vector<ad::Var<T>> sides(out.side_outputs.begin(), out.side_outputs.end());
  out.decoder_scores = pointwise(ad::concat_channels(sides), vars, "decoder_scores");

  std::vector<ad::Var<T>> fused = sides;
  if (cfg_.dag_count > 0) {
    head::RfpHeadVars<T> hv{var(vars, "rfp.U"), var(vars, "rfp.W"), var(vars, "rfp.b"),
                            var(vars, "rfp.proj.kernel"), var(vars, "rfp.proj.bias"), {}, {}};
    if (cfg_.fusion == head::Fusion::concat) {
      hv.fuse_kernel = var(vars, "rfp.fuse.kernel");
      hv.fuse_bias = var(vars, "rfp.fuse.bias");
    }
    head::RfpOutputs<T> ro = head::rfp_forward(out.encoder[4], hv, layouts_, cfg_.fusion);
    out.rfp_logits = head::logits_to_fullres(ro.logits, cfg_.input_shape);
    fused.push_back(*out.rfp_logits);
  }
  out.final_logits = pointwise(ad::concat_channels(fused), vars, "fusion");
  return out;
}

template <typename T>
SegLoss<T> seg_loss(ad::Var<T> probs, const BasicTensor<T>& onehot) {
  const Shape& s = probs.shape();
  if (s != onehot.shape()) {
    throw ShapeError("segmentation loss: probabilities " + shape_string(s) + " vs one-hot " +
                     shape_string(onehot.shape()));
  }
  if (s.size() != 5) throw ShapeError("segmentation loss expects [N, K, H, W, D], got " + shape_string(s));
  const std::size_t n = s[0], k = s[1], vox = s[2] * s[3] * s[4];
  constexpr double kEps = 1e-5;
  constexpr double kClamp = 1e-7;
  const BasicTensor<T>& p = probs.value();

  // Per-class sums pooled over batch and voxels.
  std::vector<double> inter(k, 0.0), ysq(k, 0.0), psq(k, 0.0);
  double ce = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t base = (b * k + c) * vox;
      for (std::size_t v = 0; v < vox; ++v) {
        const double pv = p[base + v];
        const double yv = onehot[base + v];
        inter[c] += yv * pv;
        ysq[c] += yv * yv;
        psq[c] += pv * pv;
        if (yv != 0) ce -= yv * std::log(std::max(pv, kClamp));
      }
    }
  }
  const double total_vox = double(n * vox);
  ce /= total_vox;
  double dice_sum = 0;
  std::vector<double> num(k), den(k);
  for (std::size_t c = 0; c < k; ++c) {
    num[c] = 2 * inter[c] + kEps;
    den[c] = ysq[c] + psq[c] + kEps;
    dice_sum += num[c] / den[c];
  }
  const double dice_loss = 1.0 - dice_sum / double(k);
  const double total = dice_loss + ce;

  auto y = std::make_shared<BasicTensor<T>>(onehot);
  const std::size_t pid = probs.id;
  ad::Var<T> v = probs.tape->record(
      "seg_loss", {pid}, BasicTensor<T>::scalar(T(total)), [=](ad::Tape<T>& t, std::size_t self) {
        const double g = t.grad(self).item();
        const BasicTensor<T>& pv = t.value(pid);
        BasicTensor<T> gp(pv.shape());
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t c = 0; c < k; ++c) {
            const std::size_t base = (b * k + c) * vox;
            const double inv_den2 = 1.0 / (den[c] * den[c]);
            for (std::size_t i = 0; i < vox; ++i) {
              const double pi = pv[base + i];
              const double yi = (*y)[base + i];
              double d = -(2 * yi * den[c] - 2 * pi * num[c]) * inv_den2 / double(k);
              if (yi != 0 && pi >= kClamp) d -= yi / (pi * total_vox);
              gp[base + i] = T(g * d);
            }
          }
        }
        t.accumulate(pid, std::move(gp));
      });
  return {v, dice_loss, ce};
}

template <typename T>
TotalLoss<T> total_loss(const NetworkConfig& cfg, const ForwardOutputs<T>& out, const BasicTensor<T>& onehot,
                        const BasicTensor<T>* edge_reference) {
  SegLoss<T> dec = seg_loss(ad::softmax_channels(out.decoder_scores), onehot);
  SegLoss<T> fin = seg_loss(ad::softmax_channels(out.final_logits), onehot);
  ad::Var<T> total = ad::add(ad::scale(dec.total, T(cfg.lambda_decoder)), ad::scale(fin.total, T(cfg.lambda_final)));
  LossRecord rec;
  rec.dice_decoder = dec.dice;
  rec.ce_decoder = dec.ce;
  rec.dice_final = fin.dice;
  rec.ce_final = fin.ce;
  if (cfg.edge_branch) {
    if (!out.edge_logits || !edge_reference) {
      throw std::invalid_argument("edge branch enabled but no edge logits or reference edges supplied");
    }
    ad::Var<T> e = edge::weighted_bce(*out.edge_logits, *edge_reference);
    rec.edge = double(e.value().item());
    total = ad::add(total, ad::scale(e, T(cfg.lambda_edge)));
  }
  rec.total = double(total.value().item());
  return {total, rec};
}

template <typename T>
BasicTensor<T> one_hot(const std::vector<const LabelVolume*>& labels, std::size_t classes) {
  if (labels.empty()) throw std::invalid_argument("one_hot of an empty batch");
  const Triple e = labels.front()->extent;
  const std::size_t vox = e[0] * e[1] * e[2];
  BasicTensor<T> out({labels.size(), classes, e[0], e[1], e[2]});
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b]->extent != e) throw ShapeError("label volumes in a batch differ in extent");
    for (std::size_t v = 0; v < vox; ++v) {
      const std::size_t c = labels[b]->data[v];
      if (c >= classes) {
        throw std::invalid_argument("label " + std::to_string(c) + " outside 0.." + std::to_string(classes - 1));
      }
      out[(b * classes + c) * vox + v] = T{1};
    }
  }
  return out;
}

template <typename T>
LabelVolume argmax_labels(const BasicTensor<T>& logits, std::size_t n) {
  const Shape& s = logits.shape();
  if (s.size() != 5 || n >= s[0]) throw ShapeError("argmax_labels on " + shape_string(s));
  const std::size_t k = s[1], vox = s[2] * s[3] * s[4];
  LabelVolume out({s[2], s[3], s[4]});
  for (std::size_t v = 0; v < vox; ++v) {
    std::size_t best = 0;
    T best_v = logits[(n * k) * vox + v];
    for (std::size_t c = 1; c < k; ++c) {
      const T x = logits[(n * k + c) * vox + v];
      if (x > best_v) {
        best_v = x;
        best = c;
      }
    }
    out.data[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

double poly_lr(double base_lr, double epoch, double total_epochs, double power) {
  if (total_epochs <= 0) throw std::invalid_argument("total_epochs must be positive");
  const double frac = std::clamp(epoch / total_epochs, 0.0, 1.0);
  return base_lr * std::pow(1.0 - frac, power);
}

template <typename T>
void Adam<T>::step(std::map<std::string, BasicTensor<T>>& params,
                   const std::map<std::string, BasicTensor<T>>& grads, double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw std::logic_error("no gradient for parameter '" + name + "'");
    if (g->second.shape() != p.shape()) {
      throw ShapeError("gradient for '" + name + "' has shape " + shape_string(g->second.shape()) +
                       " vs parameter " + shape_string(p.shape()));
    }
    auto [mi, m_new] = m_.try_emplace(name, p.shape());
    auto [vi, v_new] = v_.try_emplace(name, p.shape());
    BasicTensor<T>& m = mi->second;
    BasicTensor<T>& v = vi->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g->second[i];
      const double mm = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi;
      const double vv = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi;
      m[i] = T(mm);
      v[i] = T(vv);
      const double update = (mm / bc1) / (std::sqrt(vv / bc2) + cfg_.eps) + cfg_.weight_decay * double(p[i]);
      p[i] = T(double(p[i]) - lr * update);
    }
  }
}

LossRecord train_step(Network<float>& net, Adam<float>& opt, const Batch& batch, double lr) {
  const NetworkConfig& cfg = net.config();
  std::vector<const LabelVolume*> labels;
  for (const auto& l : batch.labels) labels.push_back(&l);
  Tensor onehot = one_hot<float>(labels, cfg.num_classes);
  Tensor edges;
  if (cfg.edge_branch) {
    std::vector<const edge::EdgeMap*> maps;
    for (const auto& e : batch.edges) maps.push_back(&e);
    if (maps.size() != labels.size()) throw std::invalid_argument("batch has labels but no reference edges");
    edges = edge::edge_tensor<float>(maps);
  }

  // Running statistics are only committed once the step succeeds.
  std::map<std::string, Tensor> saved_buffers = net.store().buffers;
  ad::Tape<float> tape;
  auto vars = net.bind(tape);
  ad::Var<float> input = tape.constant(batch.images);
  std::optional<TotalLoss<float>> computed;
  try {
    ForwardOutputs<float> out = net.forward(tape, vars, input, ad::Mode::train);
    computed = total_loss(cfg, out, onehot, cfg.edge_branch ? &edges : nullptr);
  } catch (const NumericalError& e) {
    net.store().buffers = std::move(saved_buffers);
    throw NumericalError(std::string("forward pass: ") + e.what());
  }
  const TotalLoss<float>& loss = *computed;

  const LossRecord& r = loss.record;
  auto fail = [&](const std::string& what) {
    net.store().buffers = std::move(saved_buffers);
    std::ostringstream msg;
    msg << what << ": total=" << r.total << " dice_decoder=" << r.dice_decoder << " ce_decoder=" << r.ce_decoder
        << " dice_final=" << r.dice_final << " ce_final=" << r.ce_final << " edge=" << r.edge;
    throw NumericalError(msg.str());
  };
  if (!std::isfinite(r.total)) fail("non-finite loss");
  tape.backward(loss.total);
  std::map<std::string, Tensor> grads;
  for (const auto& [name, v] : vars) {
    const Tensor& g = tape.grad(v);
    for (float x : g.data()) {
      if (!std::isfinite(x)) fail("non-finite gradient for parameter '" + name + "'");
    }
    grads.emplace(name, g);
  }
  opt.step(net.store().params, grads, lr);
  return r;
}

Tensor predict(Network<float>& net, const Tensor& images) {
  ad::Tape<float> tape;
  auto vars = net.bind(tape);
  ad::Var<float> input = tape.constant(images);
  ForwardOutputs<float> out = net.forward(tape, vars, input, ad::Mode::eval);
  return out.final_logits.value();
}

#define RFP_INSTANTIATE(T)                                                                             \
  template struct ParamStore<T>;                                                                      \
  template class Network<T>;                                                                          \
  template SegLoss<T> seg_loss(ad::Var<T>, const BasicTensor<T>&);                                    \
  template TotalLoss<T> total_loss(const NetworkConfig&, const ForwardOutputs<T>&, const BasicTensor<T>&, \
                                   const BasicTensor<T>*);                                            \
  template BasicTensor<T> one_hot(const std::vector<const LabelVolume*>&, std::size_t);               \
  template LabelVolume argmax_labels(const BasicTensor<T>&, std::size_t);                             \
  template class Adam<T>;

RFP_INSTANTIATE(float)
RFP_INSTANTIATE(double)
#undef RFP_INSTANTIATE

}  // namespace rfp::net
