#include "rfp/network_check.hpp"

#include <memory>
#include <random>

namespace rfp::net {

NetworkConfig micro_config() {
  NetworkConfig cfg;
  cfg.input_shape = {16, 16, 16};
  cfg.stage_channels = {4, 8, 8, 8, 8};
  cfg.num_classes = 3;
  cfg.edge_branch = true;
  cfg.esc_count = 4;
  cfg.dag_count = 4;
  return cfg;
}

namespace {

struct ObjectiveState {
  ObjectiveState(const NetworkConfig& c, std::uint64_t seed) : cfg(c), net(c, seed) {}
  NetworkConfig cfg;
  Network<double> net;
  Tensor64 images, onehot, edge_ref;
  std::vector<std::string> names;
};

}  // namespace

NetworkObjective make_network_objective(const NetworkConfig& cfg, std::size_t batch, std::uint64_t seed) {
  auto st = std::make_shared<ObjectiveState>(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Triple e = cfg.input_shape;

  Tensor64& images = st->images;
  images = Tensor64({batch, 1, e[0], e[1], e[2]});
  std::normal_distribution<double> normal;
  for (double& x : images.data()) x = normal(rng);

  // Labels constant on 4x4x4 blocks so the edge maps are sparse but non-empty.
  std::uniform_int_distribution<int> cls(0, int(cfg.num_classes) - 1);
  std::vector<LabelVolume> labels;
  std::vector<edge::EdgeMap> edges;
  for (std::size_t b = 0; b < batch; ++b) {
    LabelVolume l(e);
    const Triple blocks{(e[0] + 3) / 4, (e[1] + 3) / 4, (e[2] + 3) / 4};
    std::vector<std::uint8_t> pick(blocks[0] * blocks[1] * blocks[2]);
    for (auto& p : pick) p = static_cast<std::uint8_t>(cls(rng));
    for (std::size_t r = 0; r < e[0]; ++r)
      for (std::size_t c = 0; c < e[1]; ++c)
        for (std::size_t z = 0; z < e[2]; ++z)
          l.at(r, c, z) = pick[((r / 4) * blocks[1] + c / 4) * blocks[2] + z / 4];
    edges.push_back(edge::generate_reference_edges(l, edge::EdgeMode::transition));
    labels.push_back(std::move(l));
  }
  std::vector<const LabelVolume*> lp;
  for (const auto& l : labels) lp.push_back(&l);
  std::vector<const edge::EdgeMap*> ep;
  for (const auto& m : edges) ep.push_back(&m);
  st->onehot = one_hot<double>(lp, cfg.num_classes);
  st->edge_ref = edge::edge_tensor<double>(ep);

  NetworkObjective obj;
  for (const auto& [name, t] : st->net.store().params) {
    obj.params.push_back({name, t});
    st->names.push_back(name);
  }

  // Running statistics are updated by every train-mode forward; they do not
  // feed back into train-mode outputs, so repeated evaluation is consistent.
  obj.fn = [st](ad::Tape<double>& tape, const std::vector<ad::Var<double>>& leaves) {
    std::map<std::string, ad::Var<double>> vars;
    for (std::size_t i = 0; i < st->names.size(); ++i) vars.emplace(st->names[i], leaves.at(i));
    ad::Var<double> input = tape.constant(st->images);
    ForwardOutputs<double> out = st->net.forward(tape, vars, input, ad::Mode::train);
    return total_loss(st->cfg, out, st->onehot, st->cfg.edge_branch ? &st->edge_ref : nullptr).total;
  };
  return obj;
}

ad::GradCheckReport network_grad_check(const NetworkConfig& cfg, std::size_t batch, std::uint64_t seed,
                                       const ad::GradCheckOptions& opts) {
  NetworkObjective obj = make_network_objective(cfg, batch, seed);
  return ad::grad_check(obj.fn, obj.params, opts);
}

}  // namespace rfp::net
