#include "rfp/check_suite.hpp"

#include <chrono>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>

#include "rfp/edge.hpp"
#include "rfp/network_check.hpp"
#include "rfp/rfp_head.hpp"
#include "rfp/segnet.hpp"

namespace rfp::check {

namespace {

using ad::GradCheckOptions;
using ad::GradCheckReport;
using ad::NamedParam;
using ad::Tape;
using ad::Var;

Tensor64 random(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Contracts an output with fixed random weights into a scalar.
Var<double> project(Tape<double>& t, Var<double> y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(y, t.constant(random(y.shape(), rng))));
}

using CaseFn = std::function<GradCheckReport(std::uint64_t)>;

struct Case {
  std::string name;
  CaseFn fn;
};

GradCheckReport check(const ad::GradFn& fn, const std::vector<NamedParam>& params) {
  return ad::grad_check(fn, params, GradCheckOptions{});
}

std::vector<Case> op_cases() {
  std::vector<Case> c;
  c.push_back({"elementwise", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const Shape sh{2, 3, 2, 3, 2};
                 return check(
                     [](Tape<double>& t, const std::vector<Var<double>>& p) {
                       Var<double> y = ad::add(ad::mul(p[0], ad::sigmoid(p[1])), ad::scale(ad::relu(p[0]), 0.3));
                       return project(t, ad::softmax_channels(y), 1);
                     },
                     {{"a", random(sh, rng)}, {"b", random(sh, rng)}});
               }});
  c.push_back({"shape_ops", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 return check(
                     [](Tape<double>& t, const std::vector<Var<double>>& p) {
                       Var<double> cat = ad::concat_channels<double>({p[0], p[1]});
                       Var<double> sl = ad::slice_channels(cat, 1, 3);
                       return project(t, ad::stack_depth<double>({ad::slice_depth(sl, 2, 1), ad::slice_depth(sl, 0, 2)}),
                                      2);
                     },
                     {{"a", random({1, 2, 2, 2, 3}, rng)}, {"b", random({1, 2, 2, 2, 3}, rng)}});
               }});
  c.push_back({"matvec", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 return check([](Tape<double>& t,
                                 const std::vector<Var<double>>& p) { return project(t, ad::matvec(p[0], p[1]), 3); },
                              {{"m", random({4, 3}, rng)}, {"v", random({3}, rng)}});
               }});
  for (std::size_t st : {1, 2}) {
    c.push_back({"conv3d_stride" + std::to_string(st), [st](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   return check(
                       [st](Tape<double>& t, const std::vector<Var<double>>& p) {
                         return project(t, ad::conv3d(p[0], p[1], p[2], {{st, st, 1}, {1, 1, 1}}), 4);
                       },
                       {{"x", random({1, 2, 6, 6, 3}, rng)},
                        {"kernel", random({3, 2, 3, 3, 3}, rng)},
                        {"bias", random({3}, rng)}});
                 }});
  }
  c.push_back({"maxpool3d", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 return check(
                     [](Tape<double>& t, const std::vector<Var<double>>& p) {
                       return project(t, ad::maxpool3d(p[0], {2, 2, 2}, {2, 2, 2}), 5);
                     },
                     {{"x", random({1, 2, 4, 4, 4}, rng)}});
               }});
  c.push_back({"resize_trilinear", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 return check(
                     [](Tape<double>& t, const std::vector<Var<double>>& p) {
                       return project(t, ad::resize_trilinear(p[0], {5, 4, 6}), 6);
                     },
                     {{"x", random({1, 2, 2, 3, 3}, rng)}});
               }});
  for (ad::Mode mode : {ad::Mode::train, ad::Mode::eval}) {
    c.push_back({mode == ad::Mode::train ? "batch_norm_train" : "batch_norm_eval", [mode](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   auto rm = std::make_shared<Tensor64>(random({3}, rng));
                   auto rv = std::make_shared<Tensor64>(random({3}, rng, 0.5, 2.0));
                   return check(
                       [mode, rm, rv](Tape<double>& t, const std::vector<Var<double>>& p) {
                         ad::BatchNormRunning<double> run;
                         if (mode == ad::Mode::eval) run = {rm.get(), rv.get()};
                         return project(t, ad::batch_norm(p[0], p[1], p[2], run, mode, {}), 7);
                       },
                       {{"x", random({2, 3, 2, 2, 2}, rng)}, {"gamma", random({3}, rng)}, {"beta", random({3}, rng)}});
                 }});
  }
  c.push_back({"rfp_scan", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 head::HeadConfig cfg{3, 2, {3, 4, 2}, graph::directions_for_count(4), graph::Neighborhood::eight,
                                      head::Fusion::sum};
                 auto p = head::RfpHeadParams<double>::init(cfg, rng);
                 auto layouts = std::make_shared<const std::vector<graph::DagLayout>>(head::build_layouts(cfg));
                 return check(
                     [layouts](Tape<double>& t, const std::vector<Var<double>>& v) {
                       return project(t, head::rfp_scan(v[0], v[1], v[2], v[3], layouts, false), 8);
                     },
                     {{"x", random({2, 3, 3, 4, 2}, rng)}, {"U", p.U}, {"W", p.W}, {"b", random(p.b.shape(), rng)}});
               }});
  c.push_back({"seg_loss", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const Shape sh{2, 3, 3, 3, 2};
                 Tensor64 onehot(sh);
                 const std::size_t vox = 3 * 3 * 2;
                 for (std::size_t n = 0; n < 2; ++n)
                   for (std::size_t i = 0; i < vox; ++i) onehot[(n * 3 + rng() % 3) * vox + i] = 1.0;
                 return check(
                     [onehot](Tape<double>&, const std::vector<Var<double>>& p) {
                       return net::seg_loss(ad::softmax_channels(p[0]), onehot).total;
                     },
                     {{"logits", random(sh, rng, -2.0, 2.0)}});
               }});
  c.push_back({"weighted_bce", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const Shape sh{2, 1, 4, 4, 3};
                 Tensor64 ref(sh);
                 for (double& v : ref.data()) v = rng() % 4 == 0 ? 1.0 : 0.0;
                 return check([ref](Tape<double>&,
                                    const std::vector<Var<double>>& p) { return edge::weighted_bce(p[0], ref); },
                              {{"logits", random(sh, rng, -3.0, 3.0)}});
               }});
  return c;
}

std::vector<Case> module_cases() {
  std::vector<Case> c;
  c.push_back({"conv_unit", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 auto u = ad::ConvUnitParams<double>::init(2, 3, 3, rng);
                 return check(
                     [](Tape<double>& t, const std::vector<Var<double>>& p) {
                       // The conv bias ahead of batch norm has zero gradient; keep it constant.
                       ad::ConvUnitVars<double> v{p[1], t.constant(Tensor64({3}, 0.1)), p[2], p[3], {}};
                       return project(t, ad::conv_unit(p[0], v, {{1, 1, 1}, {1, 1, 1}}, ad::Mode::train, {}), 9);
                     },
                     {{"x", random({2, 2, 4, 4, 3}, rng)},
                      {"kernel", u.kernel},
                      {"gamma", random({3}, rng, 0.5, 1.5)},
                      {"beta", random({3}, rng)}});
               }});
  for (head::Fusion fusion : {head::Fusion::sum, head::Fusion::concat}) {
    for (graph::Neighborhood nb : {graph::Neighborhood::four, graph::Neighborhood::eight}) {
      const std::string name = "rfp_head_" + std::string(head::fusion_name(fusion)) + "_" +
                               std::string(graph::neighborhood_name(nb));
      c.push_back({name, [fusion, nb](std::uint64_t s) {
                     std::mt19937_64 rng(s);
                     head::HeadConfig cfg{3, 4, {3, 4, 2}, graph::directions_for_count(4), nb, fusion};
                     auto p = head::RfpHeadParams<double>::init(cfg, rng);
                     auto layouts = std::make_shared<const std::vector<graph::DagLayout>>(head::build_layouts(cfg));
                     std::vector<NamedParam> params = {{"x", random({2, 3, 3, 4, 2}, rng)}, {"U", p.U}, {"W", p.W},
                                                       {"b", random(p.b.shape(), rng)},  {"proj_kernel", p.proj_kernel},
                                                       {"proj_bias", p.proj_bias}};
                     if (fusion == head::Fusion::concat) {
                       params.push_back({"fuse_kernel", p.fuse_kernel});
                       params.push_back({"fuse_bias", p.fuse_bias});
                     }
                     return check(
                         [layouts, fusion](Tape<double>& t, const std::vector<Var<double>>& v) {
                           head::RfpHeadVars<double> hv{v[1], v[2], v[3], v[4], v[5], {}, {}};
                           if (fusion == head::Fusion::concat) {
                             hv.fuse_kernel = v[6];
                             hv.fuse_bias = v[7];
                           }
                           return project(t, head::rfp_forward(v[0], hv, layouts, fusion).logits, 10);
                         },
                         params);
                   }});
    }
  }
  c.push_back({"edge_subnet", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 auto p = std::make_shared<edge::EdgeSubnetParams<double>>(edge::EdgeSubnetParams<double>::init(2, 3, rng));
                 Tensor64 ref({2, 1, 16, 16, 16});
                 for (double& v : ref.data()) v = rng() % 5 == 0 ? 1.0 : 0.0;
                 std::vector<NamedParam> params = {{"e2", random({2, 2, 8, 8, 8}, rng)},
                                                   {"e5", random({2, 3, 1, 1, 1}, rng)}};
                 for (auto [name, u] : {std::pair{"adapt", &p->adapt}, {"u1", &p->unit1}, {"u2", &p->unit2}}) {
                   params.push_back({std::string(name) + ".kernel", u->kernel});
                   params.push_back({std::string(name) + ".gamma", random(u->bn_gamma.shape(), rng, 0.5, 1.5)});
                   params.push_back({std::string(name) + ".beta", random(u->bn_beta.shape(), rng)});
                 }
                 params.push_back({"head.kernel", p->head_kernel});
                 params.push_back({"head.bias", p->head_bias});
                 return check(
                     [p, ref](Tape<double>& t, const std::vector<Var<double>>& v) {
                       // As in conv_unit, biases ahead of batch norm stay constant.
                       auto unit = [&](std::size_t i, ad::ConvUnitParams<double>& u) {
                         return ad::ConvUnitVars<double>{v[i], t.constant(u.bias), v[i + 1], v[i + 2], {}};
                       };
                       edge::EdgeSubnetVars<double> ev{unit(2, p->adapt), unit(5, p->unit1), unit(8, p->unit2), v[11],
                                                       v[12]};
                       auto o = edge::edge_subnet_forward(v[0], v[1], ev, {16, 16, 16}, ad::Mode::train, {});
                       return edge::weighted_bce(o.logits, ref);
                     },
                     params);
               }});
  return c;
}

std::vector<Case> network_cases(std::size_t entries) {
  return {{"network_micro", [entries](std::uint64_t s) {
             GradCheckOptions o;
             // Small step keeps ReLU and max-pool kinks out of the central
             // difference; the floor sits above its roundoff.
             o.step = 3e-6;
             o.abs_floor = 1e-5;
             o.max_entries = entries;
             o.seed = s;
             return net::network_grad_check(net::micro_config(), 2, s, o);
           }}};
}

std::vector<Case> cases(Scope scope, std::size_t entries) {
  switch (scope) {
    case Scope::op:
      return op_cases();
    case Scope::module:
      return module_cases();
    case Scope::network:
      return network_cases(entries);
  }
  return {};
}

}  // namespace

Scope parse_scope(std::string_view s) {
  if (s == "op") return Scope::op;
  if (s == "module") return Scope::module;
  if (s == "network") return Scope::network;
  throw std::invalid_argument("unknown gradcheck scope '" + std::string(s) + "' (op, module, network)");
}

std::vector<std::string> case_names(Scope scope) {
  std::vector<std::string> names;
  for (const Case& c : cases(scope, 0)) names.push_back(c.name);
  return names;
}

std::vector<CaseResult> run(Scope scope, std::uint64_t seed, std::string_view only, std::size_t network_entries) {
  std::vector<CaseResult> out;
  for (const Case& c : cases(scope, network_entries)) {
    if (!only.empty() && c.name != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckReport r = c.fn(seed);
    out.push_back({c.name, std::move(r),
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
  }
  if (!only.empty() && out.empty()) {
    throw std::invalid_argument("no gradcheck case named '" + std::string(only) + "'");
  }
  return out;
}

}  // namespace rfp::check
