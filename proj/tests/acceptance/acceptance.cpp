// Exit gate: one test per acceptance criterion. Each prints a single
// "criterion N PASS|FAIL ..." line with the measured figures.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "rfp/check_suite.hpp"
#include "rfp/config.hpp"
#include "rfp/edge.hpp"
#include "rfp/metrics.hpp"
#include "rfp/network_check.hpp"
#include "rfp/rfp_head.hpp"
#include "rfp/trainer.hpp"

namespace rfp {
namespace {

namespace fs = std::filesystem;

// Detail text for the summary line of the running test.
std::string& detail() {
  static std::string d;
  return d;
}

void note(const std::string& s) {
  if (!detail().empty()) detail() += "; ";
  detail() += s;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

class SummaryPrinter : public ::testing::EmptyTestEventListener {
  void OnTestStart(const ::testing::TestInfo&) override { detail().clear(); }
  void OnTestEnd(const ::testing::TestInfo& info) override {
    const std::string name = info.name();  // C01_...
    const int n = std::atoi(name.substr(1, 2).c_str());
    std::cout << "criterion " << n << " " << (info.result()->Passed() ? "PASS" : "FAIL") << " " << name.substr(4)
              << ": " << detail() << std::endl;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t env_size(const char* name, std::size_t fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::stoul(v) : fallback;
}

// ---------------------------------------------------------------------------

TEST(Acceptance, C01_GradientSuite) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_op = 0, worst_module = 0;
  for (check::Scope scope : {check::Scope::op, check::Scope::module}) {
    for (const check::CaseResult& r : check::run(scope, 1)) {
      EXPECT_TRUE(r.report.passed) << r.name << " " << r.report.failure;
      EXPECT_LT(r.report.max_rel_error(), 1e-3) << r.name;
      (scope == check::Scope::op ? worst_op : worst_module) =
          std::max(scope == check::Scope::op ? worst_op : worst_module, r.report.max_rel_error());
    }
  }
  const std::size_t entries = env_size("RFP_GRADCHECK_ENTRIES", 8);
  const auto net = check::run(check::Scope::network, 1, {}, entries);
  ASSERT_EQ(net.size(), 1u);
  const ad::GradCheckReport& r = net[0].report;
  EXPECT_TRUE(r.passed) << r.failure;
  EXPECT_LT(r.max_rel_error(), 1e-3);
  std::size_t checked = 0;
  for (const auto& p : r.params) checked += p.checked;
  const double secs = seconds_since(t0);
  EXPECT_LT(secs, 300.0);
  note("op max " + fmt(worst_op) + ", module max " + fmt(worst_module) + ", network max " +
       fmt(r.max_rel_error()) + " over " + std::to_string(r.params.size()) + " tensors / " +
       std::to_string(checked) + " entries, " + fmt(secs) + " s");
}

// ---------------------------------------------------------------------------

TEST(Acceptance, C02_DagTopology) {
  std::size_t grids = 0, bad = 0;
  for (bool eight : {false, true}) {
    const auto nb = eight ? graph::Neighborhood::eight : graph::Neighborhood::four;
    for (std::size_t h = 1; h <= 32; ++h) {
      for (std::size_t w = 1; w <= 32; ++w) {
        const auto expected = oracle::enumerate_edges(h, w, eight);
        const graph::GridGraph g = graph::build_ucg(h, w, nb);
        std::set<std::pair<std::size_t, std::size_t>> ucg(g.edges.begin(), g.edges.end());
        bool ok = ucg == expected && ucg.size() == g.edges.size();
        std::map<std::pair<std::size_t, std::size_t>, int> oriented;
        for (graph::Direction d : graph::directions_for_count(4)) {
          const graph::DagLayout l = graph::induce_dag(g, d);
          // Acyclicity witness from scratch: positions in the scan order.
          std::vector<std::size_t> pos(h * w, h * w);
          for (std::size_t i = 0; i < l.scan_order.size(); ++i) pos[l.scan_order[i]] = i;
          ok = ok && l.scan_order.size() == h * w;
          std::set<std::pair<std::size_t, std::size_t>> seen;
          for (std::size_t v = 0; v < h * w; ++v) {
            ok = ok && pos[v] < h * w;
            for (std::size_t p : l.predecessors[v]) {
              ok = ok && pos[p] < pos[v];
              ++oriented[{p, v}];
              seen.emplace(std::min(p, v), std::max(p, v));
            }
          }
          ok = ok && seen == expected;  // each DAG orients every UCG edge once
        }
        for (const auto& e : expected) {
          ok = ok && oriented[{e.first, e.second}] == 2 && oriented[{e.second, e.first}] == 2;
        }
        ok = ok && oriented.size() == 2 * expected.size();
        ++grids;
        if (!ok) ++bad;
      }
    }
  }
  EXPECT_EQ(bad, 0u);
  note(std::to_string(grids) + " grids (1..32 x 1..32, four and eight), " + std::to_string(bad) + " violations");
}

// ---------------------------------------------------------------------------

TEST(Acceptance, C03_ScanHandTraceAndInterpreter) {
  const graph::DagLayout l = graph::induce_dag(graph::build_ucg(2, 2, graph::Neighborhood::four), graph::Direction::dr);
  graph::RfpWeights<double> unit{Tensor64({1, 1}, 1.0), Tensor64({1, 1}, 1.0), Tensor64({1})};
  const Tensor64 h = graph::dag_scan_forward(Tensor64({2, 2, 1}, 1.0), l, unit);
  EXPECT_TRUE(h[0] == 1 && h[1] == 2 && h[2] == 2 && h[3] == 5);

  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t hh = 2 + rng() % 6, ww = 2 + rng() % 6, c = 1 + rng() % 4;
    const auto nb = trial % 2 ? graph::Neighborhood::eight : graph::Neighborhood::four;
    const auto dir = graph::directions_for_count(4)[trial % 4];
    const graph::DagLayout lay = graph::induce_dag(graph::build_ucg(hh, ww, nb), dir);
    std::vector<double> f(hh * ww * c), U(c * c), W(c * c), b(c);
    for (auto* v : {&f, &U, &W, &b})
      for (double& x : *v) x = u(rng);
    for (double& x : W) x *= 0.4;
    graph::RfpWeights<double> wt{Tensor64({c, c}, U), Tensor64({c, c}, W), Tensor64({c}, b)};
    const Tensor64 got = graph::dag_scan_forward(Tensor64({hh, ww, c}, f), lay, wt);
    const auto want = oracle::eval_recurrence(f, hh, ww, c, lay.predecessors, U, W, b);
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got.data()[i] - want[i]));
  }
  EXPECT_LT(worst, 1e-6);
  note("2x2 trace [[" + fmt(h[0]) + "," + fmt(h[1]) + "],[" + fmt(h[2]) + "," + fmt(h[3]) +
       "]], 10 random grids max abs diff " + fmt(worst));
}

// ---------------------------------------------------------------------------

TEST(Acceptance, C04_CostModel) {
  std::size_t extents = 0;
  for (std::size_t h : {1, 2, 5, 10, 16})
    for (std::size_t w : {1, 3, 10, 16})
      for (std::size_t d : {1, 4, 7}) {
        for (auto nb : {graph::Neighborhood::four, graph::Neighborhood::eight}) {
          const auto s = head::cost_count(h, w, d, head::CostMode::slice_wise, 4, nb);
          const auto v = head::cost_count(h, w, d, head::CostMode::volumetric_3d, 4, nb);
          EXPECT_EQ(double(s.cell_updates) / double(v.cell_updates), 0.5);
          EXPECT_EQ(v.predecessor_visits,
                    oracle::volumetric_predecessor_visits(h, w, d, nb == graph::Neighborhood::eight ? 3 : 1));
        }
        ++extents;
      }
  // Instrumented run through the differentiable head.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::size_t instrumented = 0;
  for (Triple e : {Triple{2, 2, 1}, Triple{3, 5, 2}, Triple{8, 8, 4}, Triple{10, 10, 4}}) {
    head::HeadConfig cfg{3, 2, e, graph::directions_for_count(4), graph::Neighborhood::eight, head::Fusion::sum};
    auto p = head::RfpHeadParams<double>::init(cfg, rng);
    auto layouts = std::make_shared<const std::vector<graph::DagLayout>>(head::build_layouts(cfg));
    ad::Tape<double> t;
    Tensor64 x({1, 3, e[0], e[1], e[2]});
    for (double& v : x.data()) v = n(rng);
    graph::reset_scan_counters();
    head::rfp_forward(t.leaf(x), {t.leaf(p.U), t.leaf(p.W), t.leaf(p.b), t.leaf(p.proj_kernel), t.leaf(p.proj_bias)},
                      layouts, head::Fusion::sum);
    EXPECT_EQ(graph::scan_counters().cell_updates, 4u * e[0] * e[1] * e[2]);
    ++instrumented;
  }
  note("ratio 0.5 on " + std::to_string(extents) + " extents x 2 neighborhoods; instrumented updates = 4HWD on " +
       std::to_string(instrumented) + " extents");
}

// ---------------------------------------------------------------------------

TEST(Acceptance, C05_EdgeLoss) {
  std::mt19937_64 rng(5);
  std::size_t maps = 0;
  for (int trial = 0; trial < 20; ++trial) {
    LabelVolume v({4, 5, 3});
    std::size_t pos = 0;
    const unsigned density = 1 + trial % 7;
    for (auto& x : v.data) {
      x = rng() % 8 < density;
      pos += x;
    }
    const edge::EdgeMap m = edge::EdgeMap::from_voxels(v);
    EXPECT_EQ(m.alpha(), double(v.size() - pos) / double(v.size()));
    ++maps;
  }
  // Balanced reference, uniform prediction.
  Tensor64 ref({1, 1, 4, 4, 2});
  for (std::size_t i = 0; i < ref.size(); i += 2) ref[i] = 1;
  ad::Tape<double> t;
  const double l = edge::weighted_bce(t.leaf(Tensor64(ref.shape())), ref).value().item();
  EXPECT_NEAR(l, 0.5 * std::log(2.0), 1e-6);
  const auto g = check::run(check::Scope::op, 5, "weighted_bce");
  EXPECT_TRUE(g[0].report.passed);
  EXPECT_LT(g[0].report.max_rel_error(), 1e-3);
  note("alpha exact on " + std::to_string(maps) + " maps; balanced uniform loss " + fmt(l) + " vs " +
       fmt(0.5 * std::log(2.0)) + "; gradient rel err " + fmt(g[0].report.max_rel_error()));
}

// ---------------------------------------------------------------------------

double oracle_hd95(std::vector<double> d) {
  std::sort(d.begin(), d.end());
  const double x = 0.95 * double(d.size() - 1);
  const std::size_t lo = std::size_t(std::floor(x));
  const std::size_t hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (x - double(lo)) * (d[hi] - d[lo]);
}

TEST(Acceptance, C06_MetricOracles) {
  std::mt19937_64 rng(6);
  std::size_t pairs = 0, mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 2 + rng() % 15, w = 2 + rng() % 15, d = 2 + rng() % 15;
    LabelVolume a({h, w, d}), b({h, w, d});
    // Random boxes plus salt so shapes are irregular.
    auto paint = [&](LabelVolume& m) {
      for (int k = 0; k < 3; ++k) {
        const std::size_t r0 = rng() % h, c0 = rng() % w, z0 = rng() % d;
        const std::size_t r1 = std::min(h, r0 + 1 + rng() % 6), c1 = std::min(w, c0 + 1 + rng() % 6),
                          z1 = std::min(d, z0 + 1 + rng() % 6);
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c)
            for (std::size_t z = z0; z < z1; ++z) m.at(r, c, z) = 1;
      }
      for (auto& x : m.data)
        if (rng() % 40 == 0) x = 1;
    };
    paint(a);
    paint(b);
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      na += a.data[i];
      nb += b.data[i];
      inter += a.data[i] & b.data[i];
    }
    const double dsc_oracle = 2.0 * double(inter) / double(na + nb);
    const auto dist = oracle::all_pairs_surface_distances(a.data, b.data, h, w, d, {1, 1, 1});
    double sum = 0;
    for (double x : dist) sum += x;
    const double assd_oracle = sum / double(dist.size());
    const double hd_oracle = oracle_hd95(dist);
    const auto dsc = metrics::dsc(a, b, 1);
    const auto sd = metrics::surface_distances(a, b, {1, 1, 1});
    const bool ok = dsc && sd && *dsc == dsc_oracle && *sd == dist && metrics::assd(*sd) == assd_oracle &&
                    metrics::hd95(*sd) == hd_oracle;
    EXPECT_TRUE(ok) << "pair " << trial;
    mismatches += !ok;
    ++pairs;
  }
  // Fixtures: a 4-cube and the same cube shifted by 2 voxels; single voxels 3 mm apart.
  LabelVolume a({8, 8, 8}), b({8, 8, 8});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t z = 0; z < 4; ++z) {
        a.at(r, c, z) = 1;
        b.at(r + 2, c, z) = 1;
      }
  const double shifted = *metrics::dsc(a, b, 1);
  LabelVolume p({8, 8, 8}), q({8, 8, 8});
  p.at(1, 1, 1) = 1;
  q.at(4, 1, 1) = 1;
  const auto pq = metrics::surface_distances(p, q, {1, 1, 1});
  ASSERT_TRUE(pq.has_value());
  const double single = metrics::hd95(*pq);
  EXPECT_EQ(shifted, 0.5);
  EXPECT_EQ(single, 3.0);
  EXPECT_EQ(metrics::assd(*pq), 3.0);
  note(std::to_string(pairs) + " random pairs, " + std::to_string(mismatches) + " mismatches; shifted cube DSC " +
       fmt(shifted) + "; single-voxel distance " + fmt(single) + " mm");
}

// ---------------------------------------------------------------------------

config::RunConfig micro_run() {
  config::RunConfig c;
  c.net = net::micro_config();
  return c;
}

std::vector<train::PreparedSample> tiny_corpus(const config::RunConfig& c, std::size_t n, std::uint64_t seed) {
  data::SyntheticSpec s = c.synthetic_spec();
  s.seed = seed;
  return train::prepare_all(data::gen_synthetic(s, n), c.edge_mode);
}

// lr values of epoch records (plus schedule_end) in a log file, by epoch.
std::map<std::size_t, double> logged_lr(const fs::path& log) {
  std::map<std::size_t, double> out;
  std::ifstream in(log);
  for (std::string line; std::getline(in, line);) {
    const bool epoch = line.rfind("record=epoch ", 0) == 0;
    const bool end = line.rfind("record=schedule_end ", 0) == 0;
    if (!epoch && !end) continue;
    auto field = [&](const std::string& key) {
      const auto p = line.find(" " + key + "=");
      const auto s = p + key.size() + 2;
      return line.substr(s, line.find(' ', s) - s);
    };
    out[std::stoul(field("epoch"))] = std::stod(field("lr"));
  }
  return out;
}

TEST(Acceptance, C07_ScheduleAndDefaults) {
  const fs::path dir = fs::temp_directory_path() / ("rfp_accept7_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  config::RunConfig c = micro_run();  // total_epochs 400, base_lr 1e-3, weight_decay 3e-4 by default
  const auto corpus = tiny_corpus(c, 2, 70);
  const std::size_t total = c.total_epochs;
  log::Logger logger((dir / "train.log").string(), log::Level::quiet);
  train::Trainer t(c, logger);
  t.run(corpus, {}, 1);
  // Jump the epoch counter through the stored optimiser state.
  for (std::size_t jump : {total / 2, total - 1}) {
    io::Checkpoint ck = t.checkpoint();
    ck.tensors.at(train::kHparamsTensor)[5] = float(jump);
    t.restore(ck);
    t.run(corpus, {}, 1);
  }
  const auto lr = logged_lr(dir / "train.log");
  auto poly = [&](double e) { return 1e-3 * std::pow(1.0 - e / double(total), 0.9); };
  double worst = 0;
  for (std::size_t e : {std::size_t{0}, total / 2, total}) {
    ASSERT_TRUE(lr.count(e)) << "no lr logged for epoch " << e;
    const double want = poly(double(e));
    const double err = want == 0 ? std::abs(lr.at(e)) : std::abs(lr.at(e) - want) / want;
    worst = std::max(worst, err);
  }
  EXPECT_LE(worst, 1e-9);

  io::write_checkpoint(dir / "last.rfpc", t.checkpoint());
  const io::Checkpoint ck = io::read_checkpoint(dir / "last.rfpc");
  const config::RunConfig echoed = config::from_map(config::parse_kv(ck.config_text));
  EXPECT_EQ(echoed.base_lr, 1e-3);
  EXPECT_EQ(echoed.weight_decay, 3e-4);
  const Tensor& hp = ck.tensors.at(train::kHparamsTensor);
  EXPECT_EQ(hp[0], float(1e-3));
  EXPECT_EQ(hp[1], float(3e-4));
  fs::remove_all(dir);
  note("lr at epochs 0/" + std::to_string(total / 2) + "/" + std::to_string(total) + " = " + fmt(lr.at(0)) + "/" +
       fmt(lr.at(total / 2)) + "/" + fmt(lr.at(total)) + ", max rel err " + fmt(worst) +
       "; checkpoint echoes base_lr " + fmt(echoed.base_lr) + " weight_decay " + fmt(echoed.weight_decay));
}

// ---------------------------------------------------------------------------

// The corpus of criteria 8 and 9: 50 synthetic cases at 32x32x16 with four
// classes, adjacency on and the default (low) contrast, split 40 / 10.
struct Corpus {
  std::vector<train::PreparedSample> train, val;
};

config::RunConfig desk_run() {
  config::RunConfig c;
  c.net.input_shape = {32, 32, 16};
  c.net.num_classes = 4;
  c.net.stage_channels = {4, 8, 16, 32, 64};
  c.val_every = 10;
  c.adjacency = true;
  return c;
}

const Corpus& desk_corpus() {
  static const Corpus corpus = [] {
    const config::RunConfig c = desk_run();
    data::SyntheticSpec s = c.synthetic_spec();
    s.seed = 1000;
    auto all = train::prepare_all(data::gen_synthetic(s, 50), c.edge_mode);
    Corpus out;
    out.train.assign(all.begin(), all.begin() + 40);
    out.val.assign(all.begin() + 40, all.end());
    return out;
  }();
  return corpus;
}

TEST(Acceptance, C08_Convergence) {
  config::RunConfig c = desk_run();
  c.total_epochs = env_size("RFP_CONVERGENCE_EPOCHS", 200);
  const Corpus& corpus = desk_corpus();
  log::Logger quiet(log::Level::quiet);

  // Repeatability: two fresh runs of the first epochs agree bit for bit.
  train::Trainer a(c, quiet), b(c, quiet);
  const auto ra = a.run(corpus.train, corpus.val, 2);
  const auto rb = b.run(corpus.train, corpus.val, 2);
  bool repeatable = a.checkpoint() == b.checkpoint() && ra.best_val_dsc == rb.best_val_dsc;
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    repeatable = repeatable && ra.history[i].loss.total == rb.history[i].loss.total;
  }
  EXPECT_TRUE(repeatable);

  log::Logger logger(log::level_from_env());
  train::Trainer t(c, logger);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = t.run(corpus.train, corpus.val);
  const double secs = seconds_since(t0);
  ASSERT_TRUE(r.best_val_dsc.has_value());
  const double final_dsc = r.history.back().val_dsc.value_or(-1);
  EXPECT_GE(*r.best_val_dsc, 0.85);
  EXPECT_LT(secs, 45 * 60.0);
  note("best val DSC " + fmt(*r.best_val_dsc) + " at epoch " + std::to_string(r.best_epoch) + ", final " +
       fmt(final_dsc) + " after " + std::to_string(r.epochs_run) + " epochs, " + fmt(secs / 60) + " min, repeatable " +
       (repeatable ? "yes" : "no"));
}

// ---------------------------------------------------------------------------

struct Variant {
  const char* name;
  bool edge;
  std::size_t esc, dag;
};

TEST(Acceptance, C09_AblationTrend) {
  const std::size_t epochs = env_size("RFP_ABLATION_EPOCHS", 40);
  const Variant variants[] = {
      {"backbone", false, 0, 0}, {"rfp", false, 0, 4}, {"ed_esc", true, 4, 0}, {"full", true, 4, 4}};
  const Corpus& corpus = desk_corpus();
  log::Logger quiet(log::Level::quiet);
  std::map<std::string, double> mean;
  std::string per_seed;
  for (const Variant& v : variants) {
    double sum = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
      config::RunConfig c = desk_run();
      c.total_epochs = epochs;
      c.val_every = epochs;
      c.seed = seed;
      c.net.edge_branch = v.edge;
      c.net.esc_count = v.esc;
      c.net.dag_count = v.dag;
      train::Trainer t(c, quiet);
      const auto r = t.run(corpus.train, corpus.val);
      const double dsc = r.history.back().val_dsc.value();
      sum += dsc;
      per_seed += std::string(per_seed.empty() ? "" : " ") + v.name + "/" + std::to_string(seed) + "=" + fmt(dsc);
      std::cerr << "ablation " << v.name << " seed " << seed << " val_dsc " << dsc << " (" << r.seconds << " s)\n";
    }
    mean[v.name] = sum / 3.0;
  }
  EXPECT_GE(mean["full"], mean["rfp"]);
  EXPECT_GE(mean["rfp"], mean["backbone"]);
  EXPECT_GE(mean["full"], mean["ed_esc"]);
  EXPECT_GE(mean["ed_esc"], mean["backbone"]);
  note(std::to_string(epochs) + " epochs x 3 seeds, mean val DSC backbone " + fmt(mean["backbone"]) + ", +RFP " +
       fmt(mean["rfp"]) + ", +ED+ESCs " + fmt(mean["ed_esc"]) + ", full " + fmt(mean["full"]) + " [" + per_seed +
       "]");
}

// ---------------------------------------------------------------------------

// Trainable scalars of the network, derived from the architecture by hand.
std::size_t closed_form_parameters(const net::NetworkConfig& n) {
  const auto& c = n.stage_channels;
  const std::size_t k = n.num_classes;
  auto unit = [](std::size_t in, std::size_t out, std::size_t ks) { return ks * ks * ks * in * out + 3 * out; };
  auto pointwise = [](std::size_t in, std::size_t out) { return in * out + out; };
  std::size_t total = unit(1, c[0], 3);
  for (std::size_t s = 1; s < 5; ++s) total += unit(c[s - 1], c[s], 3) + unit(c[s], c[s], 3);
  if (n.edge_branch) total += unit(c[4], c[1], 1) + 2 * unit(c[1], c[1], 3) + pointwise(c[1], 1);
  for (std::size_t s = 1; s <= 4; ++s) {
    const std::size_t in = c[s] + c[s - 1] + (s <= n.esc_count ? c[1] : 0);
    total += unit(in, c[s - 1], 3) + unit(c[s - 1], c[s - 1], 3) + pointwise(c[s - 1], k);
  }
  const std::size_t r = n.dag_count;
  const std::size_t c5 = c[4];
  const std::size_t d5 = n.input_shape[2] / 16;
  if (r > 0) {
    total += d5 * r * (2 * c5 * c5 + c5) + pointwise(c5, k);
    if (n.fusion == head::Fusion::concat) total += pointwise(r * c5, c5);
  }
  total += pointwise(4 * k + (r > 0 ? k : 0), k) + pointwise(4 * k, k);
  return total;
}

std::set<std::string> names(const net::Network<float>& n) {
  std::set<std::string> s;
  for (const auto& [k, v] : n.store().params) s.insert(k);
  return s;
}

bool includes(const std::set<std::string>& big, const std::set<std::string>& small) {
  return std::includes(big.begin(), big.end(), small.begin(), small.end());
}

TEST(Acceptance, C10_AblationReachability) {
  // Everything below is reached from key=value text alone.
  auto build = [](const std::map<std::string, std::string>& kv) {
    std::map<std::string, std::string> all{{"input_shape", "32,32,32"}, {"stage_channels", "4,8,16,32,64"},
                                           {"num_classes", "4"}};
    for (const auto& [k, v] : kv) all[k] = v;
    const config::RunConfig c = config::from_map(all);
    c.validate();
    return net::Network<float>(c.net, 1);
  };
  std::size_t built = 0, mismatches = 0;
  auto check_count = [&](const net::Network<float>& n) {
    ++built;
    const bool ok = n.store().parameter_count() == closed_form_parameters(n.config());
    EXPECT_TRUE(ok) << n.store().parameter_count() << " vs " << closed_form_parameters(n.config());
    mismatches += !ok;
  };

  const std::map<std::string, std::map<std::string, std::string>> rows{
      {"backbone", {{"edge_branch", "0"}, {"esc_count", "0"}, {"dag_count", "0"}}},
      {"ed", {{"edge_branch", "1"}, {"esc_count", "0"}, {"dag_count", "0"}}},
      {"ed_esc", {{"edge_branch", "1"}, {"esc_count", "4"}, {"dag_count", "0"}}},
      {"rfp", {{"edge_branch", "0"}, {"esc_count", "0"}, {"dag_count", "4"}}},
      {"full", {{"edge_branch", "1"}, {"esc_count", "4"}, {"dag_count", "4"}}}};
  std::map<std::string, std::set<std::string>> row_names;
  for (const auto& [name, kv] : rows) {
    const auto n = build(kv);
    check_count(n);
    row_names[name] = names(n);
  }
  EXPECT_TRUE(includes(row_names["ed"], row_names["backbone"]));
  EXPECT_TRUE(includes(row_names["ed_esc"], row_names["ed"]));
  EXPECT_TRUE(includes(row_names["rfp"], row_names["backbone"]));
  EXPECT_TRUE(includes(row_names["full"], row_names["ed_esc"]));
  EXPECT_TRUE(includes(row_names["full"], row_names["rfp"]));

  // DAG counts: delta against 0 is D*R*(2C^2 + C) + K*C + K plus K*K of
  // extra fusion input.
  const std::size_t base0 = build({{"dag_count", "0"}}).store().parameter_count();
  for (std::size_t r : {0, 1, 2, 4}) {
    for (const char* fusion : {"sum", "concat"}) {
      const auto n = build({{"dag_count", std::to_string(r)}, {"fusion", fusion}});
      check_count(n);
      std::size_t delta = 0;
      if (r > 0) {
        delta = 2 * r * (2 * 64 * 64 + 64) + 4 * 64 + 4 + 4 * 4;
        if (std::string(fusion) == "concat") delta += r * 64 * 64 + 64;
      }
      EXPECT_EQ(n.store().parameter_count() - base0, delta) << "dag " << r << " " << fusion;
    }
  }
  // ESC counts: each ESC widens the first decoder unit of its stage by C2
  // input channels of a 3x3x3 kernel.
  const std::size_t esc0 = build({{"esc_count", "0"}}).store().parameter_count();
  const std::size_t widths[] = {4, 8, 16, 32};
  for (std::size_t e : {0, 1, 2, 4}) {
    const auto n = build({{"esc_count", std::to_string(e)}});
    check_count(n);
    std::size_t delta = 0;
    for (std::size_t s = 1; s <= e; ++s) delta += 27 * 8 * widths[s - 1];
    EXPECT_EQ(n.store().parameter_count() - esc0, delta) << "esc " << e;
  }
  for (const char* nb : {"four", "eight"}) {
    const auto n = build({{"neighborhood", nb}});
    check_count(n);
    EXPECT_EQ(n.store().parameter_count(), base0 + 2 * 4 * (2 * 64 * 64 + 64) + 4 * 64 + 4 + 4 * 4);
  }
  note(std::to_string(built) + " configurations built from key=value text (5 ablation rows, DAG 0/1/2/4 x 2 fusions, "
       "ESC 0/1/2/4, both neighborhoods); " + std::to_string(mismatches) + " closed-form mismatches");
}

}  // namespace
}  // namespace rfp

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::UnitTest::GetInstance()->listeners().Append(new rfp::SummaryPrinter);
  return RUN_ALL_TESTS();
}
