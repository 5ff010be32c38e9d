#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "rfp/autodiff.hpp"
#include "rfp/gradcheck.hpp"
#include "rfp/graph.hpp"
#include "rfp/kernels.hpp"

namespace rfp::graph {
namespace {

constexpr Direction kAll[] = {Direction::dr, Direction::dl, Direction::ur, Direction::ul};

template <typename T>
RfpWeights<T> random_weights(std::size_t c, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  RfpWeights<T> w{BasicTensor<T>({c, c}), BasicTensor<T>({c, c}), BasicTensor<T>({c})};
  for (T& v : w.U.data()) v = T(dist(rng));
  for (T& v : w.W.data()) v = T(dist(rng) * 0.5);
  for (T& v : w.b.data()) v = T(dist(rng));
  return w;
}

template <typename T>
BasicTensor<T> random_map(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1, 1);
  BasicTensor<T> t({h, w, c});
  for (T& v : t.data()) v = T(dist(rng));
  return t;
}

TEST(Ucg, EdgeCounts) {
  EXPECT_EQ(build_ucg(1, 1, Neighborhood::four).edges.size(), 0u);
  EXPECT_EQ(build_ucg(2, 2, Neighborhood::four).edges.size(), 4u);
  EXPECT_EQ(build_ucg(2, 2, Neighborhood::eight).edges.size(), 6u);
  EXPECT_EQ(build_ucg(3, 4, Neighborhood::four).edges.size(), 17u);
  for (std::size_t h : {1u, 2u, 5u})
    for (std::size_t w : {1u, 3u, 7u}) {
      EXPECT_EQ(build_ucg(h, w, Neighborhood::four).edges.size(), h * (w - 1) + w * (h - 1));
      EXPECT_EQ(build_ucg(h, w, Neighborhood::eight).edges.size(),
                h * (w - 1) + w * (h - 1) + 2 * (h - 1) * (w - 1));
    }
}

TEST(Dag, PredecessorsOfInteriorAndOrigins) {
  const std::size_t w = 5;
  auto id = [&](std::size_t r, std::size_t c) { return r * w + c; };
  DagLayout dr4 = induce_dag(build_ucg(4, w, Neighborhood::four), Direction::dr);
  EXPECT_EQ(dr4.predecessors[id(2, 2)], (std::vector<std::size_t>{id(1, 2), id(2, 1)}));
  EXPECT_TRUE(dr4.predecessors[id(0, 0)].empty());
  DagLayout ul4 = induce_dag(build_ucg(4, w, Neighborhood::four), Direction::ul);
  EXPECT_TRUE(ul4.predecessors[id(3, 4)].empty());
  DagLayout dr8 = induce_dag(build_ucg(4, w, Neighborhood::eight), Direction::dr);
  auto p = dr8.predecessors[id(2, 2)];
  std::sort(p.begin(), p.end());
  EXPECT_EQ(p, (std::vector<std::size_t>{id(1, 1), id(1, 2), id(1, 3), id(2, 1)}));
}

TEST(Dag, UlScanIsReverseOfDr) {
  GridGraph g = build_ucg(3, 4, Neighborhood::eight);
  auto dr = induce_dag(g, Direction::dr).scan_order;
  auto ul = induce_dag(g, Direction::ul).scan_order;
  std::reverse(ul.begin(), ul.end());
  EXPECT_EQ(dr, ul);
}

TEST(Dag, AcyclicAndCoveringOnSmallGrids) {
  for (auto nb : {Neighborhood::four, Neighborhood::eight})
    for (std::size_t h = 1; h <= 6; ++h)
      for (std::size_t w = 1; w <= 6; ++w) {
        GridGraph g = build_ucg(h, w, nb);
        std::map<std::pair<std::size_t, std::size_t>, int> oriented;
        for (Direction d : kAll) {
          DagLayout l = induce_dag(g, d);
          ASSERT_TRUE(is_topologically_ordered(l));
          for (std::size_t v = 0; v < l.predecessors.size(); ++v)
            for (std::size_t p : l.predecessors[v]) ++oriented[{p, v}];
        }
        auto edges = oracle::enumerate_edges(h, w, nb == Neighborhood::eight);
        for (const auto& [e, count] : oriented) {
          EXPECT_EQ(count, 2);
          EXPECT_TRUE(edges.count({std::min(e.first, e.second), std::max(e.first, e.second)}));
        }
        EXPECT_EQ(oriented.size(), 2 * edges.size());
      }
}

TEST(Scan, TwoByTwoUnitWeightsHandTrace) {
  DagLayout l = induce_dag(build_ucg(2, 2, Neighborhood::four), Direction::dr);
  RfpWeights<double> w{Tensor64({1, 1}, 1.0), Tensor64({1, 1}, 1.0), Tensor64({1})};
  Tensor64 h = dag_scan_forward(Tensor64({2, 2, 1}, 1.0), l, w);
  EXPECT_EQ(h.data()[0], 1.0);
  EXPECT_EQ(h.data()[1], 2.0);
  EXPECT_EQ(h.data()[2], 2.0);
  EXPECT_EQ(h.data()[3], 5.0);
}

TEST(Scan, ZeroWeightsAndIdentityU) {
  std::mt19937_64 rng(1);
  DagLayout l = induce_dag(build_ucg(3, 5, Neighborhood::eight), Direction::ur);
  Tensor64 f = random_map<double>(3, 5, 4, rng);
  RfpWeights<double> z{Tensor64({4, 4}), Tensor64({4, 4}), Tensor64({4})};
  const Tensor64 hz = dag_scan_forward(f, l, z);
  for (double v : hz.data()) EXPECT_EQ(v, 0.0);
  RfpWeights<double> id = z;
  for (std::size_t i = 0; i < 4; ++i) id.U.at({i, i}) = 1.0;
  for (double& v : f.data()) v = std::abs(v);
  EXPECT_EQ(dag_scan_forward(f, l, id), f);
}

TEST(Scan, ZeroFeaturesZeroBiasStayZero) {
  std::mt19937_64 rng(2);
  auto w = random_weights<double>(3, rng);
  w.b.fill(0.0);
  for (Direction d : kAll) {
    DagLayout l = induce_dag(build_ucg(4, 4, Neighborhood::eight), d);
    const Tensor64 hz = dag_scan_forward(Tensor64({4, 4, 3}), l, w);
    for (double v : hz.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Scan, MatchesLiteralInterpreter) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = 1 + rng() % 6, w = 1 + rng() % 6, c = 1 + rng() % 4;
    auto nb = trial % 2 ? Neighborhood::eight : Neighborhood::four;
    DagLayout l = induce_dag(build_ucg(h, w, nb), kAll[trial % 4]);
    auto wt = random_weights<double>(c, rng);
    Tensor64 f = random_map<double>(h, w, c, rng);
    Tensor64 got = dag_scan_forward(f, l, wt);
    auto ref = oracle::eval_recurrence({f.data().begin(), f.data().end()}, h, w, c, l.predecessors,
                                       {wt.U.data().begin(), wt.U.data().end()},
                                       {wt.W.data().begin(), wt.W.data().end()},
                                       {wt.b.data().begin(), wt.b.data().end()});
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-9);
  }
}

TEST(Scan, RotatingMapSwapsDrAndUlExactly) {
  std::mt19937_64 rng(4);
  const kernels::Isa before = kernels::active_isa();
  for (kernels::Isa isa : {kernels::Isa::scalar, kernels::detected_isa()}) {
    kernels::set_active_isa(isa);
    for (auto nb : {Neighborhood::four, Neighborhood::eight}) {
      const std::size_t h = 7, w = 9, c = 5;
      GridGraph g = build_ucg(h, w, nb);
      auto wt = random_weights<float>(c, rng);
      Tensor f = random_map<float>(h, w, c, rng);
      Tensor rot({h, w, c});
      auto rotate = [&](const Tensor& src) {
        Tensor out(src.shape());
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t q = 0; q < w; ++q)
            for (std::size_t k = 0; k < c; ++k) out.at({h - 1 - r, w - 1 - q, k}) = src.at({r, q, k});
        return out;
      };
      Tensor a = dag_scan_forward(rotate(f), induce_dag(g, Direction::dr), wt);
      Tensor b = rotate(dag_scan_forward(f, induce_dag(g, Direction::ul), wt));
      EXPECT_EQ(a, b);
    }
  }
  kernels::set_active_isa(before);
}

TEST(Scan, CountsOneUpdatePerVertex) {
  DagLayout l = induce_dag(build_ucg(6, 7, Neighborhood::four), Direction::dl);
  std::mt19937_64 rng(5);
  reset_scan_counters();
  dag_scan_forward(random_map<double>(6, 7, 2, rng), l, random_weights<double>(2, rng));
  EXPECT_EQ(scan_counters().cell_updates, 42u);
  EXPECT_EQ(scan_counters().predecessor_visits, l.edge_count());
}

TEST(Scan, NanInputIsRejected) {
  DagLayout l = induce_dag(build_ucg(2, 2, Neighborhood::four), Direction::dr);
  Tensor64 f({2, 2, 1});
  f[3] = std::nan("");
  RfpWeights<double> w{Tensor64({1, 1}), Tensor64({1, 1}), Tensor64({1})};
  EXPECT_THROW(dag_scan_forward(f, l, w), NumericalError);
}

TEST(ScanBackward, ZeroUpstreamGivesZeroGrads) {
  std::mt19937_64 rng(6);
  DagLayout l = induce_dag(build_ucg(3, 3, Neighborhood::four), Direction::dr);
  auto w = random_weights<double>(2, rng);
  Tensor64 f = random_map<double>(3, 3, 2, rng);
  Tensor64 h = dag_scan_forward(f, l, w);
  ScanGrads<double> g = dag_scan_backward(f, l, w, h, Tensor64(h.shape()));
  for (const Tensor64* t : {&g.features, &g.U, &g.W, &g.b})
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
}

TEST(ScanBackward, SingleVertexMatchesDirectDerivative) {
  Tensor64 f({1, 1, 2}, std::vector<double>{0.5, -1.0});
  RfpWeights<double> w{Tensor64({2, 2}, std::vector<double>{1, 2, -1, 0.5}), Tensor64({2, 2}, 3.0),
                       Tensor64({2}, std::vector<double>{0.1, 0.2})};
  DagLayout l = induce_dag(build_ucg(1, 1, Neighborhood::four), Direction::dr);
  Tensor64 h = dag_scan_forward(f, l, w);
  // z = U f + b = [0.5 - 2 + 0.1, -0.5 - 0.5 + 0.2] = [-1.4, -0.8] -> both inactive.
  ScanGrads<double> g = dag_scan_backward(f, l, w, h, Tensor64({1, 1, 2}, 1.0));
  for (double v : g.features.data()) EXPECT_EQ(v, 0.0);
  w.b = Tensor64({2}, std::vector<double>{2.0, 0.0});
  h = dag_scan_forward(f, l, w);  // z = [0.5, -1.0]
  g = dag_scan_backward(f, l, w, h, Tensor64({1, 1, 2}, 1.0));
  EXPECT_DOUBLE_EQ(g.features[0], 1.0);
  EXPECT_DOUBLE_EQ(g.features[1], 2.0);
  EXPECT_DOUBLE_EQ(g.U.at({0, 0}), 0.5);
  EXPECT_DOUBLE_EQ(g.U.at({0, 1}), -1.0);
  EXPECT_DOUBLE_EQ(g.U.at({1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(g.b[0], 1.0);
  EXPECT_DOUBLE_EQ(g.b[1], 0.0);
  for (double v : g.W.data()) EXPECT_EQ(v, 0.0);
}

TEST(ScanBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (auto nb : {Neighborhood::four, Neighborhood::eight})
    for (Direction d : kAll) {
      DagLayout l = induce_dag(build_ucg(4, 5, nb), d);
      auto w0 = random_weights<double>(3, rng);
      Tensor64 f0 = random_map<double>(4, 5, 3, rng);
      Tensor64 proj = random_map<double>(4, 5, 3, rng);
      auto objective = [&](const Tensor64& f, const RfpWeights<double>& w) {
        Tensor64 h = dag_scan_forward(f, l, w);
        double s = 0;
        for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * proj[i];
        return s;
      };
      Tensor64 h = dag_scan_forward(f0, l, w0);
      ScanGrads<double> g = dag_scan_backward(f0, l, w0, h, proj);
      const double eps = 1e-6;
      auto check = [&](Tensor64& target, const Tensor64& analytic, auto&& eval) {
        for (std::size_t i = 0; i < target.size(); ++i) {
          const double o = target[i];
          target[i] = o + eps;
          const double p = eval();
          target[i] = o - eps;
          const double m = eval();
          target[i] = o;
          EXPECT_LT(ad::relative_error(analytic[i], (p - m) / (2 * eps)), 1e-3);
        }
      };
      auto w = w0;
      Tensor64 f = f0;
      auto eval = [&] { return objective(f, w); };
      check(f, g.features, eval);
      check(w.U, g.U, eval);
      check(w.W, g.W, eval);
      check(w.b, g.b, eval);
    }
}

TEST(Fuse, SumsMaps) {
  std::mt19937_64 rng(8);
  Tensor64 m = random_map<double>(3, 3, 2, rng);
  Tensor64 z(m.shape());
  Tensor64 four = fuse_directions<double>({&m, &m, &m, &m});
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_DOUBLE_EQ(four[i], 4 * m[i]);
  EXPECT_EQ(fuse_directions<double>({&z, &m, &z, &z}), m);
  Tensor64 bad({3, 3, 1});
  EXPECT_THROW(fuse_directions<double>({&m, &bad}), ShapeError);
}

}  // namespace
}  // namespace rfp::graph
