#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "rfp/network_check.hpp"
#include "rfp/segnet.hpp"

namespace rfp::net {
namespace {

NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.input_shape = {16, 16, 16};
  cfg.stage_channels = {2, 4, 4, 4, 4};
  cfg.num_classes = 3;
  return cfg;
}

TEST(NetworkConfig, RejectsBadSettings) {
  NetworkConfig cfg = small_config();
  cfg.input_shape = {16, 20, 16};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.num_classes = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.edge_branch = false;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);  // esc_count 4 needs edges
  cfg.esc_count = 0;
  EXPECT_NO_THROW(cfg.validate());
  cfg.dag_count = 5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Network, ForwardShapes) {
  NetworkConfig cfg = small_config();
  Network<float> net(cfg, 1);
  ad::Tape<float> tape;
  auto vars = net.bind(tape);
  ad::Var<float> x = tape.constant(Tensor({2, 1, 16, 16, 16}, 0.5f));
  ForwardOutputs<float> out = net.forward(tape, vars, x, ad::Mode::train);
  for (std::size_t s = 1; s <= 5; ++s) {
    const Triple e = cfg.stage_extent(s);
    EXPECT_EQ(out.encoder[s - 1].shape(), (Shape{2, cfg.stage_channels[s - 1], e[0], e[1], e[2]})) << s;
  }
  for (std::size_t s = 1; s <= 4; ++s) {
    const Triple e = cfg.stage_extent(s);
    EXPECT_EQ(out.decoder[s - 1].shape(), (Shape{2, cfg.stage_channels[s - 1], e[0], e[1], e[2]})) << s;
    EXPECT_EQ(out.side_outputs[s - 1].shape(), (Shape{2, 3, 16, 16, 16}));
  }
  ASSERT_TRUE(out.edge_logits && out.rfp_logits);
  EXPECT_EQ(out.edge_logits->shape(), (Shape{2, 1, 16, 16, 16}));
  EXPECT_EQ(out.rfp_logits->shape(), (Shape{2, 3, 16, 16, 16}));
  EXPECT_EQ(out.final_logits.shape(), (Shape{2, 3, 16, 16, 16}));
  EXPECT_EQ(out.decoder_scores.shape(), (Shape{2, 3, 16, 16, 16}));
}

TEST(Network, WrongInputShapeNamesBoth) {
  Network<float> net(small_config(), 1);
  ad::Tape<float> tape;
  auto vars = net.bind(tape);
  ad::Var<float> x = tape.constant(Tensor({1, 1, 16, 16, 32}));
  try {
    net.forward(tape, vars, x, ad::Mode::eval);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[1, 1, 16, 16, 32]"), std::string::npos) << e.what();
  }
}

TEST(Network, SameSeedSameParameters) {
  Network<float> a(small_config(), 9), b(small_config(), 9), c(small_config(), 10);
  EXPECT_EQ(a.store().params, b.store().params);
  EXPECT_NE(a.store().params, c.store().params);
}

TEST(Network, DisabledBranchesHaveNoParameters) {
  NetworkConfig cfg = small_config();
  cfg.edge_branch = false;
  cfg.esc_count = 0;
  cfg.dag_count = 0;
  Network<float> net(cfg, 1);
  for (const auto& [name, t] : net.store().params) {
    EXPECT_NE(name.rfind("edge.", 0), 0u) << name;
    EXPECT_NE(name.rfind("rfp.", 0), 0u) << name;
  }
  ad::Tape<float> tape;
  auto vars = net.bind(tape);
  ForwardOutputs<float> out = net.forward(tape, vars, tape.constant(Tensor({1, 1, 16, 16, 16})), ad::Mode::eval);
  EXPECT_FALSE(out.edge_logits.has_value());
  EXPECT_FALSE(out.rfp_logits.has_value());
}

// With the RFP logits' fusion weights zeroed, the final output depends only
// on the side outputs: it must match a network without the head whose fusion
// kernel is the side-output block of the same weights.
TEST(Network, ZeroedHeadFusionEqualsDecoderOnly) {
  NetworkConfig with = small_config();
  NetworkConfig without = with;
  without.dag_count = 0;
  Network<double> a(with, 4), b(without, 4);
  const std::size_t k = with.num_classes;
  Tensor64& fk = a.store().params.at("fusion.kernel");  // [K, 5K, 1, 1, 1]
  Tensor64& gk = b.store().params.at("fusion.kernel");  // [K, 4K, 1, 1, 1]
  for (std::size_t o = 0; o < k; ++o) {
    for (std::size_t i = 0; i < 5 * k; ++i) {
      if (i >= 4 * k) fk[o * 5 * k + i] = 0;
      else fk[o * 5 * k + i] = gk[o * 4 * k + i];
    }
  }
  for (auto& [name, t] : b.store().params) {
    if (name != "fusion.kernel") a.store().params.at(name) = t;
  }
  std::mt19937_64 rng(5);
  Tensor64 img = ad::uniform_tensor<double>({1, 1, 16, 16, 16}, 1.0, rng);
  ad::Tape<double> ta, tb;
  auto va = a.bind(ta);
  auto vb = b.bind(tb);
  const Tensor64 ya = a.forward(ta, va, ta.constant(img), ad::Mode::eval).final_logits.value();
  const Tensor64 yb = b.forward(tb, vb, tb.constant(img), ad::Mode::eval).final_logits.value();
  ASSERT_EQ(ya.shape(), yb.shape());
  for (std::size_t i = 0; i < ya.size(); ++i) ASSERT_NEAR(ya[i], yb[i], 1e-12) << i;
}

TEST(SegLoss, UniformBalancedHandValue) {
  // K = 2, p = 0.5 everywhere, half the voxels of each class:
  // Dice_k = (N/2) / (N/2 + N/4) = 2/3, CE = ln 2.
  Tensor64 onehot({1, 2, 4, 4, 2});
  const std::size_t vox = 32;
  for (std::size_t v = 0; v < vox; ++v) onehot[(v < 16 ? 0 : 1) * vox + v] = 1;
  ad::Tape<double> tape;
  SegLoss<double> l = seg_loss(tape.constant(Tensor64(onehot.shape(), 0.5)), onehot);
  EXPECT_NEAR(l.dice, 1.0 / 3.0, 1e-6);
  EXPECT_NEAR(l.ce, std::log(2.0), 1e-12);
  EXPECT_NEAR(l.total.value().item(), 1.0 / 3.0 + std::log(2.0), 1e-6);
}

TEST(SegLoss, PerfectPredictionNearZero) {
  Tensor64 onehot({2, 3, 4, 4, 4});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t v = 0; v < 64; ++v) onehot[(b * 3 + v % 3) * 64 + v] = 1;
  ad::Tape<double> tape;
  SegLoss<double> l = seg_loss(tape.constant(onehot), onehot);
  EXPECT_LT(l.total.value().item(), 1e-6);
  EXPECT_GE(l.total.value().item(), 0.0);
}

TEST(SegLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  Tensor64 onehot({2, 3, 3, 3, 2});
  std::uniform_int_distribution<int> cls(0, 2);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t v = 0; v < 18; ++v) onehot[(b * 3 + cls(rng)) * 18 + v] = 1;
  std::vector<ad::NamedParam> params{{"logits", ad::uniform_tensor<double>(onehot.shape(), 2.0, rng)}};
  ad::GradFn fn = [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
    return seg_loss(ad::softmax_channels(v[0]), onehot).total;
  };
  ad::GradCheckReport r = ad::grad_check(fn, params);
  EXPECT_TRUE(r.passed) << r.failure;
  EXPECT_LT(r.max_rel_error(), 1e-6);
}

TEST(SegLoss, ShapeMismatchThrows) {
  ad::Tape<double> tape;
  EXPECT_THROW(seg_loss(tape.constant(Tensor64({1, 3, 2, 2, 2})), Tensor64({1, 2, 2, 2, 2})), ShapeError);
}

TEST(OneHot, RoundTripsThroughArgmax) {
  LabelVolume l({4, 3, 2});
  for (std::size_t i = 0; i < l.size(); ++i) l.data[i] = static_cast<std::uint8_t>(i % 4);
  Tensor oh = one_hot<float>({&l}, 4);
  EXPECT_EQ(argmax_labels(oh, 0), l);
  LabelVolume bad({1, 1, 1}, 7);
  EXPECT_THROW(one_hot<float>({&bad}, 4), std::invalid_argument);
}

TEST(PolyLr, HandValues) {
  EXPECT_DOUBLE_EQ(poly_lr(1e-3, 0, 400), 1e-3);
  EXPECT_NEAR(poly_lr(1e-3, 200, 400), 5.358867312681466e-4, 1e-15);
  EXPECT_DOUBLE_EQ(poly_lr(1e-3, 400, 400), 0.0);
  EXPECT_THROW(poly_lr(1e-3, 0, 0), std::invalid_argument);
}

TEST(Adam, FirstStepIsSignedLearningRatePlusDecay) {
  // After one step m_hat = g, v_hat = g^2, so the update is g/(|g| + eps).
  std::map<std::string, Tensor64> p{{"w", Tensor64({3}, std::vector<double>{1.0, -2.0, 0.5})}};
  std::map<std::string, Tensor64> g{{"w", Tensor64({3}, std::vector<double>{0.3, -4.0, 0.0})}};
  Adam<double> opt;
  opt.step(p, g, 0.1);
  const double wd = 3e-4;
  EXPECT_NEAR(p["w"][0], 1.0 - 0.1 * (0.3 / (0.3 + 1e-8) + wd * 1.0), 1e-12);
  EXPECT_NEAR(p["w"][1], -2.0 - 0.1 * (-1.0 * 4.0 / (4.0 + 1e-8) + wd * -2.0), 1e-12);
  EXPECT_NEAR(p["w"][2], 0.5 - 0.1 * wd * 0.5, 1e-12);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, MissingGradientThrows) {
  std::map<std::string, Tensor64> p{{"w", Tensor64({1})}};
  Adam<double> opt;
  EXPECT_THROW(opt.step(p, {}, 0.1), std::logic_error);
}

Batch toy_batch(const NetworkConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch b;
  b.images = Tensor({2, 1, cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]});
  for (std::size_t n = 0; n < 2; ++n) {
    LabelVolume l(cfg.input_shape);
    for (std::size_t r = 4; r < 12; ++r)
      for (std::size_t c = 4; c < 12; ++c)
        for (std::size_t z = 4; z < 12; ++z) l.at(r, c, z) = static_cast<std::uint8_t>(1 + (r >= 8));
    const std::size_t vox = l.size();
    for (std::size_t v = 0; v < vox; ++v) b.images[n * vox + v] = float(l.data[v]) + 0.1f * float(rng() % 10);
    b.edges.push_back(edge::generate_reference_edges(l, edge::EdgeMode::transition));
    b.labels.push_back(std::move(l));
  }
  return b;
}

TEST(TrainStep, LossDecreasesOnRepeatedBatch) {
  NetworkConfig cfg = small_config();
  Network<float> net(cfg, 3);
  Adam<float> opt;
  Batch b = toy_batch(cfg, 1);
  const double first = train_step(net, opt, b, 1e-2).total;
  double last = first;
  for (int i = 0; i < 15; ++i) last = train_step(net, opt, b, 1e-2).total;
  EXPECT_LT(last, first);
  EXPECT_EQ(opt.steps(), 16u);
}

TEST(TrainStep, NonFiniteInputReportsComponents) {
  NetworkConfig cfg = small_config();
  cfg.dag_count = 0;  // the scan would reject the input before the loss
  Network<float> net(cfg, 3);
  Adam<float> opt;
  Batch b = toy_batch(cfg, 1);
  b.images[5] = std::nanf("");
  const auto before = net.store().params;
  try {
    train_step(net, opt, b, 1e-2);
    FAIL();
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("dice_final"), std::string::npos) << msg;
    EXPECT_NE(msg.find("edge"), std::string::npos) << msg;
  }
  EXPECT_EQ(net.store().params, before);
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(TrainStep, NonFiniteInputRejectedByScanLeavesStateUntouched) {
  NetworkConfig cfg = small_config();
  Network<float> net(cfg, 3);
  Adam<float> opt;
  Batch b = toy_batch(cfg, 1);
  b.images[5] = std::nanf("");
  const auto params = net.store().params;
  const auto buffers = net.store().buffers;
  EXPECT_THROW(train_step(net, opt, b, 1e-2), NumericalError);
  EXPECT_EQ(net.store().params, params);
  EXPECT_EQ(net.store().buffers, buffers);
}

TEST(TrainStep, SeedFixedRunsAreIdentical) {
  NetworkConfig cfg = small_config();
  std::vector<double> losses[2];
  for (int run = 0; run < 2; ++run) {
    Network<float> net(cfg, 7);
    Adam<float> opt;
    Batch b = toy_batch(cfg, 2);
    for (int i = 0; i < 3; ++i) losses[run].push_back(train_step(net, opt, b, 1e-3).total);
  }
  EXPECT_EQ(losses[0], losses[1]);
}

TEST(NetworkGradCheck, SmallNetworkSubset) {
  NetworkConfig cfg = micro_config();
  cfg.stage_channels = {2, 4, 4, 4, 4};
  ad::GradCheckOptions opts;
  opts.max_entries = 2;
  opts.seed = 1;
  // Small step keeps ReLU / max-pool kinks out of the difference window; the
  // floor absorbs roundoff on the exactly-zero pre-batch-norm bias gradients.
  opts.step = 3e-6;
  opts.abs_floor = 1e-5;
  ad::GradCheckReport r = network_grad_check(cfg, 2, 11, opts);
  EXPECT_TRUE(r.passed) << r.failure;
  for (const auto& p : r.params) EXPECT_LT(p.max_rel_error, 1e-3) << p.name << " a=" << p.analytic << " n=" << p.numeric;
}

}  // namespace
}  // namespace rfp::net
