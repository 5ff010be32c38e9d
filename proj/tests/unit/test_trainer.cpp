#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "rfp/network_check.hpp"
#include "rfp/trainer.hpp"

namespace rfp {
namespace {

namespace fs = std::filesystem;

config::RunConfig tiny_config() {
  config::RunConfig c;
  c.net = net::micro_config();
  c.total_epochs = 4;
  c.batch_size = 2;
  c.val_every = 2;
  c.checkpoint_every = 2;
  return c;
}

std::vector<train::PreparedSample> corpus(const config::RunConfig& c, std::size_t n, std::uint64_t seed) {
  data::SyntheticSpec spec = c.synthetic_spec();
  spec.seed = seed;
  return train::prepare_all(data::gen_synthetic(spec, n), c.edge_mode);
}

class TrainerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("rfp_trainer_" + std::to_string(std::random_device{}()));
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
  log::Logger logger_{log::Level::quiet};
};

TEST_F(TrainerTest, OneEpochUsesBaseRate) {
  config::RunConfig c = tiny_config();
  const auto tr = corpus(c, 2, 11);
  const auto va = corpus(c, 1, 12);
  train::Trainer t(c, logger_);
  const train::TrainResult r = t.run(tr, va, 1);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].epoch, 0u);
  EXPECT_DOUBLE_EQ(r.history[0].lr, c.base_lr);
  EXPECT_TRUE(std::isfinite(r.history[0].loss.total));
  // Validation runs when a bounded run stops early.
  ASSERT_TRUE(r.history[0].val_dsc.has_value());
  EXPECT_EQ(t.next_epoch(), 1u);
  EXPECT_EQ(t.optimizer().steps(), 1u);
}

TEST_F(TrainerTest, ResumeMatchesUninterruptedRun) {
  config::RunConfig c = tiny_config();
  const auto tr = corpus(c, 4, 21);
  const auto va = corpus(c, 1, 22);

  train::Trainer whole(c, logger_);
  const train::TrainResult full = whole.run(tr, va);
  ASSERT_EQ(full.history.size(), 4u);

  train::Trainer first(c, logger_);
  first.run(tr, va, 2);
  const io::Checkpoint mid = io::decode_checkpoint(io::encode_checkpoint(first.checkpoint()));
  train::Trainer second(c, logger_);
  second.restore(mid);
  EXPECT_EQ(second.next_epoch(), 2u);
  const train::TrainResult rest = second.run(tr, va);
  ASSERT_EQ(rest.history.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(rest.history[i].epoch, full.history[i + 2].epoch);
    EXPECT_DOUBLE_EQ(rest.history[i].lr, full.history[i + 2].lr);
    EXPECT_DOUBLE_EQ(rest.history[i].loss.total, full.history[i + 2].loss.total);
  }
  EXPECT_EQ(second.checkpoint(), whole.checkpoint());
}

TEST_F(TrainerTest, WritesCheckpointsAndReloadsBitIdentically) {
  config::RunConfig c = tiny_config();
  c.output_dir = dir_.string();
  const auto tr = corpus(c, 2, 31);
  const auto va = corpus(c, 2, 32);
  train::Trainer t(c, logger_);
  const train::TrainResult r = t.run(tr, va);
  EXPECT_TRUE(fs::exists(dir_ / "epoch_0002.rfpc"));
  EXPECT_TRUE(fs::exists(dir_ / "epoch_0004.rfpc"));
  EXPECT_TRUE(fs::exists(dir_ / "best.rfpc"));
  ASSERT_TRUE(fs::exists(dir_ / "final.rfpc"));
  ASSERT_TRUE(r.last_val.has_value());

  const io::Checkpoint ck = io::read_checkpoint(dir_ / "final.rfpc");
  EXPECT_EQ(ck.config_text, config::canonical_text(c));
  const config::RunConfig reloaded_cfg = config::from_map(config::parse_kv(ck.config_text));
  net::Network<float> net(reloaded_cfg.net, 999);
  train::load_weights(ck, reloaded_cfg, net);
  const metrics::MetricsReport again = train::evaluate(net, va);
  EXPECT_EQ(metrics::format_records(again), metrics::format_records(*r.last_val));
}

TEST_F(TrainerTest, DigestMismatchRefused) {
  config::RunConfig c = tiny_config();
  train::Trainer t(c, logger_);
  const io::Checkpoint ck = t.checkpoint();
  config::RunConfig other = c;
  other.weight_decay = 1e-3;
  train::Trainer u(other, logger_);
  EXPECT_THROW(u.restore(ck), std::invalid_argument);
  EXPECT_NO_THROW(u.restore(ck, true));
  config::RunConfig wider = c;
  wider.net.stage_channels = {4, 8, 8, 8, 16};
  net::Network<float> n(wider.net, 1);
  EXPECT_THROW(train::load_weights(ck, wider, n, true), std::invalid_argument);
}

TEST_F(TrainerTest, RejectsBadInputs) {
  config::RunConfig c = tiny_config();
  train::Trainer t(c, logger_);
  EXPECT_THROW(t.run({}, {}), std::invalid_argument);
  config::RunConfig other = tiny_config();
  other.net.input_shape = {32, 32, 16};
  const auto wrong = corpus(other, 1, 5);
  EXPECT_THROW(t.run(wrong, {}), ShapeError);
}

}  // namespace
}  // namespace rfp
