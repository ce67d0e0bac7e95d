#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "coar/trainer.hpp"
#include "fixtures.hpp"

namespace coar {
namespace {

namespace fs = std::filesystem;

std::map<std::string, Tensor> snapshot(Model& m) {
  std::map<std::string, Tensor> out;
  for (const auto& p : m.params()) out[p.name] = *p.value;
  return out;
}

std::vector<StepRecord> read_log(const fs::path& path) {
  std::ifstream in(path);
  std::vector<StepRecord> out;
  for (std::string line; std::getline(in, line);) out.push_back(step_record_from_json(nlohmann::json::parse(line)));
  return out;
}

TEST(Trainer, LearningRateSchedule) {
  TrainConfig c;
  EXPECT_EQ(lr_at(0, c), 0.001);
  EXPECT_EQ(lr_at(9, c), 0.001);
  EXPECT_EQ(lr_at(10, c), 0.0005);
  EXPECT_EQ(lr_at(19, c), 0.0005);
  EXPECT_EQ(lr_at(20, c), 0.00025);
}

TEST(Trainer, MomentumUpdateRule) {
  Tensor theta = Tensor::vector({1.0});
  Tensor v = Tensor::vector({0.5});
  sgd_momentum_update(theta, v, Tensor::vector({0.2}), 0.1, 0.9, 0.01);
  // g = 0.2 + 0.01 * 1 = 0.21; v = 0.45 + 0.21 = 0.66; theta = 1 - 0.066
  EXPECT_NEAR(v[0], 0.66, 1e-15);
  EXPECT_NEAR(theta[0], 0.934, 1e-15);
}

TEST(Trainer, EpisodesPerEpochDefaultsToOnePassOverSeenTraining) {
  const Dataset d = fixture::tiny_dataset();
  TrainConfig c = fixture::tiny_config();
  c.episodes_per_epoch = 0;
  const int n = static_cast<int>(d.sample_indices(Split::Train, true).size());
  EXPECT_EQ(resolve_episodes_per_epoch(c, d), (n + 7) / 8);
}

TEST(Trainer, ConfigJsonRoundTripAndUnknownKeys) {
  TrainConfig c = fixture::tiny_config(3);
  c.loss.tau = 0.6;
  c.loss.hard_selection = false;
  const nlohmann::json j = to_json(c);
  EXPECT_EQ(j.at("t_peak"), "auto");
  const TrainConfig back = train_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  nlohmann::json fixed = j;
  fixed["t_peak"] = 9.0;
  const TrainConfig f = train_config_from_json(fixed);
  EXPECT_FALSE(f.t_peak_quantile.has_value());
  EXPECT_EQ(f.loss.t_peak, 9.0);
  nlohmann::json unknown = j;
  unknown["learning_rate"] = 0.1;
  EXPECT_THROW(train_config_from_json(unknown), std::invalid_argument);
  nlohmann::json bad = j;
  bad["t_peak"] = "sometimes";
  EXPECT_THROW(train_config_from_json(bad), std::invalid_argument);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  const Dataset d = fixture::tiny_dataset();
  const TrainConfig c = fixture::tiny_config();
  TrainState s = init_train_state(c, d);
  const auto before = snapshot(s.model);
  train_step(s, d, sample_episode(d, c.n_way, c.k_shot, s.rng), c, 0.0);
  EXPECT_EQ(snapshot(s.model), before);
  EXPECT_EQ(s.step, 1);
}

TEST(Trainer, FrozenBackboneWithClassificationOnlyTouchesPrototypeNet) {
  const Dataset d = fixture::tiny_dataset();
  TrainConfig c = fixture::tiny_config();
  c.freeze_backbone = true;
  c.loss.lambda_attp = c.loss.lambda_attf = c.loss.lambda_sem = 0;
  TrainState s = init_train_state(c, d);
  const auto before = snapshot(s.model);
  for (int i = 0; i < 3; ++i) train_step(s, d, sample_episode(d, c.n_way, c.k_shot, s.rng), c, 0.01);
  const auto after = snapshot(s.model);
  int changed_proto = 0;
  for (const auto& [name, t] : after) {
    if (name.rfind("proto.", 0) == 0) {
      changed_proto += t != before.at(name);
    } else {
      EXPECT_EQ(t, before.at(name)) << name;
    }
  }
  EXPECT_GT(changed_proto, 0);
}

TEST(Trainer, TwinRunsAreIdentical) {
  const Dataset d = fixture::tiny_dataset();
  TrainConfig c = fixture::tiny_config(5);
  c.episodes_per_epoch = 10;  // 50 steps
  const TrainState a = train(c, d);
  const TrainState b = train(c, d);
  ASSERT_EQ(a.history.size(), 50u);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(to_json(a.history[i]), to_json(b.history[i]));
  Model ma = a.model, mb = b.model;
  EXPECT_EQ(snapshot(ma), snapshot(mb));
}

TEST(Trainer, ZeroEpochsWritesInitialCheckpoint) {
  const Dataset d = fixture::tiny_dataset();
  const fs::path dir = fixture::scratch_dir("zero_epochs");
  train(fixture::tiny_config(0), d, {.run_dir = dir});
  EXPECT_TRUE(fs::exists(dir / "ckpt_epoch_0" / "meta.json"));
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  EXPECT_EQ(fixture::read_file(dir / "log.jsonl"), "");
  EXPECT_FALSE(fs::exists(dir / "ckpt_epoch_1"));
}

TEST(Trainer, ResumeMatchesUninterruptedRunBitwise) {
  const Dataset d = fixture::tiny_dataset();
  const TrainConfig c = fixture::tiny_config(4);
  const fs::path full = fixture::scratch_dir("resume_full");
  const fs::path part = fixture::scratch_dir("resume_part");
  TrainState a = train(c, d, {.run_dir = full});
  train(c, d, {.run_dir = part, .stop_after_epoch = 2});
  EXPECT_TRUE(fs::exists(part / "ckpt_epoch_2"));
  EXPECT_FALSE(fs::exists(part / "ckpt_epoch_3"));
  TrainState b = train(c, d, {.run_dir = part, .resume_from = part / "ckpt_epoch_2"});
  EXPECT_EQ(fixture::read_file(full / "log.jsonl"), fixture::read_file(part / "log.jsonl"));
  EXPECT_EQ(snapshot(a.model), snapshot(b.model));
  EXPECT_EQ(a.velocity, b.velocity);
  EXPECT_EQ(a.t_peak, b.t_peak);

  const Checkpoint ca = load_checkpoint(full / "ckpt_epoch_4");
  const Checkpoint cb = load_checkpoint(part / "ckpt_epoch_4");
  EXPECT_EQ(ca.rng_state, cb.rng_state);
  EXPECT_EQ(ca.step, 8);
  EXPECT_EQ(ca.epoch, 4);
}

TEST(Trainer, LogIsMonotoneAndRoundTrips) {
  const Dataset d = fixture::tiny_dataset();
  const fs::path dir = fixture::scratch_dir("log");
  const TrainState s = train(fixture::tiny_config(3), d, {.run_dir = dir});
  const auto log = read_log(dir / "log.jsonl");
  ASSERT_EQ(log.size(), s.history.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(to_json(log[i]), to_json(s.history[i]));
    EXPECT_EQ(log[i].step, static_cast<long>(i));
    if (i > 0) EXPECT_GE(log[i].epoch, log[i - 1].epoch);
    EXPECT_GE(log[i].cls, 0.0);
    EXPECT_GE(log[i].attp, 0.0);
    EXPECT_GE(log[i].attf, 0.0);
    EXPECT_GE(log[i].sem, 0.0);
  }
}

TEST(Trainer, CheckpointRejectsCorruptParameters) {
  const Dataset d = fixture::tiny_dataset();
  const fs::path dir = fixture::scratch_dir("corrupt");
  train(fixture::tiny_config(1), d, {.run_dir = dir});
  const fs::path ckpt = dir / "ckpt_epoch_1";
  EXPECT_NO_THROW(load_checkpoint(ckpt));
  fs::path victim;
  for (const auto& e : fs::directory_iterator(ckpt / "params")) {
    victim = e.path();
    break;
  }
  std::ofstream(victim, std::ios::binary | std::ios::trunc) << "COAR";
  EXPECT_ANY_THROW(load_checkpoint(ckpt));
  EXPECT_THROW(load_checkpoint(dir / "ckpt_epoch_9"), CheckpointError);
}

TEST(Trainer, LossDecreasesOnTinyProblem) {
  const Dataset d = fixture::tiny_dataset();
  TrainConfig c = fixture::tiny_config(8);
  c.episodes_per_epoch = 4;
  const TrainState s = train(c, d);
  double first = 0, last = 0;
  for (int i = 0; i < 4; ++i) {
    first += s.history[static_cast<std::size_t>(i)].cls;
    last += s.history[s.history.size() - 1 - static_cast<std::size_t>(i)].cls;
  }
  EXPECT_LT(last, first);
}

TEST(Trainer, NonFiniteLossRaisesNumericalError) {
  const Dataset d = fixture::tiny_dataset();
  TrainConfig c = fixture::tiny_config(3);
  c.base_lr = 1e300;
  EXPECT_THROW(train(c, d), NumericalError);
}

}  // namespace
}  // namespace coar
