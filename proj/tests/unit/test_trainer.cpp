#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "acr/error.hpp"
#include "acr/rng.hpp"
#include "acr/trainer.hpp"

using namespace acr;

namespace {

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.vit.patch_size = 4;
  c.vit.grid = {4, 4};
  c.vit.embed_dim = 8;
  c.vit.num_layers = 2;
  c.vit.num_heads = 2;
  c.vit.num_classes = 3;
  c.epochs = 2;
  c.batch_size = 2;
  c.learning_rate = 0.01;
  c.weights = {.alpha = 1.0, .beta = 1.0};
  return c;
}

Dataset tiny_dataset(std::size_t n = 4) {
  return generate({.num_samples = n, .num_classes = 3, .height = 16, .width = 16, .seed = 9});
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(TrainConfig, TextRoundTrip) {
  TrainConfig c = tiny_train_config();
  c.weights.distance = Distance::SmoothL1;
  c.augmentations = parse_augmentations("flip_h,rot90,resize:3x5");
  c.optimizer = OptimizerKind::Adam;
  c.learning_rate = 0.1 + 0.2;
  c.loss_layers = LayerRange{1, 1};
  c.localization.layers = LayerRange{0, 1};
  c.localization.refined = false;
  c.holdout = 0.25;
  const std::string text = to_config_text(c);
  const TrainConfig back = parse_train_config(text);
  EXPECT_EQ(to_config_text(back), text);
  EXPECT_EQ(back.vit, c.vit);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_EQ(back.augmentations, c.augmentations);
  EXPECT_EQ(back.weights.distance, Distance::SmoothL1);
  EXPECT_EQ(back.optimizer, OptimizerKind::Adam);
  EXPECT_EQ(*back.loss_layers, (LayerRange{1, 1}));
  EXPECT_FALSE(back.localization.refined);
}

TEST(TrainConfig, CommentsAndDefaults) {
  const TrainConfig c = parse_train_config("# header\n\nloss.alpha = 3  # inline\n");
  EXPECT_EQ(c.weights.alpha, 3.0);
  EXPECT_EQ(c.weights.beta, 100.0);
  EXPECT_EQ(c.augmentations, (std::vector<SpatialTransform>{SpatialTransform::of(TransformKind::FlipH)}));
}

TEST(TrainConfig, UnknownKeyAndBadValues) {
  EXPECT_THROW(parse_train_config("train.epochs = 2\nloss.gamma = 1\n"), ContractError);
  EXPECT_THROW(parse_train_config("train.epochs = two\n"), ContractError);
  EXPECT_THROW(parse_train_config("train.optimizer = lbfgs\n"), ContractError);
  EXPECT_THROW(parse_train_config("no equals sign\n"), ContractError);
  try {
    parse_train_config("train.epochs = 2\nloss.gamma = 1\n");
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c = tiny_train_config();
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = -0.1;
  EXPECT_THROW(c.validate(), ContractError);
  c = tiny_train_config();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = tiny_train_config();
  c.augmentations.clear();
  EXPECT_THROW(c.validate(), ContractError);
  c = tiny_train_config();
  c.loss_layers = LayerRange{0, 5};
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(TrainConfig, LayerDefaults) {
  TrainConfig c = tiny_train_config();
  c.vit.num_layers = 4;
  EXPECT_EQ(c.resolve_loss_layers(), (LayerRange{0, 3}));
  EXPECT_EQ(c.localization.resolve_layers(4), (LayerRange{2, 3}));
}

TEST(Augmentations, ParseList) {
  const auto a = parse_augmentations("flip_h, rot180");
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[1].kind, TransformKind::Rot180);
  EXPECT_THROW(parse_augmentations(""), ContractError);
  EXPECT_THROW(parse_augmentations("flip_h,skew"), ContractError);
}

TEST(SiameseStep, IdentityViewHasZeroConsistency) {
  TrainConfig c = tiny_train_config();
  Parameters p = init_parameters(c.vit, 1);
  const Dataset d = tiny_dataset(1);
  const LossBreakdown b = siamese_step(p, c, d.samples[0], SpatialTransform::identity(), {});
  EXPECT_EQ(b.l_act, 0.0);
  EXPECT_EQ(b.l_aff, 0.0);
  EXPECT_GT(b.l_cls, 0.0);
  EXPECT_NEAR(b.total, b.l_cls, 1e-12);
}

TEST(SiameseStep, BackwardScaleFillsGradients) {
  TrainConfig c = tiny_train_config();
  Parameters p = init_parameters(c.vit, 2);
  const Dataset d = tiny_dataset(1);
  p.zero_grad();
  siamese_step(p, c, d.samples[0], SpatialTransform::of(TransformKind::FlipH), 1.0);
  double norm = 0.0;
  for (const auto& e : p.entries())
    for (double g : e.tensor.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  TrainConfig c = tiny_train_config();
  c.learning_rate = 0.0;
  c.epochs = 1;
  for (OptimizerKind opt : {OptimizerKind::Sgd, OptimizerKind::Momentum, OptimizerKind::Adam}) {
    c.optimizer = opt;
    const TrainResult r = train(c, tiny_dataset(2));
    const Parameters init = init_parameters(c.vit, Rng::derive(c.seed, 0));
    for (std::size_t i = 0; i < init.entries().size(); ++i)
      EXPECT_EQ(r.params.entries()[i].tensor.values(), init.entries()[i].tensor.values())
          << r.params.entries()[i].name;
  }
}

TEST(Train, DeterministicForSeed) {
  TrainConfig c = tiny_train_config();
  c.holdout = 0.25;
  const Dataset d = tiny_dataset(8);
  const TrainResult a = train(c, d);
  const TrainResult b = train(c, d);
  EXPECT_TRUE(a.params == b.params);
  ASSERT_EQ(a.log.size(), 2u);
  for (std::size_t e = 0; e < a.log.size(); ++e)
    EXPECT_EQ(to_json(a.log[e]).dump(), to_json(b.log[e]).dump());
  c.seed = 1;
  EXPECT_FALSE(train(c, d).params == a.params);
}

TEST(Train, EpochLogFields) {
  TrainConfig c = tiny_train_config();
  c.holdout = 0.5;
  c.epochs = 1;
  std::size_t calls = 0;
  const TrainResult r = train(c, tiny_dataset(4), {.on_epoch = [&](const EpochLog&) { ++calls; }});
  EXPECT_EQ(calls, 1u);
  const auto j = to_json(r.log[0]);
  EXPECT_EQ(j["epoch"], 0);
  EXPECT_TRUE(j.contains("l_cls"));
  EXPECT_TRUE(j.contains("holdout_seed_miou"));
}

TEST(Train, WritesRunDirectory) {
  const auto dir = std::filesystem::temp_directory_path() / "acr_test_trainer_run";
  std::filesystem::remove_all(dir);
  TrainConfig c = tiny_train_config();
  c.epochs = 1;
  train_to_directory(c, tiny_dataset(2), dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir / "config.txt"));
  EXPECT_EQ(to_config_text(load_train_config(dir / "config.txt")), to_config_text(c));
  std::istringstream lines(slurp(dir / "metrics.jsonl"));
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) ++count;
  EXPECT_EQ(count, 1u);
  const Checkpoint ck = load_checkpoint(dir / "checkpoint.bin");
  EXPECT_EQ(ck.config, c.vit);
  std::filesystem::remove_all(dir);
}

TEST(Evaluate, ReportsHeadlineAndSweep) {
  const TrainConfig c = tiny_train_config();
  const Parameters p = init_parameters(c.vit, 3);
  const Dataset d = tiny_dataset(3);
  const EvalReport r = evaluate(p, c.vit, d, {.jobs = 2});
  EXPECT_EQ(r.images, 3u);
  EXPECT_EQ(r.layers, (LayerRange{0, 1}));
  ASSERT_TRUE(r.seed_miou().has_value());
  EXPECT_EQ(*r.seed_miou(), *r.refined_sweep.best_miou);
  EXPECT_EQ(r.sweep.size(), 2u);
  const auto j = r.to_json();
  for (const char* key : {"images", "layers", "seed_miou", "unrefined", "refined", "layer_sweep"})
    EXPECT_TRUE(j.contains(key)) << key;
  const EvalReport serial = evaluate(p, c.vit, d, {.jobs = 1});
  EXPECT_EQ(serial.to_json().dump(), r.to_json().dump());
}

TEST(Ablation, CellGrids) {
  TrainConfig c = tiny_train_config();
  c.weights = {.alpha = 5.0, .beta = 7.0};
  const auto grid = regularizer_grid(c);
  ASSERT_EQ(grid.size(), 4u);
  EXPECT_EQ(grid[0].alpha, 0.0);
  EXPECT_EQ(grid[0].beta, 0.0);
  EXPECT_EQ(grid[3].alpha, 5.0);
  EXPECT_EQ(grid[3].beta, 7.0);
  EXPECT_EQ(distance_sweep(c).size(), 3u);
  EXPECT_GE(augmentation_sweep(c).size(), 5u);
}
