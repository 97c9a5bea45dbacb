#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "crt/gradcheck.hpp"
#include "crt/train.hpp"
#include "support/scene.hpp"

namespace fs = std::filesystem;
using crt::ModelConfig;
using crt::ad::Shape;
using TD = crt::ad::Tensor<double>;

namespace {

TD random_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  crt::CounterRng rng(seed);
  std::vector<double> v(crt::ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TD(std::move(shape), std::move(v));
}

// Zero final layer: D(x) = 0.5 for every input.
template <class T>
void neutralize_discriminator(crt::ParameterSet<T>& ps) {
  for (const char* n : {"disc.fc2.weight", "disc.fc2.bias"})
    for (auto& v : ps.get(n).mutable_data()) v = 0;
}

crt::TrainConfig toy_train_config() {
  crt::TrainConfig cfg;
  cfg.model = ModelConfig::toy();
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.seed = 3;
  return cfg;
}

struct ToyDataset {
  fs::path root;
  crt::Manifest manifest;

  explicit ToyDataset(const std::string& name, std::vector<std::string> labels = {"gaussian-noise", "identity"}) {
    root = fs::temp_directory_path() / ("crt_training_" + name);
    fs::remove_all(root);
    scene::write_trajectories(root / "frames", 2, 5, 32, 17);
    crt::DatasetOptions opt;
    opt.labels = std::move(labels);
    opt.seed = 5;
    manifest = crt::build_dataset(root / "frames", root / "data", opt);
  }
  ~ToyDataset() { fs::remove_all(root); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST(Losses, NeutralDiscriminatorGivesLogTwoTerms) {
  const auto c = ModelConfig::toy();
  auto ps = crt::init_params<double>(c, 1);
  neutralize_discriminator(ps);
  const auto clean = random_tensor({2, 3, 32, 32}, 2), restored = random_tensor({2, 3, 32, 32}, 3);
  const double d = crt::discriminator_loss(c, ps, clean, restored).item();
  EXPECT_NEAR(d, 2.0 * std::log(2.0), 1e-12);

  const crt::LossWeights w{10.0, 1.0, 0.05};
  const auto g = crt::generator_loss(c, ps, restored, clean, w);
  EXPECT_NEAR(g.adv, std::log(2.0), 1e-12);
  EXPECT_NEAR(g.total_value - 10.0 * g.l1 - 1.0 * g.ssim, 0.05 * std::log(2.0), 1e-12);
  const auto mm = crt::generator_loss(c, ps, restored, clean, w, crt::AdversarialMode::minimax);
  EXPECT_NEAR(mm.adv, -std::log(2.0), 1e-12);
}

TEST(Losses, IdentityRestorationLeavesOnlyAdversarialTerm) {
  const auto clean = random_tensor({2, 3, 32, 32}, 4);
  const TD logits({2}, {0.3, -1.7});
  const auto g = crt::composite_generator_loss(clean, clean, logits, crt::LossWeights{});
  EXPECT_NEAR(g.l1, 0.0, 1e-15);
  EXPECT_NEAR(g.ssim, 0.0, 1e-12);
  // Independent: -mean(log(1 / (1 + e^-z))).
  const double oracle = 0.5 * (std::log1p(std::exp(-0.3)) + std::log1p(std::exp(1.7)));
  EXPECT_NEAR(g.adv, oracle, 1e-12);
  EXPECT_NEAR(g.total_value, 0.05 * oracle, 1e-12);
}

TEST(Losses, ComponentsReaddToTotal) {
  crt::CounterRng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const crt::LossWeights w{rng.uniform(0, 20), rng.uniform(0, 5), rng.uniform(0, 1)};
    const auto clean = random_tensor({1, 3, 16, 16}, 100 + trial), restored = random_tensor({1, 3, 16, 16}, 200 + trial);
    const TD logits({1}, {rng.uniform(-8, 8)});
    const auto g = crt::composite_generator_loss(restored, clean, logits, w);
    EXPECT_NEAR(g.total_value, w.l1 * g.l1 + w.ssim * g.ssim + w.adv * g.adv, 1e-6);
  }
}

TEST(Losses, SaturatedLogitsStayFinite) {
  const TD real({2}, {80.0, 120.0}), fake({2}, {-90.0, -200.0});
  EXPECT_NEAR(crt::composite_discriminator_loss(real, fake).item(), 0.0, 1e-30);
  const TD wrong_real({1}, {-200.0}), wrong_fake({1}, {200.0});
  EXPECT_NEAR(crt::composite_discriminator_loss(wrong_real, wrong_fake).item(), 400.0, 1e-9);
}

TEST(Losses, NonFiniteLossIsReported) {
  auto restored = random_tensor({1, 3, 16, 16}, 5);
  restored.mutable_data()[7] = std::nan("");
  const TD logits({1}, {0.0});
  try {
    crt::composite_generator_loss(restored, random_tensor({1, 3, 16, 16}, 6), logits, crt::LossWeights{});
    FAIL() << "expected NumericalError";
  } catch (const crt::NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("l1="), std::string::npos);
  }
}

TEST(GradCheck, CompositeGeneratorLossToyConfig) {
  const auto c = ModelConfig::toy();
  auto ps = crt::init_params<double>(c, 21);
  for (auto& [name, t] : ps.tensors)
    if (name.ends_with(".weight"))
      for (auto& v : t.mutable_data()) v *= 5.0;
  ps.set_requires_grad("disc.", false);
  const auto x = random_tensor({1, 3, 32, 32}, 22), clean = random_tensor({1, 3, 32, 32}, 23);
  std::vector<crt::ad::NamedTensor> leaves;
  for (const auto& [name, t] : ps.tensors)
    if (name.starts_with("gen.")) leaves.push_back({name, t});
  const crt::LossWeights w{10.0, 1.0, 0.5};
  // The loss is O(1) while some bias gradients are O(1e-6); a wider step keeps
  // central-difference roundoff below the tolerance.
  const auto r = crt::ad::grad_check_leaves(
      [&] { return crt::generator_loss(c, ps, crt::generator_forward(c, ps, x), clean, w).total; }, leaves, 1e-3, 3, 24);
  EXPECT_TRUE(r.passed(1e-3)) << r.max_rel_error << " at " << r.worst_name << " " << r.message;
}

TEST(GradCheck, DiscriminatorLossToyConfig) {
  const auto c = ModelConfig::toy();
  auto ps = crt::init_params<double>(c, 31);
  for (auto& [name, t] : ps.tensors)
    if (name.ends_with(".weight"))
      for (auto& v : t.mutable_data()) v *= 5.0;
  const auto clean = random_tensor({2, 3, 32, 32}, 32), fake = random_tensor({2, 3, 32, 32}, 33);
  std::vector<crt::ad::NamedTensor> leaves;
  for (const auto& [name, t] : ps.tensors)
    if (name.starts_with("disc.")) leaves.push_back({name, t});
  const auto r = crt::ad::grad_check_leaves([&] { return crt::discriminator_loss(c, ps, clean, fake); }, leaves,
                                            1e-5, 3, 34);
  EXPECT_TRUE(r.passed(1e-3)) << r.max_rel_error << " at " << r.worst_name << " " << r.message;
}

TEST(Trainer, DiscriminatorStepLeavesGeneratorUntouchedAndViceVersa) {
  auto cfg = toy_train_config();
  crt::GanTrainer<float> tr(cfg, crt::init_params<float>(cfg.model, 1));
  const auto x = crt::ad::Tensor<float>::full({2, 3, 32, 32}, 0.4f);
  const auto clean = crt::ad::Tensor<float>::full({2, 3, 32, 32}, 0.6f);
  const auto gen0 = tr.params().hash("gen."), disc0 = tr.params().hash("disc.");

  const auto restored = tr.restore(x);
  tr.discriminator_pass(clean, restored);
  tr.apply_discriminator(1.0);
  EXPECT_EQ(tr.params().hash("gen."), gen0);
  const auto disc1 = tr.params().hash("disc.");
  EXPECT_NE(disc1, disc0);

  tr.generator_pass(restored, clean);
  // The generator pass must not leave gradient on D.
  for (const auto& [name, t] : tr.params().tensors) {
    if (!name.starts_with("disc.")) continue;
    EXPECT_FALSE(t.has_grad()) << name;
  }
  tr.apply_generator(1.0);
  EXPECT_EQ(tr.params().hash("disc."), disc1);
  EXPECT_NE(tr.params().hash("gen."), gen0);
  EXPECT_TRUE(tr.params().get("disc.fc2.weight").requires_grad());
}

TEST(Trainer, DoesNotMutateCallerParameters) {
  auto cfg = toy_train_config();
  const auto ps = crt::init_params<float>(cfg.model, 1);
  const auto before = ps.hash("");
  crt::GanTrainer<float> tr(cfg, ps);
  tr.micro_batch(crt::ad::Tensor<float>::full({1, 3, 32, 32}, 0.2f), crt::ad::Tensor<float>::full({1, 3, 32, 32}, 0.7f),
                 true);
  EXPECT_EQ(ps.hash(""), before);
  EXPECT_NE(tr.params().hash(""), before);
}

TEST(Trainer, AccumulatedMicroBatchesMatchOneBatch) {
  auto cfg = toy_train_config();
  cfg.weights.adv = 0.3;
  const auto ps = crt::init_params<double>(cfg.model, 41);
  const auto x = random_tensor({2, 3, 32, 32}, 42), clean = random_tensor({2, 3, 32, 32}, 43);
  auto half = [](const TD& t, std::size_t b) { return crt::ad::slice(t, 0, b, b + 1).detach(); };

  crt::GanTrainer<double> whole(cfg, ps), split(cfg, ps);
  {
    const auto r = whole.restore(x);
    whole.discriminator_pass(clean, r);
    whole.generator_pass(r, clean);
  }
  for (std::size_t b = 0; b < 2; ++b) {
    const auto r = split.restore(half(x, b));
    split.discriminator_pass(half(clean, b), r);
    split.generator_pass(r, half(clean, b));
  }
  double worst = 0;
  std::size_t compared = 0;
  for (const auto& [name, t] : whole.params().tensors) {
    const auto& u = split.params().get(name);
    ASSERT_TRUE(t.has_grad()) << name;
    ASSERT_TRUE(u.has_grad()) << name;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      worst = std::max(worst, std::abs(t.grad()[i] - 0.5 * u.grad()[i]));
      ++compared;
    }
  }
  EXPECT_LT(worst, 1e-6);
  EXPECT_GT(compared, 1000u);

  // After the scaled Adam step both copies hold the same weights.
  whole.apply_discriminator(1.0);
  whole.apply_generator(1.0);
  split.apply_discriminator(0.5);
  split.apply_generator(0.5);
  for (const auto& [name, t] : whole.params().tensors) {
    const auto& u = split.params().get(name);
    for (std::size_t i = 0; i < t.numel(); ++i) ASSERT_NEAR(t.data()[i], u.data()[i], 1e-9) << name;
  }
}

TEST(Trainer, MicroBatchStepsOnlyWhenAsked) {
  auto cfg = toy_train_config();
  cfg.accumulation = 3;
  crt::GanTrainer<float> tr(cfg, crt::init_params<float>(cfg.model, 2));
  const auto x = crt::ad::Tensor<float>::full({1, 3, 32, 32}, 0.3f), y = crt::ad::Tensor<float>::full({1, 3, 32, 32}, 0.5f);
  const auto h0 = tr.params().hash("");
  tr.micro_batch(x, y, false);
  tr.micro_batch(x, y, false);
  EXPECT_EQ(tr.pending(), 2u);
  EXPECT_EQ(tr.params().hash(""), h0);
  tr.micro_batch(x, y, true);
  EXPECT_EQ(tr.pending(), 0u);
  EXPECT_NE(tr.params().hash(""), h0);
  EXPECT_EQ(tr.gen_optimizer().step, 1u);
  EXPECT_EQ(tr.disc_optimizer().step, 1u);
}

TEST(Trainer, TemperaturesStayAboveFloor) {
  auto cfg = toy_train_config();
  cfg.lr = 50.0;  // absurd rate to drive tau negative
  crt::GanTrainer<float> tr(cfg, crt::init_params<float>(cfg.model, 3));
  const auto x = crt::ad::Tensor<float>::full({1, 3, 32, 32}, 0.3f), y = crt::ad::Tensor<float>::full({1, 3, 32, 32}, 0.5f);
  for (int i = 0; i < 3; ++i) tr.micro_batch(x, y, true);
  for (const auto& [name, t] : tr.params().tensors) {
    if (!name.ends_with("attn.tau")) continue;
    for (float v : t.data()) EXPECT_GE(v, static_cast<float>(crt::kMinTemperature)) << name;
  }
}

TEST(Train, DeterministicHistoryAndCheckpoints) {
  ToyDataset ds("determinism");
  auto cfg = toy_train_config();
  crt::TrainOptions a{ds.root / "run_a", std::nullopt, nullptr}, b{ds.root / "run_b", std::nullopt, nullptr};
  const auto ra = crt::train(ds.manifest, cfg, a);
  const auto rb = crt::train(ds.manifest, cfg, b);
  EXPECT_EQ(ra.params.hash(""), rb.params.hash(""));
  EXPECT_EQ(slurp(ds.root / "run_a" / "history.jsonl"), slurp(ds.root / "run_b" / "history.jsonl"));
  EXPECT_TRUE(fs::exists(ds.root / "run_a" / "best.crt"));
  EXPECT_TRUE(fs::exists(ds.root / "run_a" / "last.crt"));
  const auto ck = crt::load_checkpoint(ds.root / "run_a" / "last.crt");
  EXPECT_EQ(ck.params.hash(""), ra.params.hash(""));
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->generator.step, ra.steps.size());
  EXPECT_EQ(ra.epochs.size(), 2u);

  // Steps: ceil(train pairs / batch) per epoch.
  const std::size_t per_epoch = (ds.manifest.count(crt::Split::train) + 3) / 4;
  EXPECT_EQ(ra.steps.size(), 2 * per_epoch);
  std::size_t lines = 0;
  std::istringstream hist(slurp(ds.root / "run_a" / "history.jsonl"));
  for (std::string line; std::getline(hist, line);) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.at("type") == "step" || j.at("type") == "epoch");
    ++lines;
  }
  EXPECT_EQ(lines, ra.steps.size() + ra.epochs.size());
}

TEST(Train, MaxStepsStopsEarly) {
  ToyDataset ds("max_steps");
  auto cfg = toy_train_config();
  cfg.epochs = 5;
  cfg.max_steps = 3;
  const auto r = crt::train(ds.manifest, cfg);
  EXPECT_EQ(r.steps.size(), 3u);
  EXPECT_EQ(r.steps.back().step, 3u);
}

TEST(Train, AccumulationCountsOptimizerSteps) {
  ToyDataset ds("accumulation");
  auto cfg = toy_train_config();
  cfg.batch_size = 2;
  cfg.accumulation = 2;
  cfg.epochs = 1;
  const auto r = crt::train(ds.manifest, cfg);
  const std::size_t micro = (ds.manifest.count(crt::Split::train) + 1) / 2;
  EXPECT_EQ(r.steps.size(), (micro + 1) / 2);
  EXPECT_EQ(r.optimizer.generator.step, r.steps.size());
}

TEST(Train, NonFiniteParametersAbortWithRecord) {
  ToyDataset ds("abort");
  auto cfg = toy_train_config();
  auto ps = crt::init_params<float>(cfg.model, 0);
  ps.get("gen.head.proj.bias").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  crt::TrainOptions opt{ds.root / "run", ps, nullptr};
  EXPECT_THROW(crt::train(ds.manifest, cfg, opt), crt::NumericalError);
  const auto hist = slurp(ds.root / "run" / "history.jsonl");
  EXPECT_NE(hist.find("\"abort\""), std::string::npos);
}

TEST(Evaluate, UntrainedModelReportAndIdentityRow) {
  ToyDataset ds("evaluate");
  const auto c = ModelConfig::toy();
  const auto ps = crt::init_params<float>(c, 0);
  const auto report = crt::evaluate(c, ps, ds.manifest, crt::Split::val);
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].label, "gaussian-noise");
  const auto& id = report.row("identity");
  EXPECT_DOUBLE_EQ(id.ssim_corrupted, 1.0);
  EXPECT_TRUE(std::isinf(id.psnr_corrupted) || id.psnr_corrupted > 90.0);
  for (const auto& r : report.rows) {
    EXPECT_TRUE(std::isfinite(r.psnr_restored));
    EXPECT_GT(r.ssim_restored, -1.0);
    EXPECT_LE(r.ssim_restored, 1.0);
  }
  EXPECT_EQ(report.rows[0].pairs + report.rows[1].pairs, ds.manifest.count(crt::Split::val));
  const auto table = report.to_table();
  EXPECT_NE(table.find("gaussian-noise"), std::string::npos);
  EXPECT_NE(table.find("SSIM delta"), std::string::npos);
  std::istringstream jl(report.to_jsonl());
  std::size_t n = 0;
  for (std::string line; std::getline(jl, line); ++n) EXPECT_EQ(nlohmann::json::parse(line).at("split"), "val");
  EXPECT_EQ(n, 2u);
  EXPECT_THROW(crt::evaluate(ModelConfig::desk(), crt::init_params<float>(ModelConfig::desk(), 0), ds.manifest,
                             crt::Split::val),
               crt::DataError);
}

TEST(Evaluate, BatchSizeDoesNotChangeResults) {
  ToyDataset ds("batching", {"centered-square"});
  const auto c = ModelConfig::toy();
  const auto ps = crt::init_params<float>(c, 4);
  const auto a = crt::evaluate(c, ps, ds.manifest, crt::Split::train, 1);
  const auto b = crt::evaluate(c, ps, ds.manifest, crt::Split::train, 5);
  EXPECT_NEAR(a.rows[0].psnr_restored, b.rows[0].psnr_restored, 1e-4);
  EXPECT_NEAR(a.rows[0].ssim_restored, b.rows[0].ssim_restored, 1e-6);
}

TEST(TrainConfig, Profiles) {
  const auto l = crt::TrainConfig::for_profile("libero");
  EXPECT_EQ(l.epochs, 30u);
  EXPECT_DOUBLE_EQ(l.lr, 1e-4);
  EXPECT_EQ(l.batch_size * l.accumulation, 144u);
  EXPECT_EQ(l.model.image_side, 360u);
  EXPECT_EQ(l.model.patch, 12u);
  const auto m = crt::TrainConfig::for_profile("metaworld");
  EXPECT_EQ(m.epochs, 37u);
  EXPECT_DOUBLE_EQ(m.lr, 7e-4);
  EXPECT_EQ(m.batch_size * m.accumulation, 256u);
  EXPECT_EQ(m.model.image_side, 480u);
  EXPECT_EQ(m.model.patch, 16u);
  for (const auto& p : {l, m}) {
    EXPECT_DOUBLE_EQ(p.weights.l1, 10.0);
    EXPECT_DOUBLE_EQ(p.weights.ssim, 1.0);
    EXPECT_DOUBLE_EQ(p.weights.adv, 0.05);
    EXPECT_NO_THROW(p.validate());
  }
  EXPECT_THROW(crt::TrainConfig::for_profile("imagenet"), crt::UsageError);
}

TEST(TrainConfig, JsonOverlayAndRoundTrip) {
  const auto j = nlohmann::json::parse(R"({"profile":"desk","epochs":7,"lr":0.001,"lambda_adv":0.1,
                                           "adversarial":"minimax","model":{"dim":32,"depth":1,"heads":2}})");
  const auto c = crt::TrainConfig::from_json(j);
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_DOUBLE_EQ(c.lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.weights.adv, 0.1);
  EXPECT_EQ(c.adversarial, crt::AdversarialMode::minimax);
  EXPECT_EQ(c.model.dim, 32u);
  EXPECT_EQ(c.model.depth, 1u);
  const auto back = crt::TrainConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
  EXPECT_THROW(crt::TrainConfig::from_json(nlohmann::json::parse(R"({"epoch":3})")), crt::UsageError);
  EXPECT_THROW(crt::TrainConfig::from_json(nlohmann::json::parse(R"({"lr":"fast"})")), crt::UsageError);
  auto bad = crt::TrainConfig{};
  bad.disc_steps = 2;
  bad.accumulation = 2;
  EXPECT_THROW(bad.validate(), crt::UsageError);
}
