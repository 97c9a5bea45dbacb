#pragma once

// Adversarial training: per micro-batch a discriminator pass on detached
// restorations, then a generator pass against the frozen discriminator;
// gradients accumulate over `accumulation` micro-batches per Adam step.

#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crt/adam.hpp"
#include "crt/checkpoint.hpp"
#include "crt/dataset.hpp"
#include "crt/evaluate.hpp"
#include "crt/losses.hpp"
#include "crt/model.hpp"

namespace crt {

struct TrainConfig {
  std::string profile = "desk";
  ModelConfig model;
  std::size_t epochs = 2;
  double lr = 5e-4;
  std::size_t batch_size = 8;
  std::size_t accumulation = 1;
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;         // optimizer steps; 0 = no limit
  std::size_t checkpoint_every = 1;  // epochs between last.crt writes
  std::size_t disc_steps = 1;        // discriminator updates per generator update
  LossWeights weights;
  AdversarialMode adversarial = AdversarialMode::non_saturating;

  void validate() const {
    model.validate();
    weights.validate();
    if (epochs < 1 || batch_size < 1 || accumulation < 1) throw UsageError("epochs, batch size and accumulation must be >= 1");
    if (!(lr > 0)) throw UsageError("learning rate must be > 0");
    if (checkpoint_every < 1) throw UsageError("checkpoint cadence must be >= 1");
    if (disc_steps < 1) throw UsageError("discriminator steps must be >= 1");
    if (disc_steps > 1 && accumulation > 1) throw UsageError("discriminator steps > 1 requires accumulation 1");
  }

  static TrainConfig for_profile(std::string_view name) {
    TrainConfig c;
    c.profile = std::string(name);
    if (name == "desk") return c;
    if (name == "libero") {
      c.model = ModelConfig::libero();
      c.epochs = 30;
      c.lr = 1e-4;
      c.batch_size = 12;
      c.accumulation = 12;
      return c;
    }
    if (name == "metaworld") {
      c.model = ModelConfig::metaworld();
      c.epochs = 37;
      c.lr = 7e-4;
      c.batch_size = 8;
      c.accumulation = 32;
      return c;
    }
    throw UsageError("unknown profile '" + std::string(name) + "' (expected desk, libero or metaworld)");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["profile"] = profile;
    j["epochs"] = epochs;
    j["lr"] = lr;
    j["batch_size"] = batch_size;
    j["accumulation"] = accumulation;
    j["seed"] = seed;
    j["max_steps"] = max_steps;
    j["checkpoint_every"] = checkpoint_every;
    j["disc_steps"] = disc_steps;
    j["lambda_l1"] = weights.l1;
    j["lambda_ssim"] = weights.ssim;
    j["lambda_adv"] = weights.adv;
    j["adversarial"] = adversarial == AdversarialMode::minimax ? "minimax" : "non-saturating";
    j["model"] = model.serialize();
    return j;
  }

  /// Overlays the keys present in `j` on `base` (a "profile" key selects the base first).
  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base) {
    try {
      if (j.contains("profile")) base = for_profile(j.at("profile").get<std::string>());
      auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
      };
      get("epochs", base.epochs);
      get("lr", base.lr);
      get("batch_size", base.batch_size);
      get("accumulation", base.accumulation);
      get("seed", base.seed);
      get("max_steps", base.max_steps);
      get("checkpoint_every", base.checkpoint_every);
      get("disc_steps", base.disc_steps);
      get("lambda_l1", base.weights.l1);
      get("lambda_ssim", base.weights.ssim);
      get("lambda_adv", base.weights.adv);
      if (j.contains("adversarial")) {
        const auto mode = j.at("adversarial").get<std::string>();
        if (mode == "minimax") base.adversarial = AdversarialMode::minimax;
        else if (mode == "non-saturating") base.adversarial = AdversarialMode::non_saturating;
        else throw UsageError("unknown adversarial mode '" + mode + "'");
      }
      if (j.contains("model")) {
        const auto& mj = j.at("model");
        if (mj.is_string()) {
          base.model = ModelConfig::parse(mj.get<std::string>(), base.model);
        } else {
          std::string text;
          for (const auto& [k, v] : mj.items()) text += k + "=" + (v.is_string() ? v.get<std::string>() : v.dump()) + " ";
          base.model = ModelConfig::parse(text, base.model);
        }
      }
      for (const auto& [k, v] : j.items()) {
        static const std::set<std::string> known{"profile", "epochs", "lr", "batch_size", "accumulation", "seed",
                                                 "max_steps", "checkpoint_every", "disc_steps", "lambda_l1",
                                                 "lambda_ssim", "lambda_adv", "adversarial", "model"};
        if (!known.count(k)) throw UsageError("unknown training config key '" + k + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("training config: ") + e.what());
    }
    return base;
  }
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double l1 = 0, ssim = 0, adv = 0, gen_total = 0, disc = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_l1 = 0;
  std::size_t val_pairs = 0;
  double val_psnr = 0;
  double val_ssim = 0;
};

inline nlohmann::ordered_json to_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["type"] = "step";
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["l1"] = r.l1;
  j["ssim_loss"] = r.ssim;
  j["adv_g"] = r.adv;
  j["gen_total"] = r.gen_total;
  j["disc"] = r.disc;
  return j;
}

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["type"] = "epoch";
  j["epoch"] = r.epoch;
  j["steps"] = r.steps;
  j["train_l1"] = r.train_l1;
  j["val_pairs"] = r.val_pairs;
  j["val_psnr"] = r.val_psnr;
  j["val_ssim"] = r.val_ssim;
  return j;
}

/// One generator/discriminator pair with its optimizers.
template <class T>
class GanTrainer {
 public:
  /// Works on a private copy of `params`.
  GanTrainer(const TrainConfig& cfg, const ParameterSet<T>& params) : cfg_(cfg), params_(params.template cast<T>()) {
    cfg_.validate();
    params_.check(cfg_.model);
    params_.set_requires_grad("", true);
    gen_ = params_.group("gen.");
    disc_ = params_.group("disc.");
  }

  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  ad::AdamState<T>& gen_optimizer() { return opt_g_; }
  ad::AdamState<T>& disc_optimizer() { return opt_d_; }
  std::size_t pending() const { return pending_; }

  /// G(x') with its graph recorded.
  ad::Tensor<T> restore(const ad::Tensor<T>& corrupted) const { return generator_forward(cfg_.model, params_, corrupted); }

  /// Accumulates the discriminator gradient for one micro-batch.
  double discriminator_pass(const ad::Tensor<T>& clean, const ad::Tensor<T>& restored) {
    const auto loss = discriminator_loss(cfg_.model, params_, clean, restored);
    ad::backward(loss);
    return static_cast<double>(loss.item());
  }

  /// Accumulates the generator gradient for one micro-batch; D is frozen.
  GeneratorLoss<T> generator_pass(const ad::Tensor<T>& restored, const ad::Tensor<T>& clean) {
    params_.set_requires_grad("disc.", false);
    struct Restore {
      ParameterSet<T>& ps;
      ~Restore() { ps.set_requires_grad("disc.", true); }
    } restore_flags{params_};
    auto loss = generator_loss(cfg_.model, params_, restored, clean, cfg_.weights, cfg_.adversarial);
    ad::backward(loss.total);
    return loss;
  }

  void apply_discriminator(double grad_scale) { apply(disc_, opt_d_, grad_scale, "discriminator"); }
  void apply_generator(double grad_scale) { apply(gen_, opt_g_, grad_scale, "generator"); }

  /// Full micro-batch: D pass(es), then G pass; Adam steps when `step_now`.
  StepRecord micro_batch(const ad::Tensor<T>& corrupted, const ad::Tensor<T>& clean, bool step_now) {
    ++pending_;
    StepRecord r;
    const auto restored = restore(corrupted);
    // With several discriminator updates per generator update, each one steps
    // immediately (accumulation is 1 in that mode).
    const bool multi = cfg_.disc_steps > 1;
    for (std::size_t k = 0; k < cfg_.disc_steps; ++k) {
      r.disc = discriminator_pass(clean, restored);
      if (multi || step_now) apply_discriminator(multi ? 1.0 : 1.0 / static_cast<double>(pending_));
    }
    const auto g = generator_pass(restored, clean);
    r.l1 = g.l1;
    r.ssim = g.ssim;
    r.adv = g.adv;
    r.gen_total = g.total_value;
    if (step_now) {
      apply_generator(1.0 / static_cast<double>(pending_));
      pending_ = 0;
    }
    return r;
  }

 private:
  void apply(std::vector<ad::Tensor<T>>& group, ad::AdamState<T>& opt, double grad_scale, const char* who) {
    const auto result = ad::adam_step(std::span<ad::Tensor<T>>(group), opt, cfg_.lr, grad_scale);
    if (!result.applied) throw NumericalError(std::string(who) + " update skipped: " + result.reason);
    for (auto& t : group) t.zero_grad();
    clamp_temperatures(params_);
  }

  TrainConfig cfg_;
  ParameterSet<T> params_;
  std::vector<ad::Tensor<T>> gen_, disc_;
  ad::AdamState<T> opt_g_, opt_d_;
  std::size_t pending_ = 0;
};

struct TrainResult {
  ParameterSet<float> params;
  OptimizerStates optimizer;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::optional<ParameterSet<float>> warm_start;
  std::ostream* log = nullptr;
};

inline TrainResult train(const Manifest& m, const TrainConfig& cfg, const TrainOptions& opt = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  GanTrainer<float> trainer(cfg, opt.warm_start ? *opt.warm_start : init_params<float>(cfg.model, cfg.seed));
  if (m.count(Split::train) == 0) throw DataError("training split is empty");
  const bool has_val = m.count(Split::val) > 0;

  std::ofstream history;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    history.open(opt.out_dir / "history.jsonl", std::ios::trunc);
    if (!history) throw DataError("cannot write " + (opt.out_dir / "history.jsonl").string());
  }
  auto emit = [&](const nlohmann::ordered_json& j) {
    if (history.is_open()) history << j.dump() << "\n" << std::flush;
  };
  auto log = [&](const std::string& s) {
    if (opt.log) *opt.log << s << std::endl;
  };
  auto snapshot = [&]() {
    Checkpoint ck{cfg.model, trainer.params().cast<float>(), OptimizerStates{trainer.gen_optimizer(), trainer.disc_optimizer()}};
    return ck;
  };

  TrainResult result;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  bool done = false;
  try {
    for (std::size_t epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
      const auto batches = batch_iterator(m, Split::train, cfg.batch_size, hash_combine(cfg.seed, epoch));
      StepRecord acc;
      std::size_t in_step = 0;
      double epoch_l1 = 0;
      std::size_t epoch_steps = 0;
      for (std::size_t b = 0; b < batches.size() && !done; ++b) {
        const auto [corrupted, clean] = load_batch<float>(m, batches[b]);
        const bool step_now = (b + 1) % cfg.accumulation == 0 || b + 1 == batches.size();
        const auto r = trainer.micro_batch(corrupted, clean, step_now);
        acc.l1 += r.l1;
        acc.ssim += r.ssim;
        acc.adv += r.adv;
        acc.gen_total += r.gen_total;
        acc.disc += r.disc;
        ++in_step;
        if (!step_now) continue;
        const double n = static_cast<double>(in_step);
        StepRecord rec{++step, epoch, acc.l1 / n, acc.ssim / n, acc.adv / n, acc.gen_total / n, acc.disc / n};
        result.steps.push_back(rec);
        emit(to_json(rec));
        epoch_l1 += rec.l1;
        ++epoch_steps;
        acc = {};
        in_step = 0;
        if (cfg.max_steps && step >= cfg.max_steps) done = true;
      }

      EpochRecord er{epoch, epoch_steps, epoch_steps ? epoch_l1 / static_cast<double>(epoch_steps) : 0.0, 0, 0, 0};
      if (has_val) {
        const auto report = evaluate(cfg.model, trainer.params(), m, Split::val, cfg.batch_size);
        double psnr_sum = 0, ssim_sum = 0;
        for (const auto& row : report.rows) {
          er.val_pairs += row.pairs;
          psnr_sum += row.psnr_restored * static_cast<double>(row.pairs);
          ssim_sum += row.ssim_restored * static_cast<double>(row.pairs);
        }
        er.val_psnr = psnr_sum / static_cast<double>(er.val_pairs);
        er.val_ssim = ssim_sum / static_cast<double>(er.val_pairs);
      }
      result.epochs.push_back(er);
      emit(to_json(er));
      {
        char line[256];
        std::snprintf(line, sizeof line, "epoch %zu: steps=%zu train_l1=%.5f val_psnr=%.3f val_ssim=%.4f", epoch, step,
                      er.train_l1, er.val_psnr, er.val_ssim);
        log(line);
      }
      if (!opt.out_dir.empty()) {
        const double score = has_val ? er.val_psnr : static_cast<double>(epoch);
        if (score > best) {
          best = score;
          save_checkpoint(snapshot(), opt.out_dir / "best.crt");
        }
        if (epoch % cfg.checkpoint_every == 0) save_checkpoint(snapshot(), opt.out_dir / "last.crt");
      }
    }
  } catch (const NumericalError& e) {
    nlohmann::ordered_json j;
    j["type"] = "abort";
    j["step"] = step;
    j["reason"] = e.what();
    emit(j);
    throw NumericalError(std::string(e.what()) + " (after " + std::to_string(step) + " steps)");
  }
  if (!opt.out_dir.empty()) save_checkpoint(snapshot(), opt.out_dir / "last.crt");
  result.params = trainer.params();
  result.optimizer = OptimizerStates{trainer.gen_optimizer(), trainer.disc_optimizer()};
  return result;
}

}  // namespace crt
