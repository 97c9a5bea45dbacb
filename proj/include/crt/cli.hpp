#pragma once

// The `crt` command line: corrupt, dataset-build, train, restore, eval and
// gradcheck. Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.
// Every subcommand logs its fully resolved configuration before any work.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crt/checkpoint.hpp"
#include "crt/corruption.hpp"
#include "crt/dataset.hpp"
#include "crt/error.hpp"
#include "crt/evaluate.hpp"
#include "crt/gradcheck_suite.hpp"
#include "crt/parallel.hpp"
#include "crt/png_io.hpp"
#include "crt/train.hpp"

namespace crt::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct ImageFile {
  fs::path source;
  fs::path relative;  // output name relative to --out
};

/// A single PNG, or every *.png below a directory (sorted, recursive).
inline std::vector<ImageFile> collect_images(const fs::path& in) {
  if (!fs::exists(in)) throw DataError(in.string() + ": no such file or directory");
  std::vector<ImageFile> files;
  if (fs::is_regular_file(in)) {
    files.push_back({in, in.filename()});
    return files;
  }
  for (const auto& e : fs::recursive_directory_iterator(in))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back({e.path(), fs::relative(e.path(), in)});
  std::sort(files.begin(), files.end(), [](const ImageFile& a, const ImageFile& b) { return a.relative < b.relative; });
  if (files.empty()) throw DataError(in.string() + ": no .png files found");
  return files;
}

inline void add_corruption_flags(CLI::App& cmd, CorruptionParams& p) {
  cmd.add_option("--side-fraction", p.side_fraction, "centered-square side as a fraction of the short side")
      ->capture_default_str();
  cmd.add_option("--sigma", p.noise_sigma, "gaussian-noise standard deviation")->capture_default_str();
  cmd.add_option("--line-fraction", p.line_fraction, "fraction of rows blackened by horizontal-lines")
      ->capture_default_str();
  cmd.add_option("--line-thickness", p.line_thickness, "rows per horizontal band")->capture_default_str();
  cmd.add_option("--drops-min", p.drops_min, "minimum number of water drops")->capture_default_str();
  cmd.add_option("--drops-max", p.drops_max, "maximum number of water drops")->capture_default_str();
  cmd.add_option("--drop-radius-min", p.drop_radius_min, "minimum drop radius, fraction of the short side")
      ->capture_default_str();
  cmd.add_option("--drop-radius-max", p.drop_radius_max, "maximum drop radius, fraction of the short side")
      ->capture_default_str();
  cmd.add_option("--drop-alpha", p.drop_alpha, "blend weight of the blurred drop interior")->capture_default_str();
}

inline nlohmann::ordered_json to_json(const CorruptionParams& p) {
  nlohmann::ordered_json j;
  j["side_fraction"] = p.side_fraction;
  j["sigma"] = p.noise_sigma;
  j["line_fraction"] = p.line_fraction;
  j["line_thickness"] = p.line_thickness;
  j["drops_min"] = p.drops_min;
  j["drops_max"] = p.drops_max;
  j["drop_radius_min"] = p.drop_radius_min;
  j["drop_radius_max"] = p.drop_radius_max;
  j["drop_alpha"] = p.drop_alpha;
  return j;
}

inline void log_config(std::ostream& log, std::string_view command, const nlohmann::ordered_json& j) {
  log << "config " << command << " " << j.dump() << std::endl;
}

/// Seed for one file of a `corrupt` run: the run seed mixed with the file's
/// relative path, so a file gets the same corruption wherever it is listed.
inline std::uint64_t file_seed(std::uint64_t seed, const fs::path& relative) {
  return hash_combine(seed, hash_string(relative.generic_string()));
}

inline std::size_t worker_count(std::size_t threads) {
  return threads ? threads : std::max(1u, std::thread::hardware_concurrency());
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& log = std::cerr) {
  CLI::App app{"Corruption restoration transformer: corrupt, build datasets, train, restore, evaluate.", "crt"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // corrupt
  struct {
    std::string in, out, kind;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    CorruptionParams params;
  } co;
  auto* corrupt = app.add_subcommand("corrupt", "apply one corruption to an image or a directory of images");
  corrupt->add_option("--in", co.in, "input PNG or directory")->required();
  corrupt->add_option("--out", co.out, "output directory")->required();
  corrupt->add_option("--kind", co.kind, "centered-square | gaussian-noise | horizontal-lines | water-drops | identity")
      ->required();
  corrupt->add_option("--seed", co.seed, "run seed (mixed with each file's relative path)")->capture_default_str();
  corrupt->add_option("--threads", co.threads, "worker threads (0 = all cores)")->capture_default_str();
  add_corruption_flags(*corrupt, co.params);

  // dataset-build
  struct {
    std::string frames, out, kinds, name = "dataset";
    std::uint64_t seed = 0;
    double split = 0.8;
    CorruptionParams params;
  } db;
  auto* build = app.add_subcommand("dataset-build", "build (corrupted, clean) pairs and a manifest from frame folders");
  build->add_option("--frames", db.frames, "root with one sub-directory of PNG frames per trajectory")->required();
  build->add_option("--out", db.out, "output dataset directory")->required();
  build->add_option("--kinds", db.kinds, "comma-separated kinds, e.g. gaussian-noise,horizontal-lines-0.2")->required();
  build->add_option("--seed", db.seed, "dataset seed")->capture_default_str();
  build->add_option("--split", db.split, "train fraction")->capture_default_str();
  build->add_option("--name", db.name, "dataset name")->capture_default_str();
  add_corruption_flags(*build, db.params);

  // train
  struct {
    std::string dataset, profile = "desk", config, out, warm_start;
    std::optional<std::size_t> epochs, batch_size, accumulation, max_steps, disc_steps, checkpoint_every;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr, lambda_l1, lambda_ssim, lambda_adv;
    std::optional<bool> residual;
  } tr;
  auto* train_cmd = app.add_subcommand("train", "train the generator and discriminator on a dataset");
  train_cmd->add_option("--dataset", tr.dataset, "dataset directory (with manifest.jsonl)")->required();
  train_cmd->add_option("--out", tr.out, "run directory for history.jsonl, config.json and checkpoints")->required();
  auto* profile_opt = train_cmd->add_option("--profile", tr.profile, "desk | libero | metaworld")->capture_default_str();
  train_cmd->add_option("--config", tr.config, "JSON training config (applied over the profile)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--accumulation", tr.accumulation, "micro-batches per optimizer step");
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--max-steps", tr.max_steps, "stop after this many optimizer steps");
  train_cmd->add_option("--disc-steps", tr.disc_steps, "discriminator updates per generator update");
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "epochs between last.crt writes");
  train_cmd->add_option("--lambda-l1", tr.lambda_l1);
  train_cmd->add_option("--lambda-ssim", tr.lambda_ssim);
  train_cmd->add_option("--lambda-adv", tr.lambda_adv);
  train_cmd->add_option("--residual", tr.residual, "predict a correction on top of the input (true/false)");
  train_cmd->add_option("--warm-start", tr.warm_start, "initialize from this checkpoint")->check(CLI::ExistingFile);

  // restore
  struct {
    std::string ckpt, in, out;
    std::size_t batch = 8, threads = 0;
  } re;
  auto* restore = app.add_subcommand("restore", "run the generator on an image or a directory of images");
  restore->add_option("--ckpt", re.ckpt, "checkpoint file")->required();
  restore->add_option("--in", re.in, "input PNG or directory")->required();
  restore->add_option("--out", re.out, "output directory")->required();
  restore->add_option("--batch", re.batch, "images per forward pass")->capture_default_str()->check(CLI::PositiveNumber);
  restore->add_option("--threads", re.threads, "worker threads (0 = all cores)")->capture_default_str();

  // eval
  struct {
    std::string ckpt, dataset, split = "val", report;
    std::size_t batch = 8;
  } ev;
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM of corrupted and restored images per kind");
  eval->add_option("--ckpt", ev.ckpt, "checkpoint file")->required();
  eval->add_option("--dataset", ev.dataset, "dataset directory")->required();
  eval->add_option("--split", ev.split, "train | val")->capture_default_str();
  eval->add_option("--report", ev.report, "JSONL report path (a .txt table is written beside it)")->required();
  eval->add_option("--batch", ev.batch, "images per forward pass")->capture_default_str()->check(CLI::PositiveNumber);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every gradient in double precision");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    // With no subcommand recognized, name the first argument CLI11 could not place.
    if (app.get_subcommands().empty() && argc > 1) log << "error: unknown subcommand or flag '" << argv[1] << "'\n";
    else log << "error: " << e.what() << "\n";
    log << "\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    log << sub->help();
    return kUsage;
  }

  try {
    if (corrupt->parsed()) {
      const auto kind = parse_kind(co.kind);
      const auto files = collect_images(co.in);
      nlohmann::ordered_json cfg{{"in", co.in}, {"out", co.out}, {"kind", kind_name(kind)}, {"seed", co.seed},
                                 {"threads", worker_count(co.threads)}, {"files", files.size()}};
      cfg["params"] = to_json(co.params);
      log_config(log, "corrupt", cfg);
      std::vector<std::string> specs(files.size());
      parallel_for(
          files.size(),
          [&](std::size_t i) {
            const auto img = load_image(files[i].source);
            const auto spec = sample_spec(kind, file_seed(co.seed, files[i].relative), img.height, img.width, co.params);
            save_image(crt::corrupt(img, spec), fs::path(co.out) / files[i].relative);
            nlohmann::ordered_json j{{"file", files[i].relative.generic_string()}, {"spec", spec.serialize()}};
            specs[i] = j.dump();
          },
          co.threads);
      std::string listing;
      for (const auto& s : specs) listing += s + "\n";
      detail::write_atomically(fs::path(co.out) / "corruptions.jsonl", listing);
      log << "corrupted " << files.size() << " image(s) into " << co.out << std::endl;
      return kOk;
    }

    if (build->parsed()) {
      DatasetOptions opt;
      opt.name = db.name;
      opt.seed = db.seed;
      opt.split_ratio = db.split;
      opt.params = db.params;
      std::stringstream ss(db.kinds);
      for (std::string k; std::getline(ss, k, ',');)
        if (!k.empty()) opt.labels.push_back(k);
      nlohmann::ordered_json cfg{{"frames", db.frames}, {"out", db.out}, {"name", db.name}, {"kinds", opt.labels},
                                 {"seed", db.seed}, {"split", db.split}};
      cfg["params"] = to_json(db.params);
      log_config(log, "dataset-build", cfg);
      const auto m = build_dataset(db.frames, db.out, opt);
      log << "wrote " << m.pairs.size() << " pairs (" << m.count(Split::train) << " train, " << m.count(Split::val)
          << " val) to " << db.out << std::endl;
      return kOk;
    }

    if (train_cmd->parsed()) {
      TrainConfig cfg = TrainConfig::for_profile(tr.profile);
      if (!tr.config.empty()) {
        std::ifstream in(tr.config);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
          throw UsageError(tr.config + ": " + e.what());
        }
        // An explicit --profile wins over a profile named inside the file.
        if (profile_opt->count() && j.contains("profile")) j.erase("profile");
        cfg = TrainConfig::from_json(j, cfg);
      }
      if (tr.epochs) cfg.epochs = *tr.epochs;
      if (tr.lr) cfg.lr = *tr.lr;
      if (tr.batch_size) cfg.batch_size = *tr.batch_size;
      if (tr.accumulation) cfg.accumulation = *tr.accumulation;
      if (tr.seed) cfg.seed = *tr.seed;
      if (tr.max_steps) cfg.max_steps = *tr.max_steps;
      if (tr.disc_steps) cfg.disc_steps = *tr.disc_steps;
      if (tr.checkpoint_every) cfg.checkpoint_every = *tr.checkpoint_every;
      if (tr.lambda_l1) cfg.weights.l1 = *tr.lambda_l1;
      if (tr.lambda_ssim) cfg.weights.ssim = *tr.lambda_ssim;
      if (tr.lambda_adv) cfg.weights.adv = *tr.lambda_adv;
      if (tr.residual) cfg.model.residual = *tr.residual;
      cfg.validate();

      const auto m = read_manifest(tr.dataset);
      TrainOptions opt;
      opt.out_dir = tr.out;
      opt.log = &log;
      if (!tr.warm_start.empty()) {
        auto ck = load_checkpoint(tr.warm_start);
        if (ck.config.serialize() != cfg.model.serialize()) {
          throw DataError(tr.warm_start + ": checkpoint model (" + ck.config.serialize() +
                          ") differs from the training model (" + cfg.model.serialize() + ")");
        }
        opt.warm_start = std::move(ck.params);
      }
      auto resolved = cfg.to_json();
      resolved["dataset"] = tr.dataset;
      resolved["out"] = tr.out;
      resolved["warm_start"] = tr.warm_start;
      log_config(log, "train", resolved);
      fs::create_directories(tr.out);
      detail::write_atomically(fs::path(tr.out) / "config.json", resolved.dump(2) + "\n");
      const auto result = train(m, cfg, opt);
      log << "trained " << result.steps.size() << " steps; checkpoints in " << tr.out << std::endl;
      return kOk;
    }

    if (restore->parsed()) {
      const auto ck = load_checkpoint(re.ckpt);
      const auto files = collect_images(re.in);
      nlohmann::ordered_json cfg{{"ckpt", re.ckpt}, {"in", re.in}, {"out", re.out}, {"batch", re.batch},
                                 {"threads", worker_count(re.threads)}, {"files", files.size()},
                                 {"model", ck.config.serialize()}};
      log_config(log, "restore", cfg);
      // Chunks of `batch` files are independent; each worker restores whole chunks.
      const std::size_t chunks = (files.size() + re.batch - 1) / re.batch;
      parallel_for(
          chunks,
          [&](std::size_t c) {
            std::vector<Image> images;
            for (std::size_t i = c * re.batch; i < std::min(files.size(), (c + 1) * re.batch); ++i) {
              auto img = load_image(files[i].source);
              if (img.height != ck.config.image_side || img.width != ck.config.image_side) {
                throw DataError(files[i].source.string() + ": image is " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + " but the checkpoint expects " +
                                std::to_string(ck.config.image_side) + "x" + std::to_string(ck.config.image_side));
              }
              images.push_back(std::move(img));
            }
            const auto restored = restore_images(ck.config, ck.params, std::span<const Image>(images), re.batch);
            for (std::size_t k = 0; k < restored.size(); ++k)
              save_image(restored[k], fs::path(re.out) / files[c * re.batch + k].relative);
          },
          re.threads);
      log << "restored " << files.size() << " image(s) into " << re.out << std::endl;
      return kOk;
    }

    if (eval->parsed()) {
      const auto split = parse_split(ev.split);
      const auto ck = load_checkpoint(ev.ckpt);
      const auto m = read_manifest(ev.dataset);
      fs::path table_path = fs::path(ev.report).replace_extension(".txt");
      if (table_path == fs::path(ev.report)) table_path += ".table.txt";
      nlohmann::ordered_json cfg{{"ckpt", ev.ckpt}, {"dataset", ev.dataset}, {"split", split_name(split)},
                                 {"report", ev.report}, {"table", table_path.string()}, {"batch", ev.batch},
                                 {"model", ck.config.serialize()}};
      log_config(log, "eval", cfg);
      const auto report = evaluate(ck.config, ck.params, m, split, ev.batch);
      if (fs::path(ev.report).has_parent_path()) fs::create_directories(fs::path(ev.report).parent_path());
      detail::write_atomically(ev.report, report.to_jsonl());
      detail::write_atomically(table_path, report.to_table());
      out << report.to_table();
      return kOk;
    }

    if (gradcheck->parsed()) {
      log_config(log, "gradcheck",
                 {{"op_tolerance", kOpGradTolerance}, {"model_tolerance", kModelGradTolerance}, {"precision", "double"}});
      const auto cases = run_gradcheck_suites(&out);
      std::size_t failed = 0;
      for (const auto& c : cases) failed += c.passed() ? 0 : 1;
      out << cases.size() - failed << "/" << cases.size() << " gradient checks passed" << std::endl;
      return failed ? kNumerical : kOk;
    }
  } catch (const UsageError& e) {
    log << "usage error: " << e.what() << std::endl;
    return kUsage;
  } catch (const DataError& e) {
    log << "data error: " << e.what() << std::endl;
    return kData;
  } catch (const NumericalError& e) {
    log << "numerical failure: " << e.what() << std::endl;
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    log << "data error: " << e.what() << std::endl;
    return kData;
  } catch (const std::invalid_argument& e) {
    log << "usage error: " << e.what() << std::endl;
    return kUsage;
  }
  return kUsage;
}

}  // namespace crt::cli
