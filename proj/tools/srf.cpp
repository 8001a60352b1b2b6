#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "srf/ablate.hpp"
#include "srf/config.hpp"
#include "srf/evaluate.hpp"
#include "srf/gradcheck_suite.hpp"
#include "srf/train.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string variant;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "Configuration file (key = value lines)");
    cmd->add_option("--seed", seed, "Run seed");
    cmd->add_option("--out", out, "Output directory");
    cmd->add_option("--variant", variant, "Network variant, e.g. upsampler=srm,context=crm");
  }

  srf::RunConfig resolve() const {
    srf::RunConfig c = config.empty() ? srf::RunConfig{} : srf::load_config(config);
    if (seed) c.seed = *seed;
    if (!out.empty()) c.out = out;
    if (!variant.empty()) c.variant = srf::parse_variant(variant, c.variant);
    c.validate();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic segmentation with learned alignment upsampling and context refinement"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, ablate_flags, generate_flags;

  auto* train = app.add_subcommand("train", "Train a network and write checkpoints and metrics.csv");
  train_flags.attach(train);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out scenes");
  eval_flags.attach(eval);
  std::string checkpoint, data_dir;
  bool oracle = false, dump = false;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file (default <out>/checkpoint_final.ckpt)");
  eval->add_option("--data", data_dir, "Directory of scene_*.ppm / scene_*.pgm pairs instead of generated scenes");
  eval->add_flag("--oracle", oracle, "Use the ground truth as the prediction");
  eval->add_flag("--dump-predictions", dump, "Write predicted label maps (PGM) and colorized PPMs");

  auto* gradcheck = app.add_subcommand("gradcheck", "Run the 64-bit finite-difference gradient suite");
  std::uint64_t gc_seed = 0;
  std::string corrupt;
  gradcheck->add_option("--seed", gc_seed, "Input seed");
  gradcheck->add_option("--corrupt", corrupt, "Perturb the analytic gradient of one target (fault injection)");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate all four variants over several seeds");
  ablate_flags.attach(ablate);
  std::optional<int> seeds;
  unsigned workers = 0;
  ablate->add_option("--seeds", seeds, "Number of seeds per variant");
  ablate->add_option("--workers", workers, "Parallel runs (default: hardware concurrency)");

  auto* generate = app.add_subcommand("generate", "Write generated scenes as PPM/PGM pairs");
  generate_flags.attach(generate);
  bool heldout = false;
  generate->add_flag("--heldout", heldout, "Write the held-out scenes instead of the training corpus");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto config = train_flags.resolve();
      const auto outcome = srf::cmd_train(config, config.out);
      if (!outcome.log.empty()) {
        const auto& last = outcome.log.back();
        std::printf("step %ld: ce %.6f cl %.6f total %.6f\n", last.step, last.ce, last.cl, last.total);
      }
      std::printf("checkpoint: %s\n", outcome.checkpoint.string().c_str());
    } else if (*eval) {
      const auto config = eval_flags.resolve();
      srf::EvalOptions options;
      options.checkpoint = checkpoint.empty() ? std::filesystem::path(config.out) / "checkpoint_final.ckpt"
                                              : std::filesystem::path(checkpoint);
      if (!data_dir.empty()) options.data_dir = data_dir;
      options.oracle = oracle;
      options.dump_predictions = dump;
      const auto report = srf::cmd_eval(config, options);
      std::fputs(srf::format_eval_report(report, config).c_str(), stdout);
    } else if (*gradcheck) {
      if (!corrupt.empty()) {
        bool known = false;
        for (const auto& t : srf::gradcheck_targets()) known = known || t.name == corrupt;
        if (!known) {
          std::fprintf(stderr, "error: unknown gradcheck target '%s'\n", corrupt.c_str());
          return 2;
        }
      }
      const auto rows = srf::run_gradcheck_suite(gc_seed, corrupt);
      std::fputs(srf::format_gradcheck_table(rows).c_str(), stdout);
      for (const auto& r : rows) {
        if (!r.passed) return 1;
      }
    } else if (*ablate) {
      auto config = ablate_flags.resolve();
      if (seeds) config.ablate_seeds = *seeds;
      config.validate();
      const auto report = srf::cmd_ablate(config, config.out, workers);
      std::fputs(srf::format_ablation_table(report, config).c_str(), stdout);
    } else if (*generate) {
      const auto config = generate_flags.resolve();
      const auto scenes = heldout ? srf::heldout_scenes(config) : srf::training_corpus(config);
      srf::write_dataset(config.out, scenes);
      std::printf("wrote %zu scenes to %s\n", scenes.size(), config.out.c_str());
    }
  } catch (const srf::DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const srf::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
