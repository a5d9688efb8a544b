// mgtok: dataset generation, training, evaluation and reports for the
// multi-granularity token experiments.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "mgtok/checkpoint.hpp"
#include "mgtok/config.hpp"
#include "mgtok/dataset.hpp"
#include "mgtok/experiment.hpp"
#include "mgtok/report.hpp"

namespace fs = std::filesystem;
using namespace mgtok;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, Common& c, bool needs_seed) {
  cmd->add_option("-c,--config", c.config, "JSON config file (defaults apply to missing keys)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config key, e.g. --set stage2.epochs=4");
  auto* seed = cmd->add_option("--seed", c.seed, "seed for every stochastic step");
  if (needs_seed) seed->required();
  cmd->add_option("-j,--workers", c.workers, "worker threads");
}

ExperimentConfig resolve(const Common& c) {
  std::vector<std::string> overrides = c.overrides;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  if (c.workers) overrides.push_back("workers=" + std::to_string(*c.workers));
  if (c.config.empty()) return parse_config(R"({"schema_version": 1})", overrides);
  return load_config(c.config, overrides);
}

VlmModel load_model(const fs::path& dir, const std::string& name) { return read_checkpoint(dir / name).model; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-granularity visual token experiments"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only print warnings and errors");

  Common config_c, gen_c, train_c, eval_c, ablate_c, sweep_c;
  std::string gen_out, train_data, train_out, eval_data, eval_ckpt, eval_out, ablate_data, ablate_ckpt, ablate_out;
  std::string sweep_out, sweep_data, report_in, report_format = "table";

  auto* show = app.add_subcommand("config", "print the resolved config as JSON");
  add_common(show, config_c, false);

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic scene/QA dataset");
  add_common(gen, gen_c, true);
  gen->add_option("-o,--out", gen_out, "dataset directory")->required();

  auto* train = app.add_subcommand("train", "build tokens and train the main, patch-only and mask-family models");
  add_common(train, train_c, true);
  train->add_option("-d,--data", train_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("-o,--out", train_out, "checkpoint directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate every reduction plan and the patch-only baselines");
  add_common(eval, eval_c, true);
  eval->add_option("-d,--data", eval_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("-m,--checkpoints", eval_ckpt, "directory with main.mgck [and patch_only.mgck]")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("-o,--out", eval_out, "results directory")->required();

  auto* ablate = app.add_subcommand("ablate", "token-composition and mask-family ablations");
  add_common(ablate, ablate_c, true);
  ablate->add_option("-d,--data", ablate_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("-m,--checkpoints", ablate_ckpt, "directory with main.mgck [and mask_<family>.mgck]")
      ->required()
      ->check(CLI::ExistingDirectory);
  ablate->add_option("-o,--out", ablate_out, "results directory")->required();

  auto* sweep = app.add_subcommand("sweep", "full run: data, tokens, training, every evaluation");
  add_common(sweep, sweep_c, true);
  sweep->add_option("-o,--out", sweep_out, "output directory")->required();
  sweep->add_option("-d,--data", sweep_data, "reuse an existing dataset directory")->check(CLI::ExistingDirectory);

  auto* report = app.add_subcommand("report", "print a results.json as table, csv or json");
  report->add_option("results", report_in, "results.json")->required()->check(CLI::ExistingFile);
  report->add_option("-f,--format", report_format, "table | csv | json")
      ->check(CLI::IsMember({"table", "csv", "json"}));

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*show) {
      std::cout << dump_config(resolve(config_c)) << '\n';
    } else if (*gen) {
      const ExperimentConfig cfg = resolve(gen_c);
      const Dataset data =
          gen_dataset(cfg.scene, cfg.train_scenes + cfg.test_scenes, cfg.qa_per_scene, cfg.seed, cfg.workers);
      write_dataset(data, gen_out);
      std::printf("wrote %zu scenes, %zu questions, %zu captions to %s\n", data.scenes.size(), data.qa.size(),
                  data.captions.size(), gen_out.c_str());
    } else if (*train) {
      const ExperimentConfig cfg = resolve(train_c);
      const Dataset data = read_dataset(train_data);
      TokenFactory factory(cfg);
      const auto scenes = factory.prepare_all(train_split(data, cfg), cfg.mask_ablation_per_family);
      const InversionSummary inv = summarize_inversion(scenes);
      spdlog::info("inversion mass {:.3f} -> {:.3f}, median ground-truth map IoU {:.3f}", inv.mean_initial_mass,
                   inv.mean_final_mass, inv.median_gt_map_iou);
      fs::create_directories(train_out);
      EventLog log(fs::path(train_out) / "log.jsonl");
      const TrainedModels models = train_models(cfg, data, scenes, factory.encoder().weights_checksum(), log);
      const std::string note = dump_config(cfg);
      write_checkpoint({models.main, note}, fs::path(train_out) / "main.mgck");
      if (models.patch_only) write_checkpoint({*models.patch_only, note}, fs::path(train_out) / "patch_only.mgck");
      for (const FamilyModel& f : models.families)
        write_checkpoint({f.model, note}, fs::path(train_out) / ("mask_" + f.family + ".mgck"));
      for (const StageSummary& s : models.stages) {
        std::printf("%s %s: loss %.4f -> %.4f (%zu steps, %.1f s)\n", s.model.c_str(), s.stage.c_str(),
                    s.initial_loss, s.final_loss, s.steps, s.wall_seconds);
      }
    } else if (*eval || *ablate) {
      const bool is_eval = static_cast<bool>(*eval);
      const ExperimentConfig cfg = resolve(is_eval ? eval_c : ablate_c);
      const Dataset data = read_dataset(is_eval ? eval_data : ablate_data);
      const fs::path ckpt = is_eval ? eval_ckpt : ablate_ckpt;
      const fs::path out = is_eval ? eval_out : ablate_out;
      TokenFactory factory(cfg);
      const auto test = factory.prepare_all(test_split(data, cfg), !is_eval);
      const VlmModel main = load_model(ckpt, "main.mgck");
      ExperimentResults res;
      res.config = dump_config(cfg);
      res.reference_tokens = cfg.effective_reference();
      res.full_tokens = test.empty() ? 0 : test.front().full.tokens.size();
      if (is_eval) {
        std::optional<VlmModel> patch;
        if (cfg.patch_only_baseline && fs::exists(ckpt / "patch_only.mgck")) patch = load_model(ckpt, "patch_only.mgck");
        res.rows = evaluate_reduction(cfg, data, test, main, patch ? &*patch : nullptr);
      } else {
        std::vector<FamilyModel> families;
        for (const char* family : kMaskFamilies) {
          const std::string file = std::string("mask_") + family + ".mgck";
          if (cfg.mask_ablation_per_family && fs::exists(ckpt / file)) families.push_back({family, load_model(ckpt, file)});
        }
        res.rows = evaluate_ablations(cfg, data, test, main, families);
      }
      write_results(res, out);
      std::cout << to_table(res);
    } else if (*sweep) {
      const ExperimentConfig cfg = resolve(sweep_c);
      std::optional<Dataset> data;
      if (!sweep_data.empty()) data = read_dataset(sweep_data);
      const ExperimentResults res = run_experiment(cfg, sweep_out, data ? &*data : nullptr);
      std::cout << to_table(res);
    } else if (*report) {
      const ExperimentResults res = read_results(report_in);
      if (report_format == "csv") {
        std::cout << to_csv(res);
      } else if (report_format == "json") {
        std::cout << to_json(res);
      } else {
        std::cout << to_table(res);
      }
      if (res.status != "complete") return 3;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
