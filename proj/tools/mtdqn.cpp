#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "mtdqn/config.hpp"
#include "mtdqn/error.hpp"
#include "mtdqn/gradcheck.hpp"
#include "mtdqn/harness.hpp"

namespace {

mtdqn::ExperimentConfig config_or_default(const std::string& path) {
  if (path.empty()) return mtdqn::default_config();
  return mtdqn::load_config(path);
}

int do_train(const std::string& config_path, std::uint64_t seed,
             const std::string& out_dir) {
  mtdqn::ExperimentConfig cfg = config_or_default(config_path);
  std::filesystem::create_directories(out_dir);
  const mtdqn::VariantSpec variant = mtdqn::variant_by_name(cfg.run.variant);
  mtdqn::ExperimentOutput out = mtdqn::run_experiment(
      cfg, variant, seed, out_dir + "/checkpoint.bin");
  mtdqn::emit_results(std::span<const mtdqn::RunResult>(&out.result, 1), cfg,
                      out_dir);
  std::fprintf(stderr, "trained %s seed %llu in %.1fs\n",
               variant.label.c_str(),
               static_cast<unsigned long long>(seed), out.result.wall_seconds);
  std::printf("f1=%s ndcg5=%s mean_return=%s\n",
              mtdqn::format_double(out.result.metrics.f1).c_str(),
              mtdqn::format_double(out.result.metrics.ndcg5).c_str(),
              mtdqn::format_double(out.result.metrics.mean_return).c_str());
  return 0;
}

int do_eval(const std::string& checkpoint_path, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  mtdqn::EvalMetrics m = mtdqn::evaluate_checkpoint(checkpoint_path, out_dir);
  std::printf("f1=%s ndcg5=%s hit_rate=%s mean_return=%s\n",
              mtdqn::format_double(m.f1).c_str(),
              mtdqn::format_double(m.ndcg5).c_str(),
              mtdqn::format_double(m.hit_rate).c_str(),
              mtdqn::format_double(m.mean_return).c_str());
  return 0;
}

int do_table(const std::string& config_path, std::size_t seeds,
             const std::string& out_dir, bool baselines) {
  mtdqn::ExperimentConfig cfg = config_or_default(config_path);
  const auto variants =
      baselines ? mtdqn::baseline_variants() : mtdqn::ablation_variants();
  const auto results =
      mtdqn::run_variants(cfg, variants, seeds, cfg.seed, out_dir);
  for (const mtdqn::RunResult& r : results) {
    std::printf("%s seed=%llu f1=%s ndcg5=%s mean_return=%s\n",
                r.variant.c_str(), static_cast<unsigned long long>(r.seed),
                mtdqn::format_double(r.metrics.f1).c_str(),
                mtdqn::format_double(r.metrics.ndcg5).c_str(),
                mtdqn::format_double(r.metrics.mean_return).c_str());
  }
  return 0;
}

int do_simulate(const std::string& config_path, const std::string& out_dir) {
  mtdqn::ExperimentConfig cfg = config_or_default(config_path);
  std::filesystem::create_directories(out_dir);
  mtdqn::simulate_events(cfg, out_dir + "/events.jsonl");
  std::printf("wrote %s/events.jsonl\n", out_dir.c_str());
  return 0;
}

int do_gradcheck() {
  const mtdqn::GradCheckReport report = mtdqn::run_gradcheck(1);
  for (const mtdqn::GradCheckCase& c : report.cases) {
    std::printf("%-28s worst_rel_error=%.3e %s\n", c.name.c_str(),
                c.worst_rel_error, c.passed ? "ok" : "FAIL");
  }
  if (!report.all_passed()) {
    std::fprintf(stderr, "gradcheck failed\n");
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MT-DQN training and evaluation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint_path;
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  std::size_t seeds = 10;

  auto* train = app.add_subcommand("train", "train one variant");
  train->add_option("--config", config_path, "config JSON path");
  train->add_option("--seed", seed, "run seed");
  train->add_option("--out", out_dir, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
  eval->add_option("--out", out_dir, "output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "ablation table rows");
  ablate->add_option("--config", config_path, "config JSON path");
  ablate->add_option("--seeds", seeds, "number of seeds");
  ablate->add_option("--out", out_dir, "output directory")->required();

  auto* baselines = app.add_subcommand("baselines", "baseline table rows");
  baselines->add_option("--config", config_path, "config JSON path");
  baselines->add_option("--seeds", seeds, "number of seeds");
  baselines->add_option("--out", out_dir, "output directory")->required();

  auto* simulate = app.add_subcommand("simulate", "event-log generation only");
  simulate->add_option("--config", config_path, "config JSON path");
  simulate->add_option("--out", out_dir, "output directory")->required();

  app.add_subcommand("gradcheck", "finite-difference gradient verification");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return do_train(config_path, seed, out_dir);
    if (eval->parsed()) return do_eval(checkpoint_path, out_dir);
    if (ablate->parsed()) return do_table(config_path, seeds, out_dir, false);
    if (baselines->parsed()) return do_table(config_path, seeds, out_dir, true);
    if (simulate->parsed()) return do_simulate(config_path, out_dir);
    return do_gradcheck();
  } catch (const mtdqn::ValidationError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  } catch (const mtdqn::ConfigError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  }
}
