// Command-line front end: train, eval, sweep, gradcheck, fetch-data.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "aggnn/experiment.hpp"
#include "aggnn/fetch.hpp"
#include "aggnn/gradcheck.hpp"
#include "json.hpp"

namespace {

using namespace aggnn;

void print_epoch(const EpochRecord& e) {
  std::printf("epoch %3zu  train %.4f  val %.4f  acc %.4f  lr %.2e/%.2e%s%s\n", e.epoch, e.train_loss, e.val_loss,
              e.val_acc, e.lr_standard, e.lr_novel, e.improved ? "  *" : "", e.lr_reduced ? "  lr-" : "");
  std::fflush(stdout);
}

int cmd_train(const std::string& config_file, const std::string& out_dir, const std::string& data_dir) {
  ExperimentConfig config = load_config(config_file);
  if (!data_dir.empty()) config.data_dir = data_dir;
  std::printf("train %s/%s seed %llu\n", std::string(to_string(config.arch)).c_str(),
              std::string(to_string(config.aggregation)).c_str(), static_cast<unsigned long long>(config.seed));
  try {
    const TrainResult result = train(config, print_epoch);
    write_run(out_dir, result);
    const auto& r = result.report;
    std::printf("best epoch %zu  clean %.4f  noisy %.4f  rho %.4f  (%.1fs)\n", r.best_epoch, r.clean_acc,
                r.noisy_acc, r.rho, r.wall_clock_seconds);
    return 0;
  } catch (const TrainingAborted& e) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(std::filesystem::path(out_dir) / "abort.json") << e.diagnostic().dump(2) << '\n';
    std::fprintf(stderr, "aborted: %s (seed %llu, epoch %zu, batch %zu)\n", e.what(),
                 static_cast<unsigned long long>(e.seed()), e.epoch(), e.batch());
    return 2;
  }
}

int cmd_eval(const std::string& checkpoint, double sigma, std::optional<std::uint64_t> noise_seed,
             const std::string& data_dir) {
  auto [config, model] = load_run_checkpoint(checkpoint);
  if (!data_dir.empty()) config.data_dir = data_dir;
  const ExperimentData data = load_experiment_data(config);
  const double clean = evaluate(model, data.test);
  const double noisy = evaluate(model, data.test, NoiseSpec{sigma, noise_seed.value_or(config.noise_seed)});
  nlohmann::json out{{"checkpoint", checkpoint},
                     {"test_samples", data.test.size()},
                     {"noise_sigma", sigma},
                     {"clean_acc", clean},
                     {"noisy_acc", noisy},
                     {"rho", clean > 0.0 ? nlohmann::json(robustness_score(clean, noisy)) : nlohmann::json()}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_sweep(const std::string& matrix_file, const std::string& out_dir) {
  const SweepMatrix matrix = load_sweep(matrix_file);
  const auto rows = sweep(matrix, out_dir, [](const SweepRow& r) {
    if (r.ok)
      std::printf("%s %-16s seed %llu  clean %.4f  noisy %.4f  rho %.4f\n", std::string(to_string(r.arch)).c_str(),
                  std::string(to_string(r.aggregation)).c_str(), static_cast<unsigned long long>(r.seed),
                  r.clean_acc, r.noisy_acc, r.rho);
    else
      std::printf("%s %-16s seed %llu  FAILED: %s\n", std::string(to_string(r.arch)).c_str(),
                  std::string(to_string(r.aggregation)).c_str(), static_cast<unsigned long long>(r.seed),
                  r.error.c_str());
    std::fflush(stdout);
  });
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.ok ? 0 : 1;
  std::printf("%zu runs, %zu failed; tables in %s\n", rows.size(), failed,
              (std::filesystem::path(out_dir) / "tables.md").c_str());
  return failed ? 2 : 0;
}

int cmd_gradcheck(const std::string& module, std::size_t cases) {
  GradcheckOptions options;
  options.cases = cases;
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  for (const auto& r : run_gradcheck(module, options)) {
    ok &= r.passed();
    std::printf("%-4s %-24s cases %4zu  failures %3zu  worst %.2e (%s)  tol %.0e\n", r.passed() ? "ok" : "FAIL",
                r.op.c_str(), r.cases, r.failures, r.worst, r.worst_tensor.c_str(), r.tolerance);
  }
  std::printf("%.1fs\n", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return ok ? 0 : 1;
}

int cmd_fetch(const std::string& dir, const std::string& source_file, const std::string& url) {
  ArchiveSource source = read_archive_source(source_file);
  if (!url.empty()) source.url = url;
  std::printf("fetching %s\n", source.url.c_str());
  const FetchResult r = fetch_archive(source, dir);
  std::printf("md5    %s%s\nsha256 %s%s\ndata   %s\n", r.md5.c_str(), source.md5.empty() ? " (unchecked)" : " ok",
              r.sha256.c_str(), source.sha256.empty() ? " (unchecked)" : " ok", r.data_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learnable aggregation neurons: training and evaluation"};
  app.require_subcommand(1);

  std::string config_file, out_dir, data_dir;
  auto* train_cmd = app.add_subcommand("train", "Train one configuration");
  train_cmd->add_option("--config", config_file, "JSON experiment config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--data-dir", data_dir, "Override the config's data_dir");

  std::string checkpoint;
  double noise_sigma = 0.15;
  std::optional<std::uint64_t> noise_seed;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on clean and noisy test data");
  eval_cmd->add_option("--checkpoint", checkpoint, "model.ckpt from a train run")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--noise-sigma", noise_sigma, "Gaussian noise std on [0,1] pixels")->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--noise-seed", noise_seed, "Noise seed (default: the run's)");
  eval_cmd->add_option("--data-dir", data_dir, "Override the config's data_dir");

  std::string matrix_file;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train every arch x aggregation x seed combination");
  sweep_cmd->add_option("--matrix", matrix_file, "JSON sweep matrix")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--out", out_dir, "Output directory")->required();

  std::string module = "all";
  std::size_t cases = 100;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  grad_cmd->add_option("--module", module, "Which ops to check")
      ->check(CLI::IsMember({"all", "layers", "fmean", "gaussian", "hybrid", "model"}));
  grad_cmd->add_option("--cases", cases, "Random cases per op")->check(CLI::PositiveNumber);

  std::string fetch_dir, source_file = "config/cifar10.json", url;
  auto* fetch_cmd = app.add_subcommand("fetch-data", "Download, verify and unpack CIFAR-10");
  fetch_cmd->add_option("--dir", fetch_dir, "Destination directory")->required();
  fetch_cmd->add_option("--source", source_file, "JSON with url, md5, sha256")->check(CLI::ExistingFile);
  fetch_cmd->add_option("--url", url, "Override the archive URL");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(config_file, out_dir, data_dir);
    if (*eval_cmd) return cmd_eval(checkpoint, noise_sigma, noise_seed, data_dir);
    if (*sweep_cmd) return cmd_sweep(matrix_file, out_dir);
    if (*grad_cmd) return cmd_gradcheck(module, cases);
    if (*fetch_cmd) return cmd_fetch(fetch_dir, source_file, url);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
