#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aggnn/data.hpp"
#include "aggnn/error.hpp"
#include "aggnn/model.hpp"
#include "aggnn/optim.hpp"
#include "json.hpp"

namespace aggnn {

enum class Arch { mlp, cnn };
enum class AggregationSetting { baseline, fmean_hybrid, gaussian_hybrid, threeway_hybrid };
enum class DataSource { cifar10, synthetic };

std::string_view to_string(Arch arch);
std::string_view to_string(AggregationSetting setting);
std::string_view to_string(DataSource source);
Arch parse_arch(std::string_view name);
AggregationSetting parse_aggregation(std::string_view name);
DataSource parse_data_source(std::string_view name);

struct ExperimentConfig {
  Arch arch = Arch::mlp;
  AggregationSetting aggregation = AggregationSetting::baseline;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 60;
  std::uint64_t seed = 0;

  DataSource data = DataSource::cifar10;
  std::string data_dir = "data/cifar10";
  std::size_t val_size = 5000;
  // Synthetic blobs: `synthetic_samples` feed the train/val split and a
  // further `synthetic_test` samples form the test set.
  std::size_t synthetic_samples = 2000;
  std::size_t synthetic_test = 1000;
  std::size_t synthetic_classes = 10;
  double synthetic_blob_sigma = 0.1;

  // 0 selects the architecture default (128 for the MLP, 256 for the CNN).
  std::size_t projection_width = 0;
  std::size_t hidden_width = 0;
  std::vector<std::size_t> conv_channels{64, 128};

  double lr_standard = 1e-3;
  double lr_novel = 1e-2;
  double clip_norm = 1.0;
  AdamConfig adam{};
  PlateauConfig scheduler{};
  std::size_t early_stop_patience = 10;
  double early_stop_min_delta = 0.0;

  double noise_sigma = 0.15;
  std::uint64_t noise_seed = 1234;

  std::size_t resolved_projection() const;
  std::size_t resolved_hidden() const;
  // Throws InvalidValueError on zero widths, batch size or epochs.
  void validate() const;
};

// Unknown keys are rejected so typos in config files surface immediately.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& file);

// MLP:  flatten, linear in->proj, relu, agg proj->hidden, relu, linear hidden->classes
// CNN:  per entry c of conv_channels [conv, relu, conv, relu, pool] at width c,
//       then flatten, linear ->proj, relu, agg proj->hidden, relu, linear ->classes
// The baseline puts a LinearLayer in the aggregation slot. Layers are
// initialised in order from an mt19937_64 seeded with config.seed.
Model build_model(const ExperimentConfig& config, const Shape& input_shape, std::size_t classes);

struct ExperimentData {
  Dataset train;
  Dataset val;
  Dataset test;
  std::size_t classes = kCifarClasses;
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

struct Metrics {
  double loss;
  double accuracy;  // fraction in [0, 1]
};

// Inference over `data` in fixed chunks. With a noise spec, chunk c gets
// its own noise stream derived from (spec.seed, c), so the result does not
// depend on thread count.
Metrics measure(const Model& model, const Dataset& data, const std::optional<NoiseSpec>& noise = std::nullopt);
double evaluate(const Model& model, const Dataset& data, const std::optional<NoiseSpec>& noise = std::nullopt);

// noisy / clean. Throws InvalidValueError when clean_acc is not positive.
double robustness_score(double clean_acc, double noisy_acc);

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
};

Stats describe_values(std::span<const double> values);

// Per aggregation layer. Keys: "p", "sigma" (= exp(log_sigma)), "alpha"
// (novel-path mass: sigmoid(alpha_raw) for two-way blends, F-Mean plus
// Gaussian softmax mass for the three-way blend) and, for the three-way
// blend, "mix_linear", "mix_fmean", "mix_gaussian".
struct LayerParamSummary {
  std::size_t layer = 0;
  std::string kind;
  std::map<std::string, Stats> stats;
};

std::vector<LayerParamSummary> param_summary(const Model& model);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr_standard = 0.0;
  double lr_novel = 0.0;
  bool improved = false;
  bool lr_reduced = false;
  std::vector<LayerParamSummary> params;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<std::string> layers;
  std::size_t parameter_count = 0;
  std::size_t novel_parameter_count = 0;
  double initial_train_loss = 0.0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  double clean_acc = 0.0;
  double noisy_acc = 0.0;
  double rho = 0.0;
  std::vector<LayerParamSummary> final_params;
  double wall_clock_seconds = 0.0;
};

nlohmann::json to_json(const RunReport& report);
// epoch,train_loss,val_loss,val_acc,lr_standard,lr_novel,mean_p,mean_sigma,mean_alpha
std::string metrics_csv(const RunReport& report);

/// Non-finite loss or gradient during training.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, std::uint64_t seed, std::size_t epoch, std::size_t batch)
      : Error(what), seed_(seed), epoch_(epoch), batch_(batch) {}

  std::uint64_t seed() const { return seed_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }
  nlohmann::json diagnostic() const;

 private:
  std::uint64_t seed_;
  std::size_t epoch_;
  std::size_t batch_;
};

/// One optimisation step at a time: forward, loss, backward, clip, Adam.
class Trainer {
 public:
  Trainer(Model& model, const ExperimentConfig& config);

  // Returns the batch loss. Throws InvalidValueError on a non-finite loss
  // or gradient, before any parameter is modified.
  double step(const Batch& batch);

  Adam& optimizer() { return adam_; }
  double last_grad_norm() const { return grad_norm_; }

 private:
  Model* model_;
  double clip_norm_;
  Adam adam_;
  double grad_norm_ = 0.0;
};

struct TrainResult {
  RunReport report;
  Model model;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Full protocol: per-epoch shuffled batches, validation, plateau scheduling
// and early stopping on validation loss, restore of the best epoch, then
// clean and noisy test accuracy. Throws TrainingAborted on divergence.
TrainResult train(const ExperimentConfig& config, const ExperimentData& data, const EpochCallback& on_epoch = {});
TrainResult train(const ExperimentConfig& config, const EpochCallback& on_epoch = {});

// Writes report.json, metrics.csv and model.ckpt under `dir`.
void write_run(const std::filesystem::path& dir, const TrainResult& result);

// Rebuilds the model described by a checkpoint's embedded config.
std::pair<ExperimentConfig, Model> load_run_checkpoint(const std::filesystem::path& file);

struct SweepMatrix {
  ExperimentConfig base;
  std::vector<Arch> archs{Arch::mlp, Arch::cnn};
  std::vector<AggregationSetting> aggregations{AggregationSetting::baseline, AggregationSetting::fmean_hybrid,
                                               AggregationSetting::gaussian_hybrid,
                                               AggregationSetting::threeway_hybrid};
  std::vector<std::uint64_t> seeds{0};
};

SweepMatrix sweep_from_json(const nlohmann::json& j);
SweepMatrix load_sweep(const std::filesystem::path& file);

struct SweepRow {
  Arch arch;
  AggregationSetting aggregation;
  std::uint64_t seed;
  bool ok = false;
  std::string error;
  double clean_acc = 0.0;
  double noisy_acc = 0.0;
  double rho = 0.0;
  std::size_t epochs = 0;
  // Means over the aggregation layer's units; absent for the baseline.
  std::optional<double> mean_p, mean_sigma, mean_alpha;
};

// Trains every (arch, aggregation, seed) combination; a failed run is
// recorded and the sweep moves on. Writes runs/<name>/, results.csv and
// tables.md under `out`.
std::vector<SweepRow> sweep(const SweepMatrix& matrix, const std::filesystem::path& out,
                            const std::function<void(const SweepRow&)>& on_row = {});

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_tables(const std::vector<SweepRow>& rows);

}  // namespace aggnn
