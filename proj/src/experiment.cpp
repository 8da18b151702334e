#include "aggnn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "aggnn/aggregation.hpp"
#include "aggnn/layers.hpp"
#include "aggnn/scalar.hpp"

namespace aggnn {

using nlohmann::json;

// ------------------------------------------------------------------- names

std::string_view to_string(Arch arch) { return arch == Arch::mlp ? "mlp" : "cnn"; }

std::string_view to_string(AggregationSetting setting) {
  switch (setting) {
    case AggregationSetting::baseline: return "baseline";
    case AggregationSetting::fmean_hybrid: return "fmean-hybrid";
    case AggregationSetting::gaussian_hybrid: return "gaussian-hybrid";
    case AggregationSetting::threeway_hybrid: return "threeway-hybrid";
  }
  return "?";
}

std::string_view to_string(DataSource source) { return source == DataSource::cifar10 ? "cifar10" : "synthetic"; }

Arch parse_arch(std::string_view name) {
  if (name == "mlp") return Arch::mlp;
  if (name == "cnn") return Arch::cnn;
  throw InvalidValueError("unknown arch '" + std::string(name) + "' (expected mlp or cnn)");
}

AggregationSetting parse_aggregation(std::string_view name) {
  for (auto s : {AggregationSetting::baseline, AggregationSetting::fmean_hybrid, AggregationSetting::gaussian_hybrid,
                 AggregationSetting::threeway_hybrid})
    if (name == to_string(s)) return s;
  throw InvalidValueError("unknown aggregation '" + std::string(name) +
                          "' (expected baseline, fmean-hybrid, gaussian-hybrid or threeway-hybrid)");
}

DataSource parse_data_source(std::string_view name) {
  if (name == "cifar10") return DataSource::cifar10;
  if (name == "synthetic") return DataSource::synthetic;
  throw InvalidValueError("unknown data source '" + std::string(name) + "' (expected cifar10 or synthetic)");
}

// ------------------------------------------------------------------ config

std::size_t ExperimentConfig::resolved_projection() const {
  return projection_width ? projection_width : (arch == Arch::mlp ? 128 : 256);
}

std::size_t ExperimentConfig::resolved_hidden() const {
  return hidden_width ? hidden_width : resolved_projection();
}

void ExperimentConfig::validate() const {
  if (batch_size == 0) throw InvalidValueError("batch_size must be positive");
  if (max_epochs == 0) throw InvalidValueError("max_epochs must be positive");
  if (arch == Arch::cnn && conv_channels.empty()) throw InvalidValueError("cnn needs at least one conv stage");
  for (auto c : conv_channels)
    if (c == 0) throw InvalidValueError("conv_channels entries must be positive");
  if (!(clip_norm > 0.0)) throw InvalidValueError("clip_norm must be positive");
  if (!(noise_sigma >= 0.0)) throw InvalidValueError("noise_sigma must be >= 0");
  if (data == DataSource::synthetic && (synthetic_samples == 0 || synthetic_test == 0 || synthetic_classes < 2))
    throw InvalidValueError("synthetic data needs samples, test samples and at least two classes");
}

json to_json(const ExperimentConfig& c) {
  return json{{"arch", to_string(c.arch)},
              {"aggregation", to_string(c.aggregation)},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"seed", c.seed},
              {"data", to_string(c.data)},
              {"data_dir", c.data_dir},
              {"val_size", c.val_size},
              {"synthetic_samples", c.synthetic_samples},
              {"synthetic_test", c.synthetic_test},
              {"synthetic_classes", c.synthetic_classes},
              {"synthetic_blob_sigma", c.synthetic_blob_sigma},
              {"projection_width", c.projection_width},
              {"hidden_width", c.hidden_width},
              {"conv_channels", c.conv_channels},
              {"lr_standard", c.lr_standard},
              {"lr_novel", c.lr_novel},
              {"clip_norm", c.clip_norm},
              {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
              {"scheduler",
               {{"factor", c.scheduler.factor},
                {"patience", c.scheduler.patience},
                {"threshold", c.scheduler.threshold},
                {"min_lr", c.scheduler.min_lr}}},
              {"early_stop_patience", c.early_stop_patience},
              {"early_stop_min_delta", c.early_stop_min_delta},
              {"noise_sigma", c.noise_sigma},
              {"noise_seed", c.noise_seed}};
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw InvalidValueError("config must be a JSON object");
  ExperimentConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "arch") c.arch = parse_arch(v.get<std::string>());
      else if (key == "aggregation") c.aggregation = parse_aggregation(v.get<std::string>());
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "data") c.data = parse_data_source(v.get<std::string>());
      else if (key == "data_dir") c.data_dir = v.get<std::string>();
      else if (key == "val_size") c.val_size = v.get<std::size_t>();
      else if (key == "synthetic_samples") c.synthetic_samples = v.get<std::size_t>();
      else if (key == "synthetic_test") c.synthetic_test = v.get<std::size_t>();
      else if (key == "synthetic_classes") c.synthetic_classes = v.get<std::size_t>();
      else if (key == "synthetic_blob_sigma") c.synthetic_blob_sigma = v.get<double>();
      else if (key == "projection_width") c.projection_width = v.get<std::size_t>();
      else if (key == "hidden_width") c.hidden_width = v.get<std::size_t>();
      else if (key == "conv_channels") c.conv_channels = v.get<std::vector<std::size_t>>();
      else if (key == "lr_standard") c.lr_standard = v.get<double>();
      else if (key == "lr_novel") c.lr_novel = v.get<double>();
      else if (key == "clip_norm") c.clip_norm = v.get<double>();
      else if (key == "adam") {
        c.adam.beta1 = v.value("beta1", c.adam.beta1);
        c.adam.beta2 = v.value("beta2", c.adam.beta2);
        c.adam.epsilon = v.value("epsilon", c.adam.epsilon);
      } else if (key == "scheduler") {
        c.scheduler.factor = v.value("factor", c.scheduler.factor);
        c.scheduler.patience = v.value("patience", c.scheduler.patience);
        c.scheduler.threshold = v.value("threshold", c.scheduler.threshold);
        c.scheduler.min_lr = v.value("min_lr", c.scheduler.min_lr);
      } else if (key == "early_stop_patience") c.early_stop_patience = v.get<std::size_t>();
      else if (key == "early_stop_min_delta") c.early_stop_min_delta = v.get<double>();
      else if (key == "noise_sigma") c.noise_sigma = v.get<double>();
      else if (key == "noise_seed") c.noise_seed = v.get<std::uint64_t>();
      else throw InvalidValueError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw InvalidValueError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open config " + file.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw IoError(file.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------------- model

namespace {

template <typename L, typename... Args>
L& push(Model& model, Args&&... args) {
  return static_cast<L&>(model.add(std::make_unique<L>(std::forward<Args>(args)...)));
}

}  // namespace

Model build_model(const ExperimentConfig& config, const Shape& input_shape, std::size_t classes) {
  config.validate();
  if (classes < 2) throw InvalidValueError("need at least two classes");
  Model model(input_shape, classes);
  std::mt19937_64 rng(config.seed);
  const std::size_t proj = config.resolved_projection();
  const std::size_t hidden = config.resolved_hidden();

  std::size_t features = element_count(input_shape);
  if (config.arch == Arch::cnn) {
    if (input_shape.size() != 3) throw ShapeError("cnn expects C x H x W inputs, got " + to_string(input_shape));
    std::size_t ch = input_shape[0], h = input_shape[1], w = input_shape[2];
    for (std::size_t width : config.conv_channels) {
      if (h % 2 || w % 2) throw ShapeError("cnn stage input " + std::to_string(h) + "x" + std::to_string(w) +
                                           " cannot be pooled");
      push<Conv2dLayer>(model, ch, width).initialize(rng);
      push<ReluLayer>(model);
      push<Conv2dLayer>(model, width, width).initialize(rng);
      push<ReluLayer>(model);
      push<MaxPool2x2Layer>(model);
      ch = width;
      h /= 2;
      w /= 2;
    }
    features = ch * h * w;
  }
  push<FlattenLayer>(model);
  push<LinearLayer>(model, features, proj).initialize(rng);
  push<ReluLayer>(model);
  switch (config.aggregation) {
    case AggregationSetting::baseline:
      push<LinearLayer>(model, proj, hidden).initialize(rng);
      break;
    case AggregationSetting::fmean_hybrid:
      push<HybridLayer>(model, AggregationKind::hybrid_fmean, proj, hidden).initialize(rng);
      break;
    case AggregationSetting::gaussian_hybrid:
      push<HybridLayer>(model, AggregationKind::hybrid_gaussian, proj, hidden).initialize(rng);
      break;
    case AggregationSetting::threeway_hybrid:
      push<HybridLayer>(model, AggregationKind::hybrid_threeway, proj, hidden).initialize(rng);
      break;
  }
  push<ReluLayer>(model);
  push<LinearLayer>(model, hidden, classes).initialize(rng);
  return model;
}

// -------------------------------------------------------------------- data

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  config.validate();
  ExperimentData out;
  Dataset pool;
  if (config.data == DataSource::cifar10) {
    CifarData cifar = load_cifar10(config.data_dir);
    pool = std::move(cifar.train);
    out.test = std::move(cifar.test);
    out.classes = kCifarClasses;
  } else {
    // One draw so train and test share the class means.
    Dataset all = make_synthetic(config.synthetic_samples + config.synthetic_test, config.synthetic_classes,
                                 config.seed, config.synthetic_blob_sigma);
    std::vector<std::size_t> idx(all.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::span<const std::size_t> all_idx(idx);
    out.test = all.subset(all_idx.first(config.synthetic_test));
    pool = all.subset(all_idx.subspan(config.synthetic_test));
    out.classes = config.synthetic_classes;
  }
  out.test.split = Split::test;
  auto [train, val] = train_val_split(pool, config.val_size, config.seed);
  out.train = std::move(train);
  out.val = std::move(val);
  return out;
}

// -------------------------------------------------------------- evaluation

namespace {

constexpr std::size_t kEvalChunk = 500;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Metrics measure(const Model& model, const Dataset& data, const std::optional<NoiseSpec>& noise) {
  if (data.size() == 0) throw InvalidValueError("cannot evaluate an empty dataset");
  Batches chunks(data, kEvalChunk, std::nullopt);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t c = 0; c < chunks.count(); ++c) {
    Batch batch = chunks[c];
    if (noise) batch.x = add_noise(batch.x, NoiseSpec{noise->sigma, splitmix64(noise->seed ^ splitmix64(c))});
    const Tensor logits = model.infer(batch.x);
    loss_sum += softmax_xent(logits, batch.labels).loss * static_cast<double>(batch.labels.size());
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      const auto row = logits.row(i);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == static_cast<std::size_t>(batch.labels[i])) ++correct;
    }
  }
  const auto n = static_cast<double>(data.size());
  return Metrics{loss_sum / n, static_cast<double>(correct) / n};
}

double evaluate(const Model& model, const Dataset& data, const std::optional<NoiseSpec>& noise) {
  return measure(model, data, noise).accuracy;
}

double robustness_score(double clean_acc, double noisy_acc) {
  if (!(clean_acc > 0.0)) throw InvalidValueError("robustness score is undefined for clean accuracy <= 0");
  return noisy_acc / clean_acc;
}

// ------------------------------------------------------------ param summary

Stats describe_values(std::span<const double> values) {
  Stats s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

std::vector<LayerParamSummary> param_summary(const Model& model) {
  std::vector<LayerParamSummary> out;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto* agg = dynamic_cast<const AggregationLayer*>(model.layers()[i].get());
    if (!agg) continue;
    LayerParamSummary s{i, std::string(agg->kind()), {}};
    if (agg->has_fmean()) s.stats["p"] = describe_values(agg->parameter("p").value.data());
    if (agg->has_gaussian()) {
      std::vector<double> sigma;
      for (double v : agg->parameter("log_sigma").value.data()) sigma.push_back(std::exp(v));
      s.stats["sigma"] = describe_values(sigma);
    }
    if (agg->is_hybrid()) {
      const Tensor m = agg->mix();
      const std::size_t units = agg->out_units();
      std::vector<double> novel(units), cols[3];
      for (std::size_t j = 0; j < units; ++j) {
        novel[j] = m.at(j, 1) + m.at(j, 2);
        for (std::size_t c = 0; c < 3; ++c) cols[c].push_back(m.at(j, c));
      }
      s.stats["alpha"] = describe_values(novel);
      if (agg->aggregation_kind() == AggregationKind::hybrid_threeway) {
        s.stats["mix_linear"] = describe_values(cols[0]);
        s.stats["mix_fmean"] = describe_values(cols[1]);
        s.stats["mix_gaussian"] = describe_values(cols[2]);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ----------------------------------------------------------------- reports

namespace {

json to_json(const Stats& s) { return json{{"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}}; }

json to_json(const std::vector<LayerParamSummary>& summary) {
  auto arr = json::array();
  for (const auto& s : summary) {
    json stats = json::object();
    for (const auto& [k, v] : s.stats) stats[k] = to_json(v);
    arr.push_back({{"layer", s.layer}, {"kind", s.kind}, {"stats", stats}});
  }
  return arr;
}

std::optional<double> summary_mean(const std::vector<LayerParamSummary>& summary, const std::string& key) {
  for (const auto& s : summary)
    if (auto it = s.stats.find(key); it != s.stats.end()) return it->second.mean;
  return std::nullopt;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string{}; }

}  // namespace

json to_json(const RunReport& r) {
  auto epochs = json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_acc", e.val_acc},
                      {"lr_standard", e.lr_standard},
                      {"lr_novel", e.lr_novel},
                      {"improved", e.improved},
                      {"lr_reduced", e.lr_reduced},
                      {"params", to_json(e.params)}});
  return json{{"config", to_json(r.config)},
              {"seed", r.config.seed},
              {"layers", r.layers},
              {"parameter_count", r.parameter_count},
              {"novel_parameter_count", r.novel_parameter_count},
              {"initial_train_loss", r.initial_train_loss},
              {"epochs", epochs},
              {"best_epoch", r.best_epoch},
              {"stopped_early", r.stopped_early},
              {"clean_acc", r.clean_acc},
              {"noisy_acc", r.noisy_acc},
              {"rho", r.rho},
              {"final_params", to_json(r.final_params)},
              {"wall_clock_seconds", r.wall_clock_seconds}};
}

std::string metrics_csv(const RunReport& r) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_acc,lr_standard,lr_novel,mean_p,mean_sigma,mean_alpha\n";
  for (const auto& e : r.epochs)
    os << e.epoch << ',' << num(e.train_loss) << ',' << num(e.val_loss) << ',' << num(e.val_acc) << ','
       << num(e.lr_standard) << ',' << num(e.lr_novel) << ',' << opt_num(summary_mean(e.params, "p")) << ','
       << opt_num(summary_mean(e.params, "sigma")) << ',' << opt_num(summary_mean(e.params, "alpha")) << '\n';
  return os.str();
}

json TrainingAborted::diagnostic() const {
  return json{{"status", "aborted"}, {"reason", what()}, {"seed", seed_}, {"epoch", epoch_}, {"batch", batch_}};
}

// ---------------------------------------------------------------- training

namespace {

std::vector<ParamGroup> groups_for(Model& model, const ExperimentConfig& config) {
  auto params = model.parameters();
  return make_param_groups(params, config.lr_standard, config.lr_novel);
}

double group_lr(const std::vector<ParamGroup>& groups, ParamGroupTag tag) {
  for (const auto& g : groups)
    if (g.tag == tag) return g.learning_rate;
  return 0.0;
}

}  // namespace

Trainer::Trainer(Model& model, const ExperimentConfig& config)
    : model_(&model), clip_norm_(config.clip_norm), adam_(groups_for(model, config), config.adam) {}

double Trainer::step(const Batch& batch) {
  const Tensor logits = model_->forward(batch.x);
  auto [loss, dlogits] = softmax_xent(logits, batch.labels);
  if (!std::isfinite(loss)) throw InvalidValueError("non-finite training loss");
  model_->backward(dlogits);
  auto params = model_->parameters();
  grad_norm_ = clip_global_norm(std::span<Parameter* const>(params), clip_norm_);
  adam_.step();
  return loss;
}

TrainResult train(const ExperimentConfig& config, const ExperimentData& data, const EpochCallback& on_epoch) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const Shape& full = data.train.images.shape();
  Model model = build_model(config, Shape(full.begin() + 1, full.end()), data.classes);

  RunReport report;
  report.config = config;
  report.layers = model.describe();
  report.parameter_count = model.parameter_count();
  report.novel_parameter_count = model.novel_parameter_count();
  try {
    report.initial_train_loss = measure(model, data.train).loss;
  } catch (const InvalidValueError& e) {
    throw TrainingAborted(std::string("non-finite loss before training: ") + e.what(), config.seed, 0, 0);
  }

  Trainer trainer(model, config);
  PlateauScheduler scheduler(config.scheduler);
  EarlyStopping stopper(config.early_stop_patience, config.early_stop_min_delta);
  std::vector<Tensor> best = model.snapshot();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    auto& groups = trainer.optimizer().groups();
    rec.lr_standard = group_lr(groups, ParamGroupTag::standard);
    rec.lr_novel = group_lr(groups, ParamGroupTag::novel);

    const Batches batches(data.train, config.batch_size, splitmix64(config.seed ^ splitmix64(epoch)));
    std::size_t b = 0;
    try {
      double loss_sum = 0.0;
      for (; b < batches.count(); ++b) {
        const Batch batch = batches[b];
        loss_sum += trainer.step(batch) * static_cast<double>(batch.labels.size());
      }
      rec.train_loss = loss_sum / static_cast<double>(data.train.size());
      const Metrics val = measure(model, data.val);
      if (!std::isfinite(val.loss)) throw InvalidValueError("non-finite validation loss");
      rec.val_loss = val.loss;
      rec.val_acc = val.accuracy;
    } catch (const InvalidValueError& e) {
      throw TrainingAborted(std::string("training diverged: ") + e.what(), config.seed, epoch, b);
    }

    const auto decision = stopper.step(rec.val_loss);
    rec.improved = decision.improved;
    if (decision.improved) {
      best = model.snapshot();
      report.best_epoch = epoch;
    }
    rec.lr_reduced = scheduler.step(rec.val_loss, groups);
    rec.params = param_summary(model);
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(report.epochs.back());
    if (decision.stop) {
      report.stopped_early = true;
      break;
    }
  }

  model.restore(best);
  report.clean_acc = evaluate(model, data.test);
  report.noisy_acc = evaluate(model, data.test, NoiseSpec{config.noise_sigma, config.noise_seed});
  report.rho = report.clean_acc > 0.0 ? robustness_score(report.clean_acc, report.noisy_acc) : 0.0;
  report.final_params = param_summary(model);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return TrainResult{std::move(report), std::move(model)};
}

TrainResult train(const ExperimentConfig& config, const EpochCallback& on_epoch) {
  return train(config, load_experiment_data(config), on_epoch);
}

void write_run(const std::filesystem::path& dir, const TrainResult& result) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    out << to_json(result.report).dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "metrics.csv");
    out << metrics_csv(result.report);
  }
  save_checkpoint(dir / "model.ckpt", result.model, json{{"config", to_json(result.report.config)}});
  if (!std::filesystem::exists(dir / "metrics.csv")) throw IoError("cannot write run files under " + dir.string());
}

std::pair<ExperimentConfig, Model> load_run_checkpoint(const std::filesystem::path& file) {
  const json header = read_checkpoint_header(file);
  ExperimentConfig config = config_from_json(header.at("metadata").at("config"));
  Model model = build_model(config, header.at("input_shape").get<Shape>(), header.at("classes").get<std::size_t>());
  load_checkpoint_into(file, model);
  return {std::move(config), std::move(model)};
}

// ------------------------------------------------------------------- sweep

SweepMatrix sweep_from_json(const json& j) {
  SweepMatrix m;
  m.base = config_from_json(j.value("base", json::object()));
  if (j.contains("archs")) {
    m.archs.clear();
    for (const auto& a : j.at("archs")) m.archs.push_back(parse_arch(a.get<std::string>()));
  }
  if (j.contains("aggregations")) {
    m.aggregations.clear();
    for (const auto& a : j.at("aggregations")) m.aggregations.push_back(parse_aggregation(a.get<std::string>()));
  }
  if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& [key, v] : j.items())
    if (key != "base" && key != "archs" && key != "aggregations" && key != "seeds")
      throw InvalidValueError("unknown sweep key '" + key + "'");
  if (m.archs.empty() || m.aggregations.empty() || m.seeds.empty())
    throw InvalidValueError("sweep matrix needs at least one arch, aggregation and seed");
  return m;
}

SweepMatrix load_sweep(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open sweep matrix " + file.string());
  try {
    return sweep_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw IoError(file.string() + ": " + e.what());
  }
}

std::vector<SweepRow> sweep(const SweepMatrix& matrix, const std::filesystem::path& out,
                            const std::function<void(const SweepRow&)>& on_row) {
  std::filesystem::create_directories(out / "runs");
  std::vector<SweepRow> rows;
  for (auto seed : matrix.seeds) {
    for (auto arch : matrix.archs) {
      for (auto agg : matrix.aggregations) {
        ExperimentConfig cfg = matrix.base;
        cfg.arch = arch;
        cfg.aggregation = agg;
        cfg.seed = seed;
        SweepRow row;
        row.arch = arch;
        row.aggregation = agg;
        row.seed = seed;
        const auto name = std::string(to_string(arch)) + "-" + std::string(to_string(agg)) + "-seed" +
                          std::to_string(seed);
        const auto dir = out / "runs" / name;
        try {
          TrainResult result = train(cfg);
          write_run(dir, result);
          const auto& r = result.report;
          row.ok = true;
          row.clean_acc = r.clean_acc;
          row.noisy_acc = r.noisy_acc;
          row.rho = r.rho;
          row.epochs = r.epochs.size();
          row.mean_p = summary_mean(r.final_params, "p");
          row.mean_sigma = summary_mean(r.final_params, "sigma");
          row.mean_alpha = summary_mean(r.final_params, "alpha");
        } catch (const TrainingAborted& e) {
          row.error = e.what();
          std::filesystem::create_directories(dir);
          std::ofstream(dir / "abort.json") << e.diagnostic().dump(2) << '\n';
        } catch (const std::exception& e) {
          row.error = e.what();
        }
        rows.push_back(row);
        if (on_row) on_row(rows.back());
      }
    }
  }
  std::ofstream(out / "results.csv") << sweep_csv(rows);
  std::ofstream(out / "tables.md") << sweep_tables(rows);
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "arch,aggregation,seed,status,epochs,clean_acc,noisy_acc,rho,mean_p,mean_sigma,mean_alpha,error\n";
  for (const auto& r : rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << to_string(r.arch) << ',' << to_string(r.aggregation) << ',' << r.seed << ',' << (r.ok ? "ok" : "failed")
       << ',' << r.epochs << ',' << (r.ok ? num(r.clean_acc) : "") << ',' << (r.ok ? num(r.noisy_acc) : "") << ','
       << (r.ok ? num(r.rho) : "") << ',' << opt_num(r.mean_p) << ',' << opt_num(r.mean_sigma) << ','
       << opt_num(r.mean_alpha) << ',' << err << '\n';
  }
  return os.str();
}

namespace {

std::string_view display_name(AggregationSetting s) {
  switch (s) {
    case AggregationSetting::baseline: return "Baseline";
    case AggregationSetting::fmean_hybrid: return "F-Mean Hybrid";
    case AggregationSetting::gaussian_hybrid: return "Gaussian Hybrid";
    case AggregationSetting::threeway_hybrid: return "Three-way Hybrid";
  }
  return "?";
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string opt_fixed(const std::optional<double>& v) { return v ? fixed(*v, 3) : std::string{}; }

}  // namespace

std::string sweep_tables(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  for (auto arch : {Arch::mlp, Arch::cnn}) {
    bool any = false;
    for (const auto& r : rows) any |= r.arch == arch;
    if (!any) continue;
    os << "## " << (arch == Arch::mlp ? "MLP" : "CNN") << " accuracy and robustness\n\n"
       << "| Model | Seed | Clean Acc (%) | Noisy Acc (%) | rho |\n|---|---|---|---|---|\n";
    for (const auto& r : rows) {
      if (r.arch != arch) continue;
      os << "| " << display_name(r.aggregation) << " | " << r.seed << " | ";
      if (r.ok)
        os << fixed(100.0 * r.clean_acc, 2) << " | " << fixed(100.0 * r.noisy_acc, 2) << " | " << fixed(r.rho, 3);
      else
        os << "failed | | ";
      os << " |\n";
    }
    os << '\n';
  }
  os << "## Converged aggregation parameters\n\n"
     << "| Architecture | Model | Seed | p | sigma | alpha |\n|---|---|---|---|---|---|\n";
  for (const auto& r : rows)
    os << "| " << (r.arch == Arch::mlp ? "MLP" : "CNN") << " | " << display_name(r.aggregation) << " | " << r.seed
       << " | " << opt_fixed(r.mean_p) << " | " << opt_fixed(r.mean_sigma) << " | " << opt_fixed(r.mean_alpha)
       << " |\n";
  return os.str();
}

}  // namespace aggnn
