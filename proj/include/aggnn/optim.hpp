#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "aggnn/layers.hpp"
#include "aggnn/tensor.hpp"

namespace aggnn {

struct ParamGroup {
  ParamGroupTag tag;
  double learning_rate;
  std::vector<Parameter*> members;
};

// Splits `params` by tag into {standard, novel}. Throws StateError if a
// parameter appears twice, or if the novel group holds anything other than
// p, log_sigma or alpha_raw (or a standard parameter carries one of those
// names).
std::vector<ParamGroup> make_param_groups(std::span<Parameter* const> params, double lr_standard,
                                          double lr_novel);

// Scales the tensors in place so their joint L2 norm is at most max_norm.
// Returns the norm before scaling. Throws InvalidValueError on NaN/Inf.
double clip_global_norm(std::span<Tensor* const> grads, double max_norm);

// Same, over the grads of every non-frozen parameter.
double clip_global_norm(std::span<Parameter* const> params, double max_norm);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam with a learning rate per parameter group. Frozen
/// parameters keep their moments at zero and are never touched.
class Adam {
 public:
  explicit Adam(std::vector<ParamGroup> groups, AdamConfig config = {});

  void step();

  std::vector<ParamGroup>& groups() { return groups_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  const AdamConfig& config() const { return config_; }
  std::size_t steps() const { return steps_; }

 private:
  struct Moments {
    Tensor first;
    Tensor second;
  };
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Moments>> moments_;
  AdamConfig config_;
  std::size_t steps_ = 0;
};

struct PlateauConfig {
  double factor = 0.5;
  std::size_t patience = 5;
  double threshold = 1e-4;  // absolute decrease that counts as improvement
  double min_lr = 1e-6;
};

/// Reduce-on-plateau for a loss-like metric. Once the number of epochs
/// without improvement exceeds `patience`, every group's rate is
/// multiplied by `factor` (floored at min_lr) and the counter resets.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(PlateauConfig config = {}) : config_(config) {}

  // Returns true when the rates were reduced on this step.
  bool step(double metric, std::vector<ParamGroup>& groups);

  double best() const { return best_; }
  std::size_t bad_epochs() const { return bad_epochs_; }
  const PlateauConfig& config() const { return config_; }

 private:
  PlateauConfig config_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
};

/// Early stopping on a loss-like metric: stop once `patience` consecutive
/// epochs fail to improve on the best value seen so far.
class EarlyStopping {
 public:
  struct Decision {
    bool improved;
    bool stop;
  };

  explicit EarlyStopping(std::size_t patience = 10, double min_delta = 0.0)
      : patience_(patience), min_delta_(min_delta) {}

  Decision step(double metric);

  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_since_improvement() const { return since_; }
  std::size_t patience() const { return patience_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t epoch_ = 0;
  std::size_t since_ = 0;
};

}  // namespace aggnn
