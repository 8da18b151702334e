#include "aggnn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "aggnn/error.hpp"

namespace aggnn {

namespace {

bool is_novel_name(const std::string& name) {
  return name == "p" || name == "log_sigma" || name == "alpha_raw";
}

}  // namespace

std::vector<ParamGroup> make_param_groups(std::span<Parameter* const> params, double lr_standard,
                                          double lr_novel) {
  if (!(lr_standard >= 0.0) || !(lr_novel >= 0.0)) throw InvalidValueError("learning rates must be >= 0");
  std::vector<ParamGroup> groups{{ParamGroupTag::standard, lr_standard, {}}, {ParamGroupTag::novel, lr_novel, {}}};
  std::set<const Parameter*> seen;
  for (Parameter* p : params) {
    if (!seen.insert(p).second) throw StateError("parameter '" + p->name + "' registered twice");
    const bool novel = p->group == ParamGroupTag::novel;
    if (novel != is_novel_name(p->name))
      throw StateError("parameter '" + p->name + "' is in the wrong group (" + std::string(to_string(p->group)) +
                       ")");
    groups[novel ? 1 : 0].members.push_back(p);
  }
  return groups;
}

double clip_global_norm(std::span<Tensor* const> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor* g : grads) {
    if (!g->all_finite()) throw InvalidValueError("clip_global_norm: non-finite gradient");
    for (double v : g->data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor* g : grads)
      for (auto& v : g->data()) v *= scale;
  }
  return norm;
}

double clip_global_norm(std::span<Parameter* const> params, double max_norm) {
  std::vector<Tensor*> grads;
  for (Parameter* p : params)
    if (!p->frozen) grads.push_back(&p->grad);
  for (Parameter* p : params)
    if (!p->frozen && !p->grad.all_finite())
      throw InvalidValueError("clip_global_norm: non-finite gradient in '" + p->name + "'");
  return clip_global_norm(std::span<Tensor* const>(grads), max_norm);
}

Adam::Adam(std::vector<ParamGroup> groups, AdamConfig config) : groups_(std::move(groups)), config_(config) {
  for (const auto& g : groups_) {
    auto& m = moments_.emplace_back();
    for (const Parameter* p : g.members) m.push_back({Tensor(p->value.shape()), Tensor(p->value.shape())});
  }
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const double lr = groups_[gi].learning_rate;
    for (std::size_t pi = 0; pi < groups_[gi].members.size(); ++pi) {
      Parameter& p = *groups_[gi].members[pi];
      if (p.frozen) continue;
      if (p.grad.shape() != p.value.shape())
        throw ShapeError("adam: gradient shape mismatch for '" + p.name + "'");
      auto m = moments_[gi][pi].first.data();
      auto v = moments_[gi][pi].second.data();
      auto value = p.value.data();
      auto grad = p.grad.data();
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        value[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }
}

bool PlateauScheduler::step(double metric, std::vector<ParamGroup>& groups) {
  if (!std::isfinite(metric)) throw InvalidValueError("scheduler: non-finite metric");
  if (metric < best_ - config_.threshold) {
    best_ = metric;
    bad_epochs_ = 0;
    return false;
  }
  ++bad_epochs_;
  if (bad_epochs_ <= config_.patience) return false;
  bad_epochs_ = 0;
  bool reduced = false;
  for (auto& g : groups) {
    const double next = std::max(g.learning_rate * config_.factor, config_.min_lr);
    if (next < g.learning_rate) {
      g.learning_rate = next;
      reduced = true;
    }
  }
  return reduced;
}

EarlyStopping::Decision EarlyStopping::step(double metric) {
  if (!std::isfinite(metric)) throw InvalidValueError("early stopping: non-finite metric");
  ++epoch_;
  if (metric < best_ - min_delta_) {
    best_ = metric;
    best_epoch_ = epoch_;
    since_ = 0;
    return {true, false};
  }
  ++since_;
  return {false, since_ >= patience_};
}

}  // namespace aggnn
