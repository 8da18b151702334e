#include "aggnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "aggnn/aggregation.hpp"
#include "aggnn/error.hpp"
#include "aggnn/experiment.hpp"
#include "aggnn/layers.hpp"
#include "aggnn/tensor.hpp"

namespace aggnn {

// Below this norm the central difference is dominated by rounding in the
// loss (about eps * |L| / h, near 1e-10 here), so the error is measured
// against the floor instead.
constexpr double kGradFloor = 1e-4;

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
  const double scale = std::max({l2_norm(analytic), l2_norm(numeric), kGradFloor});
  return std::sqrt(diff) / scale;
}

namespace {

using Rng = std::mt19937_64;
using Loss = std::function<double()>;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor normal(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Accumulates one op's cases. Each probe compares an analytic gradient
// against central differences of `loss` taken through `value` in place.
class Tally {
 public:
  Tally(std::string op, const GradcheckOptions& options, double tolerance) : options_(options) {
    result_.op = std::move(op);
    result_.tolerance = tolerance;
  }

  void probe(const std::string& name, Tensor& value, const Tensor& analytic, const Loss& loss) {
    if (analytic.shape() != value.shape()) throw ShapeError("gradcheck " + result_.op + ": " + name + " grad shape");
    const double h = options_.step;
    Tensor numeric(value.shape());
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double v = value[i];
      value[i] = v + h;
      const double up = loss();
      value[i] = v - h;
      const double down = loss();
      value[i] = v;
      numeric[i] = (up - down) / (2.0 * h);
    }
    const double err = relative_error(analytic.data(), numeric.data());
    if (!(err <= result_.tolerance)) case_failed_ = true;
    if (!(err <= result_.worst)) {
      result_.worst = err;
      result_.worst_tensor = name;
    }
  }

  void end_case() {
    ++result_.cases;
    if (case_failed_) ++result_.failures;
    case_failed_ = false;
  }

  GradcheckResult result() const { return result_; }

 private:
  const GradcheckOptions& options_;
  GradcheckResult result_;
  bool case_failed_ = false;
};

using CaseFn = std::function<void(Rng&, Tally&)>;

GradcheckResult run_op(const std::string& op, const GradcheckOptions& options, double tol, const CaseFn& fn) {
  Tally tally(op, options, tol);
  Rng rng(options.seed ^ std::hash<std::string>{}(op));
  for (std::size_t c = 0; c < options.cases; ++c) {
    fn(rng, tally);
    tally.end_case();
  }
  return tally.result();
}

// Probes x and every parameter of a layer under L = sum(c * layer(x)).
void probe_layer(Layer& layer, Tensor& x, Rng& rng, Tally& tally) {
  const Tensor y = layer.forward(x);
  const Tensor c = normal(y.shape(), rng);
  const Tensor dx = layer.backward(c);
  const Loss loss = [&] { return dot(c, layer.infer(x)); };
  tally.probe("x", x, dx, loss);
  for (auto& p : layer.parameters()) {
    const Tensor g = p.grad;
    tally.probe(p.name, p.value, g, loss);
  }
}

// ------------------------------------------------------------------ layers

void softplus_case(Rng& rng, Tally& tally) {
  Tensor x = normal({pick(rng, 1, 4), pick(rng, 1, 6)}, rng, 3.0);
  const Tensor c = normal(x.shape(), rng);
  tally.probe("x", x, softplus_backward(x, c), [&] { return dot(c, softplus(x)); });
}

void sigmoid_case(Rng& rng, Tally& tally) {
  Tensor x = normal({pick(rng, 1, 4), pick(rng, 1, 6)}, rng, 3.0);
  const Tensor c = normal(x.shape(), rng);
  tally.probe("x", x, sigmoid_backward(sigmoid(x), c), [&] { return dot(c, sigmoid(x)); });
}

void softmax_case(Rng& rng, Tally& tally) {
  Tensor x = normal({pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng, 2.0);
  const std::size_t axis = pick(rng, 0, 2);
  const Tensor c = normal(x.shape(), rng);
  tally.probe("x", x, softmax_backward(softmax(x, axis), c, axis), [&] { return dot(c, softmax(x, axis)); });
}

void linear_case(Rng& rng, Tally& tally) {
  const std::size_t in = pick(rng, 1, 7), out = pick(rng, 1, 5);
  LinearLayer layer(normal({out, in}, rng), normal({out}, rng));
  Tensor x = normal({pick(rng, 1, 4), in}, rng);
  probe_layer(layer, x, rng, tally);
}

void conv_case(Rng& rng, Tally& tally) {
  const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
  Conv2dLayer layer(cin, cout);
  layer.parameter("W").value = normal({cout, cin, 3, 3}, rng, 0.5);
  layer.parameter("b").value = normal({cout}, rng);
  Tensor x = normal({pick(rng, 1, 2), cin, pick(rng, 1, 5), pick(rng, 1, 5)}, rng);
  probe_layer(layer, x, rng, tally);
}

void maxpool_case(Rng& rng, Tally& tally) {
  // Distinct values on a 0.1 grid so a step of h never changes the argmax.
  Tensor x({pick(rng, 1, 2), pick(rng, 1, 3), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)});
  std::vector<double> grid(x.size());
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.1 * static_cast<double>(i);
  std::shuffle(grid.begin(), grid.end(), rng);
  std::copy(grid.begin(), grid.end(), x.data().begin());
  MaxPool2x2Layer layer;
  probe_layer(layer, x, rng, tally);
}

void relu_case(Rng& rng, Tally& tally) {
  Tensor x = normal({pick(rng, 1, 4), pick(rng, 1, 8)}, rng);
  for (auto& v : x.data())
    if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
  ReluLayer layer;
  probe_layer(layer, x, rng, tally);
}

void xent_case(Rng& rng, Tally& tally) {
  const std::size_t batch = pick(rng, 1, 5), classes = pick(rng, 2, 6);
  Tensor logits = normal({batch, classes}, rng, 2.0);
  std::vector<int> labels(batch);
  for (auto& l : labels) l = static_cast<int>(pick(rng, 0, classes - 1));
  const Tensor g = softmax_xent(logits, labels).dlogits;
  tally.probe("logits", logits, g, [&] { return softmax_xent(logits, labels).loss; });
}

// ------------------------------------------------------------- aggregation

void randomize_aggregation(AggregationLayer& layer, Rng& rng) {
  for (auto& p : layer.parameters()) {
    if (p.name == "W") p.value = normal(p.value.shape(), rng);
    else if (p.name == "b") p.value = normal(p.value.shape(), rng);
    else if (p.name == "p") p.value = uniform(p.value.shape(), rng, -1.0, 3.0);
    else if (p.name == "log_sigma") p.value = uniform(p.value.shape(), rng, -0.5, 1.0);
    else if (p.name == "alpha_raw") p.value = normal(p.value.shape(), rng);
  }
}

CaseFn aggregation_case(AggregationKind kind) {
  return [kind](Rng& rng, Tally& tally) {
    const std::size_t in = pick(rng, 2, 7), out = pick(rng, 1, 4);
    AggregationLayer layer(kind, in, out);
    randomize_aggregation(layer, rng);
    Tensor x = normal({pick(rng, 1, 3), in}, rng);
    probe_layer(layer, x, rng, tally);
  };
}

// ------------------------------------------------------------------- model

bool near_relu_kink(const Model& model, const Tensor& x) {
  Tensor h = x;
  for (const auto& layer : model.layers()) {
    if (layer->kind() == "relu")
      for (double v : h.data())
        if (std::abs(v) < 1e-3) return true;
    h = layer->infer(h);
  }
  return false;
}

CaseFn model_case(AggregationSetting setting) {
  return [setting](Rng& rng, Tally& tally) {
    ExperimentConfig cfg;
    cfg.aggregation = setting;
    cfg.projection_width = 6;
    cfg.hidden_width = 5;
    for (;;) {
      cfg.seed = rng();
      Model model = build_model(cfg, {8}, 3);
      for (const auto& layer : model.layers())
        if (auto* agg = dynamic_cast<AggregationLayer*>(layer.get())) randomize_aggregation(*agg, rng);
      Tensor x = normal({2, 8}, rng);
      std::vector<int> labels{static_cast<int>(pick(rng, 0, 2)), static_cast<int>(pick(rng, 0, 2))};
      if (near_relu_kink(model, x)) continue;

      const auto fit = softmax_xent(model.forward(x), labels);
      model.backward(fit.dlogits);
      const Loss loss = [&] { return softmax_xent(model.infer(x), labels).loss; };
      for (std::size_t i = 0; i < model.layers().size(); ++i)
        for (auto& p : model.layers()[i]->parameters()) {
          const Tensor g = p.grad;
          tally.probe(std::to_string(i) + "." + p.name, p.value, g, loss);
        }
      return;
    }
  };
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(std::string_view group, const GradcheckOptions& options) {
  const bool all = group == "all";
  if (!all && group != "layers" && group != "fmean" && group != "gaussian" && group != "hybrid" && group != "model")
    throw InvalidValueError("unknown gradcheck module '" + std::string(group) +
                            "' (expected all, layers, fmean, gaussian, hybrid or model)");
  const double tol = options.tolerance;
  std::vector<GradcheckResult> out;
  if (all || group == "layers") {
    out.push_back(run_op("softplus", options, tol, softplus_case));
    out.push_back(run_op("sigmoid", options, tol, sigmoid_case));
    out.push_back(run_op("softmax", options, tol, softmax_case));
    out.push_back(run_op("linear", options, tol, linear_case));
    out.push_back(run_op("conv3x3", options, tol, conv_case));
    out.push_back(run_op("maxpool2x2", options, tol, maxpool_case));
    out.push_back(run_op("relu", options, tol, relu_case));
    out.push_back(run_op("softmax-xent", options, tol, xent_case));
  }
  if (all || group == "fmean") out.push_back(run_op("fmean", options, tol, aggregation_case(AggregationKind::fmean)));
  if (all || group == "gaussian")
    out.push_back(run_op("gaussian", options, tol, aggregation_case(AggregationKind::gaussian)));
  if (all || group == "hybrid") {
    out.push_back(run_op("hybrid-fmean", options, tol, aggregation_case(AggregationKind::hybrid_fmean)));
    out.push_back(run_op("hybrid-gaussian", options, tol, aggregation_case(AggregationKind::hybrid_gaussian)));
    out.push_back(run_op("hybrid-threeway", options, tol, aggregation_case(AggregationKind::hybrid_threeway)));
  }
  if (all || group == "model") {
    const double mtol = options.model_tolerance;
    for (auto s : {AggregationSetting::baseline, AggregationSetting::fmean_hybrid, AggregationSetting::gaussian_hybrid,
                   AggregationSetting::threeway_hybrid})
      out.push_back(run_op("model/" + std::string(to_string(s)), options, mtol, model_case(s)));
  }
  return out;
}

}  // namespace aggnn
