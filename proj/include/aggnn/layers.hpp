#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aggnn/tensor.hpp"

namespace aggnn {

// Learning-rate group a parameter trains in. `novel` holds exactly the
// aggregation parameters p, log_sigma and alpha_raw.
enum class ParamGroupTag { standard, novel };

std::string_view to_string(ParamGroupTag tag);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  ParamGroupTag group = ParamGroupTag::standard;
  bool frozen = false;
};

/// Base class for every network stage. A training forward caches what the
/// matching backward needs; backward consumes that cache, so calling it
/// twice without an intervening forward throws StateError. infer() never
/// touches the cache.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string_view kind() const = 0;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor infer(const Tensor& x) const = 0;
  // Overwrites each parameter's grad and returns dL/dx.
  virtual Tensor backward(const Tensor& upstream) = 0;

  std::span<Parameter> parameters() { return params_; }
  std::span<const Parameter> parameters() const { return params_; }
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;

 protected:
  Parameter& add_parameter(std::string name, Shape shape, ParamGroupTag group);

  std::vector<Parameter> params_;
};

// Fills `weight` with Kaiming-uniform samples, bound sqrt(6 / fan_in).
void kaiming_uniform(Tensor& weight, std::size_t fan_in, std::mt19937_64& rng);

class LinearLayer : public Layer {
 public:
  LinearLayer(std::size_t in_units, std::size_t out_units);
  LinearLayer(Tensor weight, Tensor bias);

  void initialize(std::mt19937_64& rng);

  std::string_view kind() const override { return "linear"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& upstream) override;

  std::size_t in_units() const { return in_; }
  std::size_t out_units() const { return out_; }

 private:
  std::size_t in_;
  std::size_t out_;
  std::optional<Tensor> cache_;
};

class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(std::size_t in_channels, std::size_t out_channels);

  void initialize(std::mt19937_64& rng);

  std::string_view kind() const override { return "conv3x3"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& upstream) override;

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

 private:
  std::size_t in_;
  std::size_t out_;
  std::optional<Tensor> cache_;
};

class MaxPool2x2Layer : public Layer {
 public:
  std::string_view kind() const override { return "maxpool2x2"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& upstream) override;

 private:
  struct Cache {
    Shape input_shape;
    std::vector<std::size_t> argmax;
  };
  std::optional<Cache> cache_;
};

class ReluLayer : public Layer {
 public:
  std::string_view kind() const override { return "relu"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& upstream) override;

 private:
  std::optional<Tensor> cache_;
};

// Collapses every axis after the batch axis.
class FlattenLayer : public Layer {
 public:
  std::string_view kind() const override { return "flatten"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& upstream) override;

 private:
  std::optional<Shape> cache_;
};

struct XentResult {
  double loss;
  Tensor dlogits;
};

/// Mean softmax cross-entropy over the batch and its gradient
/// (softmax - onehot) / batch.
XentResult softmax_xent(const Tensor& logits, std::span<const int> labels);

}  // namespace aggnn
