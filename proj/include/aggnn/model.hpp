#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "aggnn/aggregation.hpp"
#include "aggnn/layers.hpp"
#include "aggnn/tensor.hpp"
#include "json.hpp"

namespace aggnn {

/// Sequential stack of layers ending in class logits.
class Model {
 public:
  Model(Shape input_shape, std::size_t classes) : input_shape_(std::move(input_shape)), classes_(classes) {}

  Layer& add(std::unique_ptr<Layer> layer);

  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  // Backpropagates dL/dlogits through every layer, filling parameter grads.
  void backward(const Tensor& dlogits);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  std::size_t novel_parameter_count() const;

  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
  std::vector<const AggregationLayer*> aggregation_layers() const;

  // Copies of every parameter value, in parameters() order.
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

  // Per-sample input shape, without the batch axis.
  const Shape& input_shape() const { return input_shape_; }
  std::size_t classes() const { return classes_; }

  // One line per layer, e.g. "linear 3072->128".
  std::vector<std::string> describe() const;

 private:
  Shape input_shape_;
  std::size_t classes_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Checkpoint file: one line of JSON (format tag, dtype, byte order, the
// caller's metadata, and every layer with its parameter names and shapes),
// a '\n', then each parameter's values as raw little-endian float64 in
// declaration order.
void save_checkpoint(const std::filesystem::path& file, const Model& model, const nlohmann::json& metadata);

// Header of a checkpoint file, without reading the parameter blobs.
nlohmann::json read_checkpoint_header(const std::filesystem::path& file);

// Loads the blobs into an already-built model whose layer list and
// parameter shapes must match the header exactly.
void load_checkpoint_into(const std::filesystem::path& file, Model& model);

}  // namespace aggnn
