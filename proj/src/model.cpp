#include "aggnn/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "aggnn/error.hpp"

namespace aggnn {

Layer& Model::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
  return *layers_.back();
}

Tensor Model::forward(const Tensor& x) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h);
  return h;
}

Tensor Model::infer(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = layer->infer(h);
  return h;
}

void Model::backward(const Tensor& dlogits) {
  Tensor g = dlogits;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_)
    for (auto& p : layer->parameters()) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& layer : layers_)
    for (const auto& p : std::as_const(*layer).parameters()) out.push_back(&p);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

std::size_t Model::novel_parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters())
    if (p->group == ParamGroupTag::novel) n += p->value.size();
  return n;
}

std::vector<const AggregationLayer*> Model::aggregation_layers() const {
  std::vector<const AggregationLayer*> out;
  for (const auto& layer : layers_)
    if (const auto* agg = dynamic_cast<const AggregationLayer*>(layer.get())) out.push_back(agg);
  return out;
}

std::vector<Tensor> Model::snapshot() const {
  std::vector<Tensor> out;
  for (const auto* p : parameters()) out.push_back(p->value);
  return out;
}

void Model::restore(const std::vector<Tensor>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw StateError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].shape() != params[i]->value.shape()) throw ShapeError("restore: shape mismatch");
    params[i]->value = values[i];
  }
}

std::vector<std::string> Model::describe() const {
  std::vector<std::string> out;
  for (const auto& layer : layers_) {
    std::string line(layer->kind());
    if (const auto* lin = dynamic_cast<const LinearLayer*>(layer.get()))
      line += " " + std::to_string(lin->in_units()) + "->" + std::to_string(lin->out_units());
    else if (const auto* agg = dynamic_cast<const AggregationLayer*>(layer.get()))
      line += " " + std::to_string(agg->in_units()) + "->" + std::to_string(agg->out_units());
    else if (const auto* conv = dynamic_cast<const Conv2dLayer*>(layer.get()))
      line += " " + std::to_string(conv->in_channels()) + "->" + std::to_string(conv->out_channels());
    out.push_back(std::move(line));
  }
  return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr const char* kFormat = "aggnn-checkpoint";
constexpr int kVersion = 1;

nlohmann::json layer_table(const Model& model) {
  auto layers = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const Layer& layer = *model.layers()[i];
    auto params = nlohmann::json::array();
    for (const auto& p : layer.parameters())
      params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"group", to_string(p.group)}});
    layers.push_back({{"index", i}, {"kind", layer.kind()}, {"params", params}});
  }
  return layers;
}

void write_f64_le(std::ofstream& out, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (double v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      out.write(bytes, 8);
    }
  }
}

void read_f64_le(std::ifstream& in, std::span<double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (double& v : values) {
      unsigned char bytes[8];
      in.read(reinterpret_cast<char*>(bytes), 8);
      std::uint64_t bits = 0;
      for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[b];
      v = std::bit_cast<double>(bits);
    }
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const Model& model, const nlohmann::json& metadata) {
  const nlohmann::json header{{"format", kFormat},
                              {"version", kVersion},
                              {"dtype", "float64"},
                              {"byte_order", "little"},
                              {"input_shape", model.input_shape()},
                              {"classes", model.classes()},
                              {"metadata", metadata},
                              {"layers", layer_table(model)}};
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + file.string());
  out << header.dump() << '\n';
  for (const auto* p : model.parameters()) write_f64_le(out, p->value.data());
  if (!out) throw IoError("short write to " + file.string());
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + file.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(file.string() + ": malformed checkpoint header: " + e.what());
  }
  if (header.value("format", "") != kFormat || header.value("version", 0) != kVersion)
    throw IoError(file.string() + ": not an aggnn checkpoint");
  return header;
}

void load_checkpoint_into(const std::filesystem::path& file, Model& model) {
  const auto header = read_checkpoint_header(file);
  if (header.at("layers") != layer_table(model))
    throw IoError(file.string() + ": layer table does not match the model");
  std::ifstream in(file, std::ios::binary);
  std::string line;
  std::getline(in, line);
  for (auto* p : model.parameters()) read_f64_le(in, p->value.data());
  if (!in) throw IoError(file.string() + ": truncated parameter data");
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(file.string() + ": trailing bytes after parameters");
}

}  // namespace aggnn
