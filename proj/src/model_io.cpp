/**
 * Copyright 2026 The DSG Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "dsg/model_io.hpp"

#include <fstream>
#include <json.hpp>

#include "dsg/binary_io.hpp"

namespace dsg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

// Parameter tensors of a layer, in serialization order.
std::vector<std::pair<const char*, Tensor Layer::*>> tensor_fields(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv:
    case LayerKind::kDense:
      return {{"weight", &Layer::weight}, {"bias", &Layer::bias}};
    case LayerKind::kBatchNorm:
      return {{"gamma", &Layer::gamma},
              {"beta", &Layer::beta},
              {"running_mean", &Layer::running_mean},
              {"running_var", &Layer::running_var}};
    default:
      return {};
  }
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw_format("model.json: " + where + " is missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw_format("model.json: " + where + "." + key + ": " + e.what());
  }
}

}  // namespace

void save_model(const Network& net, const fs::path& dir) {
  validate(net);
  fs::create_directories(dir);
  json layers = json::array();
  std::vector<double> blob;
  for (const Layer& l : net.layers) {
    json jl{{"kind", std::string(to_string(l.kind))}};
    if (l.kind == LayerKind::kConv) {
      jl["stride"] = l.stride;
      jl["pad"] = l.pad;
    } else if (l.kind == LayerKind::kMaxPool) {
      jl["kernel"] = l.kernel;
      jl["stride"] = l.stride;
    }
    json tensors = json::array();
    for (const auto& [name, member] : tensor_fields(l.kind)) {
      const Tensor& t = l.*member;
      tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}, {"count", t.size()}});
      blob.insert(blob.end(), t.data(), t.data() + t.size());
    }
    jl["tensors"] = std::move(tensors);
    layers.push_back(std::move(jl));
  }
  const json manifest{{"format", "dsg-model"},
                      {"version", kFormatVersion},
                      {"arch", net.arch},
                      {"input_shape", net.input_shape},
                      {"classes", net.classes},
                      {"blob", "weights.bin"},
                      {"total_elements", blob.size()},
                      {"layers", std::move(layers)}};
  write_f64_file(dir / "weights.bin", blob.data(), Index(blob.size()));
  write_file_atomic(dir / "model.json", manifest.dump(2) + "\n");
}

Network load_model(const fs::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw_format("cannot open " + (dir / "model.json").string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw_format(std::string("model.json: ") + e.what());
  }
  if (field<std::string>(m, "format", "manifest") != "dsg-model") throw_format("model.json: not a dsg-model manifest");
  if (field<int>(m, "version", "manifest") != kFormatVersion) throw_format("model.json: unsupported version");

  const auto total = field<Index>(m, "total_elements", "manifest");
  if (total < 0) throw_format("model.json: negative total_elements");
  const Tensor::Array blob = read_f64_file(dir / field<std::string>(m, "blob", "manifest"), total);

  Network net;
  net.arch = field<std::string>(m, "arch", "manifest");
  net.input_shape = field<Shape>(m, "input_shape", "manifest");
  net.classes = field<Index>(m, "classes", "manifest");
  const json& layers = m.at("layers");
  if (!layers.is_array()) throw_format("model.json: 'layers' must be an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const json& jl = layers[i];
    const std::string where = "layers[" + std::to_string(i) + "]";
    Layer l;
    l.kind = parse_layer_kind(field<std::string>(jl, "kind", where));
    if (l.kind == LayerKind::kConv) {
      l.stride = field<Index>(jl, "stride", where);
      l.pad = field<Index>(jl, "pad", where);
    } else if (l.kind == LayerKind::kMaxPool) {
      l.kernel = field<Index>(jl, "kernel", where);
      l.stride = field<Index>(jl, "stride", where);
    }
    const json tensors = jl.contains("tensors") ? jl.at("tensors") : json::array();
    for (const auto& [name, member] : tensor_fields(l.kind)) {
      const json* entry = nullptr;
      for (const json& t : tensors) {
        if (t.value("name", "") == name) entry = &t;
      }
      if (!entry) throw_format("model.json: " + where + " has no tensor '" + name + "'");
      const auto shape = field<Shape>(*entry, "shape", where);
      const auto offset = field<Index>(*entry, "offset", where);
      const auto count = field<Index>(*entry, "count", where);
      if (shape.empty() || std::any_of(shape.begin(), shape.end(), [](Index d) { return d <= 0; }) ||
          shape_size(shape) != count) {
        throw_format("model.json: " + where + "." + name + " shape does not match its element count");
      }
      if (offset < 0 || count < 0 || offset + count > total) {
        throw_format("model.json: " + where + "." + name + " lies outside weights.bin");
      }
      l.*member = Tensor(shape, blob.segment(offset, count));
    }
    net.layers.push_back(std::move(l));
  }
  try {
    validate(net);
  } catch (const Error& e) {
    throw_format(std::string("model.json: inconsistent network: ") + e.what());
  }
  return net;
}

}  // namespace dsg
