#include "tminfer/bundle.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <set>

#include "tminfer/error.hpp"

namespace tminfer {

using nlohmann::json;

namespace {

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedDocument, std::string(what) + ": " + e.what());
  }
}

const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) throw Error(ErrorCode::MissingField, key);
  return *it;
}

bool is_container_class(std::string_view class_name) {
  return class_name == "Sequential" || class_name == "Model" || class_name == "Functional";
}

float load_le_float(const std::uint8_t* p) {
  const std::uint32_t bits = std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 |
                             std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
  return std::bit_cast<float>(bits);
}

void store_le_float(float v, std::uint8_t* p) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

std::optional<std::vector<std::string>> parse_inbound(const json& layer) {
  auto it = layer.find("inbound_nodes");
  if (it == layer.end() || it->is_null()) return std::nullopt;
  if (!it->is_array()) throw Error(ErrorCode::MalformedDocument, "inbound_nodes is not an array");
  std::vector<std::string> names;
  if (it->empty()) return names;
  if (it->size() > 1) {
    throw Error(ErrorCode::UnsupportedLayer,
                "shared layer with " + std::to_string(it->size()) + " call sites");
  }
  for (const auto& ref : it->at(0)) {
    if (!ref.is_array() || ref.empty() || !ref[0].is_string()) {
      throw Error(ErrorCode::MalformedDocument, "bad inbound node reference");
    }
    names.push_back(ref[0].get<std::string>());
  }
  return names;
}

LayerSpec parse_layer(const json& layer) {
  if (!layer.is_object()) throw Error(ErrorCode::MalformedDocument, "layer is not an object");
  LayerSpec spec;
  spec.class_name = require(layer, "class_name").get<std::string>();
  if (spec.class_name.empty()) throw Error(ErrorCode::InvalidValue, "empty class_name");

  const json& config = require(layer, "config");
  const json* children = nullptr;
  if (config.is_array()) {
    // Legacy Sequential serialization: config is the layer list itself.
    children = &config;
  } else if (config.is_object()) {
    spec.config = config;
    if (auto it = config.find("layers"); it != config.end() && is_container_class(spec.class_name)) {
      children = &*it;
    }
  } else {
    throw Error(ErrorCode::MalformedDocument, "config of " + spec.class_name + " is not an object");
  }

  if (config.is_object() && config.contains("name") && config["name"].is_string()) {
    spec.name = config["name"].get<std::string>();
  } else if (layer.contains("name") && layer["name"].is_string()) {
    spec.name = layer["name"].get<std::string>();
  }
  spec.inbound = parse_inbound(layer);

  if (children) {
    if (!children->is_array()) throw Error(ErrorCode::MalformedDocument, "layers is not an array");
    std::set<std::string> seen;
    for (const auto& child : *children) {
      spec.inner_layers.push_back(parse_layer(child));
      const auto& name = spec.inner_layers.back().name;
      if (!name.empty() && !seen.insert(name).second) {
        throw Error(ErrorCode::InvalidValue, "duplicate layer name '" + name + "' in " + spec.name);
      }
    }
    spec.config.erase("layers");
  }
  return spec;
}

void check_relative_path(const std::string& path) {
  const std::filesystem::path p(path);
  if (path.empty() || p.is_absolute() ||
      std::any_of(p.begin(), p.end(), [](const auto& part) { return part == ".."; })) {
    throw Error(ErrorCode::InvalidValue, "weights path '" + path + "' must be a relative file name");
  }
}

void collect_head_width(const LayerSpec& spec, std::optional<std::size_t>& width) {
  if (spec.is_container()) {
    for (const auto& child : spec.inner_layers) collect_head_width(child, width);
    return;
  }
  auto it = spec.config.find("units");
  if (it != spec.config.end() && it->is_number_integer()) width = it->get<std::size_t>();
}

}  // namespace

bool LayerSpec::is_container() const { return is_container_class(class_name); }

void WeightStore::insert(const std::string& name, NdArray value) {
  if (!index_.emplace(name, std::move(value)).second) {
    throw Error(ErrorCode::DuplicateWeightName, name);
  }
  order_.push_back(name);
}

const NdArray* WeightStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &it->second;
}

std::size_t WeightStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, arr] : index_) n += arr.size();
  return n;
}

Metadata parse_metadata(std::string_view text) try {
  const json doc = parse_json(text, "metadata");
  if (!doc.is_object()) throw Error(ErrorCode::MalformedDocument, "metadata is not an object");

  Metadata meta;
  const json& labels = require(doc, "labels");
  if (!labels.is_array()) throw Error(ErrorCode::InvalidValue, "labels is not an array");
  std::set<std::string> seen;
  for (const auto& label : labels) {
    if (!label.is_string()) throw Error(ErrorCode::InvalidValue, "label is not a string");
    auto s = label.get<std::string>();
    if (!seen.insert(s).second) throw Error(ErrorCode::InvalidValue, "duplicate label '" + s + "'");
    meta.labels.push_back(std::move(s));
  }
  if (meta.labels.empty()) throw Error(ErrorCode::InvalidValue, "labels is empty");

  const json& size = require(doc, "imageSize");
  if (!size.is_number_integer()) throw Error(ErrorCode::InvalidValue, "imageSize is not an integer");
  if (size.get<long long>() < 1 || size.get<long long>() > 1 << 16) {
    throw Error(ErrorCode::InvalidValue, "imageSize " + size.dump() + " out of range");
  }
  meta.image_size = size.get<int>();

  if (auto it = doc.find("modelName"); it != doc.end() && it->is_string()) {
    meta.model_name = it->get<std::string>();
  }
  if (auto it = doc.find("timeStamp"); it != doc.end() && it->is_string()) {
    meta.timestamp = it->get<std::string>();
  }
  for (const auto& [key, value] : doc.items()) {
    if (value.is_string() && key.size() > 7 && key.ends_with("Version")) {
      meta.library_versions[key] = value.get<std::string>();
    }
  }
  return meta;
} catch (const json::exception& e) {
  throw Error(ErrorCode::MalformedDocument, e.what());
}

Topology parse_topology(std::string_view text) try {
  const json doc = parse_json(text, "model");
  if (!doc.is_object()) throw Error(ErrorCode::MalformedDocument, "model is not an object");

  Topology topo;
  const json* root = &require(doc, "modelTopology");
  if (auto it = root->find("model_config"); it != root->end()) root = &*it;
  topo.root = parse_layer(*root);

  const json& groups = require(doc, "weightsManifest");
  if (!groups.is_array()) throw Error(ErrorCode::MalformedDocument, "weightsManifest is not an array");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const json& group = groups[g];
    std::vector<std::string> paths;
    for (const auto& p : require(group, "paths")) {
      paths.push_back(p.get<std::string>());
      check_relative_path(paths.back());
    }
    if (paths.empty()) throw Error(ErrorCode::MissingField, "paths");
    for (const auto& w : require(group, "weights")) {
      WeightsManifestEntry entry;
      entry.name = require(w, "name").get<std::string>();
      for (const auto& d : require(w, "shape")) {
        if (!d.is_number_integer() || d.get<long long>() < 0) {
          throw Error(ErrorCode::InvalidValue, "bad shape for weight " + entry.name);
        }
        entry.shape.push_back(d.get<std::size_t>());
      }
      entry.dtype = require(w, "dtype").get<std::string>();
      if (entry.dtype != "float32") {
        throw Error(ErrorCode::UnsupportedDtype, entry.name + " has dtype " + entry.dtype);
      }
      if (w.contains("quantization")) {
        throw Error(ErrorCode::UnsupportedQuantization, entry.name);
      }
      entry.group = g;
      entry.paths = paths;
      topo.manifest.push_back(std::move(entry));
    }
  }
  return topo;
} catch (const json::exception& e) {
  throw Error(ErrorCode::MalformedDocument, e.what());
}

std::vector<std::string> weight_paths(std::span<const WeightsManifestEntry> manifest) {
  std::vector<std::string> out;
  for (const auto& e : manifest) {
    for (const auto& p : e.paths) {
      if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    }
  }
  return out;
}

WeightStore decode_weights(std::span<const WeightsManifestEntry> manifest,
                           const std::map<std::string, Bytes>& blobs) {
  WeightStore store;
  std::size_t i = 0;
  while (i < manifest.size()) {
    const std::size_t group = manifest[i].group;
    Bytes joined;
    for (const auto& path : manifest[i].paths) {
      auto it = blobs.find(path);
      if (it == blobs.end()) throw Error(ErrorCode::MissingField, "weights file " + path);
      joined.insert(joined.end(), it->second.begin(), it->second.end());
    }
    std::size_t offset = 0;
    for (; i < manifest.size() && manifest[i].group == group; ++i) {
      const auto& entry = manifest[i];
      const std::size_t nbytes = entry.byte_size();
      if (offset + nbytes > joined.size()) {
        throw Error(ErrorCode::ByteLengthMismatch,
                    "weight " + entry.name + " needs bytes [" + std::to_string(offset) + ", " +
                        std::to_string(offset + nbytes) + ") of " + std::to_string(joined.size()));
      }
      std::vector<float> values(element_count(entry.shape));
      for (std::size_t k = 0; k < values.size(); ++k) {
        values[k] = load_le_float(joined.data() + offset + k * sizeof(float));
      }
      offset += nbytes;
      store.insert(entry.name, NdArray(entry.shape, std::move(values)));
    }
    if (offset != joined.size()) {
      throw Error(ErrorCode::ByteLengthMismatch,
                  std::to_string(joined.size() - offset) + " trailing bytes in weight group " +
                      std::to_string(group));
    }
  }
  return store;
}

std::map<std::string, Bytes> encode_weights(std::span<const WeightsManifestEntry> manifest,
                                            const WeightStore& weights) {
  std::map<std::string, Bytes> out;
  std::size_t i = 0;
  while (i < manifest.size()) {
    const std::size_t group = manifest[i].group;
    const auto& paths = manifest[i].paths;
    Bytes joined;
    for (; i < manifest.size() && manifest[i].group == group; ++i) {
      const NdArray* arr = weights.find(manifest[i].name);
      if (!arr) throw Error(ErrorCode::MissingWeight, manifest[i].name);
      const std::size_t at = joined.size();
      joined.resize(at + arr->size() * sizeof(float));
      for (std::size_t k = 0; k < arr->size(); ++k) {
        store_le_float((*arr)[k], joined.data() + at + k * sizeof(float));
      }
    }
    // Shard boundaries are not recorded, so a multi-path group lands in its first path.
    out[paths.front()] = std::move(joined);
    for (std::size_t p = 1; p < paths.size(); ++p) out[paths[p]];
  }
  return out;
}

ModelBundle assemble_bundle(Metadata metadata, Topology topology, WeightStore weights) {
  std::optional<std::size_t> width;
  collect_head_width(topology.root, width);
  if (!width) {
    throw Error(ErrorCode::LabelCountMismatch, "model has no layer declaring output units");
  }
  if (*width != metadata.labels.size()) {
    throw Error(ErrorCode::LabelCountMismatch,
                std::to_string(metadata.labels.size()) + " labels but classifier has " +
                    std::to_string(*width) + " outputs");
  }
  for (const auto& entry : topology.manifest) {
    const NdArray* arr = weights.find(entry.name);
    if (!arr) throw Error(ErrorCode::MissingWeight, entry.name);
    if (arr->shape() != entry.shape) {
      throw Error(ErrorCode::ShapeMismatch, "weight " + entry.name + " decoded as " +
                                                shape_to_string(arr->shape()) + ", manifest says " +
                                                shape_to_string(entry.shape));
    }
  }
  return ModelBundle{std::move(metadata), std::move(topology.root), std::move(topology.manifest),
                     std::move(weights)};
}

std::size_t class_count(const ModelBundle& bundle) { return bundle.metadata.labels.size(); }

Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return bytes;
}

ModelBundle read_bundle_directory(const std::filesystem::path& dir) {
  auto as_text = [](const Bytes& b) { return std::string(b.begin(), b.end()); };
  Topology topo = parse_topology(as_text(read_file_bytes(dir / kModelFile)));
  Metadata meta = parse_metadata(as_text(read_file_bytes(dir / kMetadataFile)));
  std::map<std::string, Bytes> blobs;
  for (const auto& path : weight_paths(topo.manifest)) blobs[path] = read_file_bytes(dir / path);
  WeightStore weights = decode_weights(topo.manifest, blobs);
  return assemble_bundle(std::move(meta), std::move(topo), std::move(weights));
}

}  // namespace tminfer
