#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tminfer/ndarray.hpp"

// Parsing and validation of the three-file export bundle:
//   metadata.json  labels, image size, tool versions
//   model.json     layers-format topology plus weights manifest
//   weights.bin    concatenated little-endian float32 values
namespace tminfer {

inline constexpr std::string_view kModelFile = "model.json";
inline constexpr std::string_view kMetadataFile = "metadata.json";

using Bytes = std::vector<std::uint8_t>;

struct Metadata {
  std::vector<std::string> labels;
  int image_size = 0;
  std::string model_name;
  std::map<std::string, std::string> library_versions;
  std::string timestamp;
};

struct LayerSpec {
  std::string class_name;
  std::string name;
  nlohmann::json config = nlohmann::json::object();
  std::vector<LayerSpec> inner_layers;
  // Names of the layers feeding this one. Absent in the sequential form.
  std::optional<std::vector<std::string>> inbound;

  bool is_container() const;
};

struct WeightsManifestEntry {
  std::string name;
  Shape shape;
  std::string dtype;
  std::size_t group = 0;
  // Shard files of the owning manifest group, concatenated in this order.
  std::vector<std::string> paths;

  std::size_t byte_size() const { return element_count(shape) * sizeof(float); }
};

struct Topology {
  LayerSpec root;
  std::vector<WeightsManifestEntry> manifest;
};

// Decoded weight tensors keyed by manifest name. Keeps manifest order.
class WeightStore {
 public:
  void insert(const std::string& name, NdArray value);

  const NdArray* find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t size() const noexcept { return order_.size(); }
  const std::vector<std::string>& names() const noexcept { return order_; }
  std::size_t parameter_count() const;

 private:
  std::map<std::string, NdArray> index_;
  std::vector<std::string> order_;
};

struct ModelBundle {
  Metadata metadata;
  LayerSpec topology;
  std::vector<WeightsManifestEntry> manifest;
  WeightStore weights;
};

Metadata parse_metadata(std::string_view text);
Topology parse_topology(std::string_view text);

// Paths named by the manifest, in first-use order, without duplicates.
std::vector<std::string> weight_paths(std::span<const WeightsManifestEntry> manifest);

WeightStore decode_weights(std::span<const WeightsManifestEntry> manifest,
                           const std::map<std::string, Bytes>& blobs);

// Serializes the store back to per-path blobs following the manifest layout.
std::map<std::string, Bytes> encode_weights(std::span<const WeightsManifestEntry> manifest,
                                            const WeightStore& weights);

ModelBundle assemble_bundle(Metadata metadata, Topology topology, WeightStore weights);

std::size_t class_count(const ModelBundle& bundle);

// Reads model.json, metadata.json and every referenced weight file from `dir`.
ModelBundle read_bundle_directory(const std::filesystem::path& dir);

Bytes read_file_bytes(const std::filesystem::path& path);

}  // namespace tminfer
