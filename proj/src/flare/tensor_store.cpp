#include "flare/tensor_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "flare/error.hpp"
#include "json.hpp"

namespace flare {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kMaxHeaderBytes = 1 << 20;
constexpr std::size_t kScanChunk = 1 << 16;

template <typename T>
T from_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

template <typename T>
T to_little(T v) {
  return from_little(v);
}

std::string name_of(const fs::path& p) { return p.filename().string(); }

struct Framing {
  std::vector<std::uint64_t> shape;
  std::uint64_t payload_offset = 0;
};

std::ifstream open_input(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, path.string() + " does not exist");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return in;
}

Framing read_framing(std::ifstream& in, const fs::path& path) {
  char magic[4] = {};
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw Error(ErrorCode::MagicMismatch, name_of(path) + ": missing FLTD magic");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in) throw Error(ErrorCode::MagicMismatch, name_of(path) + ": truncated preamble");
  version = from_little(version);
  header_len = from_little(header_len);
  if (version != kTensorVersion)
    throw Error(ErrorCode::MagicMismatch,
                name_of(path) + ": unsupported version " + std::to_string(version));
  if (header_len == 0 || header_len > kMaxHeaderBytes)
    throw Error(ErrorCode::MagicMismatch,
                name_of(path) + ": implausible header length " + std::to_string(header_len));

  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw Error(ErrorCode::MagicMismatch, name_of(path) + ": truncated header");

  Framing framing;
  try {
    const auto header = nlohmann::json::parse(text);
    if (header.at("dtype").get<std::string>() != "f32")
      throw Error(ErrorCode::MagicMismatch, name_of(path) + ": dtype must be f32");
    if (header.at("order").get<std::string>() != "row-major")
      throw Error(ErrorCode::MagicMismatch, name_of(path) + ": order must be row-major");
    framing.shape = header.at("shape").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MagicMismatch, name_of(path) + ": bad header: " + e.what());
  }
  framing.payload_offset = 16 + header_len;
  return framing;
}

std::uint64_t product(std::span<const std::uint64_t> shape) {
  std::uint64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

void check_payload_size(const fs::path& path, const Framing& framing) {
  const auto expected = 4 * product(framing.shape);
  const auto size = fs::file_size(path);
  const auto actual = size >= framing.payload_offset ? size - framing.payload_offset : 0;
  if (actual != expected)
    throw Error(ErrorCode::ShapeMismatch, name_of(path) + ": payload holds " +
                                              std::to_string(actual) + " bytes, shape needs " +
                                              std::to_string(expected));
}

void check_finite(const fs::path& path, std::span<const float> values, std::uint64_t base) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw Error(ErrorCode::NonFiniteValue,
                  name_of(path) + ": element " + std::to_string(base + i) + " is " +
                      (std::isnan(values[i]) ? "NaN" : "Inf"));
  }
}

void read_floats(std::ifstream& in, std::span<float> out) {
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : out) v = std::bit_cast<float>(from_little(std::bit_cast<std::uint32_t>(v)));
  }
}

std::string shape_string(std::span<const std::uint64_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<float> load_vector(const fs::path& path, std::uint32_t expected, std::uint32_t layer) {
  auto block = read_tensor(path);
  if (block.shape.size() != 1 || block.shape[0] != expected)
    throw Error(ErrorCode::ShapeMismatch, name_of(path) + ": shape " + shape_string(block.shape) +
                                              ", layer " + std::to_string(layer) + " expects [" +
                                              std::to_string(expected) + "]");
  return std::move(block.values);
}

LayerSpec default_names(LayerSpec spec) {
  const auto prefix = "layer_" + std::to_string(spec.index) + "_";
  if (spec.activations_file.empty()) spec.activations_file = prefix + "act.fltd";
  if (spec.bn_mean_file.empty()) spec.bn_mean_file = prefix + "bn_mean.fltd";
  if (spec.bn_var_file.empty()) spec.bn_var_file = prefix + "bn_var.fltd";
  return spec;
}

void check_variance(const LayerSpec& layer) {
  for (std::size_t c = 0; c < layer.bn_var.size(); ++c) {
    if (!(layer.bn_var[c] > 0.0f))
      throw Error(ErrorCode::NonPositiveVariance,
                  layer.bn_var_file + ": channel " + std::to_string(c) + " of layer " +
                      std::to_string(layer.index) + " has variance " +
                      std::to_string(layer.bn_var[c]));
  }
}

template <typename T>
T manifest_field(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, std::string("manifest.json: key '") + key + "': " +
                                                e.what());
  }
}

} // namespace

std::uint64_t TensorBlock::element_count() const { return product(shape); }

std::vector<std::uint64_t> read_tensor_shape(const fs::path& path) {
  auto in = open_input(path);
  auto framing = read_framing(in, path);
  check_payload_size(path, framing);
  return framing.shape;
}

TensorBlock read_tensor(const fs::path& path) {
  auto in = open_input(path);
  auto framing = read_framing(in, path);
  check_payload_size(path, framing);
  TensorBlock block;
  block.shape = framing.shape;
  block.values.resize(product(block.shape));
  read_floats(in, block.values);
  if (!in) throw Error(ErrorCode::IoFailure, "short read on " + path.string());
  check_finite(path, block.values, 0);
  return block;
}

void scan_tensor_finite(const fs::path& path) {
  auto in = open_input(path);
  auto framing = read_framing(in, path);
  check_payload_size(path, framing);
  std::vector<float> buffer(kScanChunk);
  std::uint64_t remaining = product(framing.shape);
  std::uint64_t base = 0;
  while (remaining > 0) {
    const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, kScanChunk));
    std::span<float> chunk(buffer.data(), n);
    read_floats(in, chunk);
    if (!in) throw Error(ErrorCode::IoFailure, "short read on " + path.string());
    check_finite(path, chunk, base);
    base += n;
    remaining -= n;
  }
}

void write_tensor(const fs::path& path, const TensorBlock& block) {
  if (block.values.size() != block.element_count())
    throw Error(ErrorCode::ShapeMismatch, name_of(path) + ": shape " + shape_string(block.shape) +
                                              " needs " + std::to_string(block.element_count()) +
                                              " values, got " +
                                              std::to_string(block.values.size()));
  ordered_json header;
  header["dtype"] = "f32";
  header["shape"] = block.shape;
  header["order"] = "row-major";
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  const auto version = to_little(kTensorVersion);
  const auto header_len = to_little(static_cast<std::uint64_t>(text.size()));
  out.write(kTensorMagic, 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(block.values.data()),
              static_cast<std::streamsize>(block.values.size() * sizeof(float)));
  } else {
    for (float v : block.values) {
      const auto bits = to_little(std::bit_cast<std::uint32_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + path.string());
}

TensorBlock DumpManifest::load_activations(std::size_t pos) const {
  const auto& layer = layers.at(pos);
  auto block = read_tensor(root / layer.activations_file);
  const std::vector<std::uint64_t> expected = {sample_count, layer.channels, layer.height,
                                               layer.width};
  if (block.shape != expected)
    throw Error(ErrorCode::ShapeMismatch, layer.activations_file + ": shape " +
                                              shape_string(block.shape) + ", expected " +
                                              shape_string(expected));
  return block;
}

DumpManifest read_dump(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw Error(ErrorCode::MissingFile, manifest_path.string() + " does not exist");

  nlohmann::json j;
  {
    std::ifstream in(manifest_path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidManifest, std::string("manifest.json: ") + e.what());
    }
  }

  DumpManifest m;
  m.root = dir;
  m.sample_count = manifest_field<std::uint64_t>(j, "sample_count");
  m.class_count = manifest_field<std::uint32_t>(j, "class_count");
  m.labels = manifest_field<std::vector<std::uint32_t>>(j, "labels");
  if (j.contains("truth_flags"))
    m.truth_flags = manifest_field<std::vector<std::uint8_t>>(j, "truth_flags");

  if (m.labels.size() != m.sample_count)
    throw Error(ErrorCode::InvalidManifest, "manifest.json: " + std::to_string(m.labels.size()) +
                                                " labels for sample_count " +
                                                std::to_string(m.sample_count));
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    if (m.labels[i] >= m.class_count)
      throw Error(ErrorCode::InvalidManifest, "manifest.json: label " + std::to_string(i) +
                                                  " is " + std::to_string(m.labels[i]) +
                                                  ", class_count " +
                                                  std::to_string(m.class_count));
  }
  if (m.truth_flags) {
    if (m.truth_flags->size() != m.sample_count)
      throw Error(ErrorCode::InvalidManifest, "manifest.json: truth_flags length " +
                                                  std::to_string(m.truth_flags->size()) +
                                                  " != sample_count");
    for (std::size_t i = 0; i < m.truth_flags->size(); ++i)
      if ((*m.truth_flags)[i] > 1)
        throw Error(ErrorCode::InvalidManifest,
                    "manifest.json: truth_flags[" + std::to_string(i) + "] is not 0/1");
  }

  const auto layers = manifest_field<nlohmann::json>(j, "layers");
  if (!layers.is_array() || layers.empty())
    throw Error(ErrorCode::InvalidManifest, "manifest.json: 'layers' must be a non-empty array");
  for (const auto& lj : layers) {
    LayerSpec layer;
    layer.index = manifest_field<std::uint32_t>(lj, "index");
    layer.channels = manifest_field<std::uint32_t>(lj, "channels");
    layer.height = manifest_field<std::uint32_t>(lj, "height");
    layer.width = manifest_field<std::uint32_t>(lj, "width");
    layer.bn_mean_file = manifest_field<std::string>(lj, "bn_mean_file");
    layer.bn_var_file = manifest_field<std::string>(lj, "bn_var_file");
    layer.activations_file = manifest_field<std::string>(lj, "activations_file");
    m.layers.push_back(std::move(layer));
  }
  std::sort(m.layers.begin(), m.layers.end(),
            [](const LayerSpec& a, const LayerSpec& b) { return a.index < b.index; });
  for (std::size_t pos = 0; pos < m.layers.size(); ++pos) {
    if (m.layers[pos].index != pos + 1)
      throw Error(ErrorCode::InvalidManifest,
                  "manifest.json: layer indices must be 1.." + std::to_string(m.layers.size()) +
                      " without gaps; found " + std::to_string(m.layers[pos].index) +
                      " at position " + std::to_string(pos + 1));
  }

  for (auto& layer : m.layers) {
    layer.bn_mean = load_vector(dir / layer.bn_mean_file, layer.channels, layer.index);
    layer.bn_var = load_vector(dir / layer.bn_var_file, layer.channels, layer.index);
    check_variance(layer);

    const auto act_path = dir / layer.activations_file;
    const auto shape = read_tensor_shape(act_path);
    const std::vector<std::uint64_t> expected = {m.sample_count, layer.channels, layer.height,
                                                 layer.width};
    if (shape != expected)
      throw Error(ErrorCode::ShapeMismatch, layer.activations_file + ": shape " +
                                                shape_string(shape) + ", layer " +
                                                std::to_string(layer.index) + " expects " +
                                                shape_string(expected));
    scan_tensor_finite(act_path);
  }
  return m;
}

fs::path write_dump(const DumpManifest& manifest, std::span<const TensorBlock> activations,
                    const fs::path& dir) {
  if (manifest.layers.empty())
    throw Error(ErrorCode::InvalidManifest, "a dump needs at least one layer");
  if (activations.size() != manifest.layers.size())
    throw Error(ErrorCode::ShapeMismatch, std::to_string(activations.size()) +
                                              " activation blocks for " +
                                              std::to_string(manifest.layers.size()) + " layers");
  if (manifest.labels.size() != manifest.sample_count)
    throw Error(ErrorCode::InvalidManifest, "labels length != sample_count");
  if (manifest.truth_flags && manifest.truth_flags->size() != manifest.sample_count)
    throw Error(ErrorCode::InvalidManifest, "truth_flags length != sample_count");

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());

  ordered_json j;
  j["sample_count"] = manifest.sample_count;
  j["class_count"] = manifest.class_count;
  auto layers = ordered_json::array();
  std::set<std::string> names;
  for (std::size_t pos = 0; pos < manifest.layers.size(); ++pos) {
    const auto layer = default_names(manifest.layers[pos]);
    if (layer.index != pos + 1)
      throw Error(ErrorCode::InvalidManifest, "layer indices must be 1..L in order");
    if (layer.bn_mean.size() != layer.channels || layer.bn_var.size() != layer.channels)
      throw Error(ErrorCode::ShapeMismatch,
                  "layer " + std::to_string(layer.index) + ": BN statistics length != channels");
    const std::vector<std::uint64_t> expected = {manifest.sample_count, layer.channels,
                                                 layer.height, layer.width};
    if (activations[pos].shape != expected)
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(layer.index) +
                                                ": activations shape " +
                                                shape_string(activations[pos].shape) +
                                                ", expected " + shape_string(expected));
    for (const auto* name : {&layer.activations_file, &layer.bn_mean_file, &layer.bn_var_file})
      if (!names.insert(*name).second)
        throw Error(ErrorCode::InvalidManifest, "file name '" + *name + "' used twice");

    write_tensor(dir / layer.activations_file, activations[pos]);
    write_tensor(dir / layer.bn_mean_file, TensorBlock{{layer.channels}, layer.bn_mean});
    write_tensor(dir / layer.bn_var_file, TensorBlock{{layer.channels}, layer.bn_var});

    ordered_json lj;
    lj["index"] = layer.index;
    lj["channels"] = layer.channels;
    lj["height"] = layer.height;
    lj["width"] = layer.width;
    lj["bn_mean_file"] = layer.bn_mean_file;
    lj["bn_var_file"] = layer.bn_var_file;
    lj["activations_file"] = layer.activations_file;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  j["labels"] = manifest.labels;
  if (manifest.truth_flags) j["truth_flags"] = *manifest.truth_flags;

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create manifest.json in " + dir.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed on manifest.json");
  return dir;
}

} // namespace flare
