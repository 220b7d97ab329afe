#pragma once

// Binary artifact formats. Every file is
//
//   magic[4] | version u32 LE | header_len u64 LE | JSON header | f32 LE tensors
//
// with the tensors concatenated in the order the header's "tensors" lists
// declare. Magic strings: "FKVM" (model checkpoint), "FKVZ" (gate weights),
// "FKVT" (per-layer training shard).

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fastkv/common.hpp"
#include "fastkv/gate.hpp"
#include "fastkv/model.hpp"

namespace fastkv {

using json = nlohmann::json;

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kPreambleBytes = 4 + 4 + 8;

struct FormatError : DataError {
  using DataError::DataError;
};

inline std::string to_string(HiddenTap t) { return t == HiddenTap::post_norm ? "post_norm" : "pre_norm_residual"; }
inline HiddenTap hidden_tap_from_string(const std::string& s) {
  if (s == "post_norm") return HiddenTap::post_norm;
  if (s == "pre_norm_residual") return HiddenTap::pre_norm_residual;
  throw ConfigError("unknown hidden_tap '" + s + "'");
}

inline json to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers},     {"d_model", c.d_model},   {"n_kv_heads", c.n_kv_heads},
              {"group_size", c.group_size}, {"d_head", c.d_head},     {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size}, {"rope_theta", c.rope_theta}, {"max_position", c.max_position},
              {"init_std", c.init_std},     {"hidden_tap", to_string(c.hidden_tap)}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
  c.group_size = j.at("group_size").get<std::size_t>();
  c.d_head = j.at("d_head").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.rope_theta = j.at("rope_theta").get<double>();
  c.max_position = j.at("max_position").get<std::size_t>();
  c.init_std = j.at("init_std").get<double>();
  c.hidden_tap = hidden_tap_from_string(j.at("hidden_tap").get<std::string>());
  return c;
}

inline json to_json(const GateConfig& c) {
  return json{{"d_model", c.d_model},   {"n_kv_heads", c.n_kv_heads},       {"group_size", c.group_size},
              {"d_low", c.d_low},       {"n_sinks", c.n_sinks},             {"variant", to_string(c.variant)},
              {"norm_eps", c.norm_eps}, {"per_head_norm", c.per_head_norm}, {"mlp_hidden", c.mlp_hidden},
              {"init_std", c.init_std}};
}

inline GateConfig gate_config_from_json(const json& j) {
  GateConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
  c.group_size = j.at("group_size").get<std::size_t>();
  c.d_low = j.at("d_low").get<std::size_t>();
  c.n_sinks = j.at("n_sinks").get<std::size_t>();
  c.variant = gate_variant_from_string(j.at("variant").get<std::string>());
  c.norm_eps = j.at("norm_eps").get<double>();
  c.per_head_norm = j.at("per_head_norm").get<bool>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.init_std = j.at("init_std").get<double>();
  return c;
}

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, std::span<const float> values) {
  const std::size_t at = out.size();
  out.resize(at + values.size() * 4);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + at, values.data(), values.size() * 4);
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (std::size_t b = 0; b < 4; ++b) out[at + i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
}

inline void get_f32(const unsigned char* p, std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), p, out.size() * 4);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + i * 4));
  }
}

inline std::size_t shape_elems(const json& shape) {
  std::size_t n = 1;
  for (const auto& d : shape) n *= d.get<std::size_t>();
  return n;
}

}  // namespace detail

/// Writes `bytes` to `path` through a sibling temp file and rename.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Encodes an artifact. `header["tensors"]` must list {name, shape} for each
/// entry of `tensors`, in order.
inline std::string encode_artifact(std::string_view magic, const json& header,
                                   const std::vector<std::span<const float>>& tensors) {
  const std::string head = header.dump();
  std::string out(magic);
  detail::put_le<std::uint32_t>(out, kFormatVersion);
  detail::put_le<std::uint64_t>(out, head.size());
  out += head;
  for (auto t : tensors) detail::put_f32(out, t);
  return out;
}

struct DecodedArtifact {
  json header;
  std::vector<std::vector<float>> tensors;  // one per header["tensors"] entry
};

inline DecodedArtifact decode_artifact(std::string_view magic, const std::string& bytes,
                                       const std::string& what = "artifact") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kPreambleBytes || std::memcmp(p, magic.data(), 4) != 0) {
    std::string found = bytes.substr(0, std::min<std::size_t>(4, bytes.size()));
    for (auto& ch : found)
      if (ch < 32 || ch > 126) ch = '?';
    throw FormatError(what + ": bad magic, expected \"" + std::string(magic) + "\", found \"" + found + "\"");
  }
  const auto version = detail::get_le<std::uint32_t>(p + 4);
  if (version != kFormatVersion)
    throw FormatError(what + ": unsupported " + std::string(magic) + " version " + std::to_string(version) +
                      " (expected " + std::to_string(kFormatVersion) + ")");
  const auto head_len = detail::get_le<std::uint64_t>(p + 8);
  if (head_len > bytes.size() - kPreambleBytes) throw FormatError(what + ": truncated header");
  DecodedArtifact out;
  try {
    out.header = json::parse(bytes.begin() + kPreambleBytes, bytes.begin() + kPreambleBytes + head_len);
  } catch (const json::exception& e) {
    throw FormatError(what + ": malformed JSON header: " + e.what());
  }
  std::size_t offset = kPreambleBytes + head_len;
  for (const auto& t : out.header.at("tensors")) {
    const std::size_t n = detail::shape_elems(t.at("shape"));
    if (bytes.size() - offset < n * 4)
      throw FormatError(what + ": truncated tensor '" + t.at("name").get<std::string>() + "'");
    std::vector<float> values(n);
    detail::get_f32(p + offset, values);
    offset += n * 4;
    out.tensors.push_back(std::move(values));
  }
  if (offset != bytes.size())
    throw FormatError(what + ": " + std::to_string(bytes.size() - offset) + " trailing bytes after tensors");
  return out;
}

// ---- FKVM: model checkpoint ------------------------------------------------

inline std::string encode_model(const TransformerWeights<float>& w) {
  json tensors = json::array();
  std::vector<std::span<const float>> data;
  w.for_each_tensor([&](const TensorInfo& info, std::span<const float> s) {
    tensors.push_back({{"name", info.name}, {"shape", info.shape}});
    data.push_back(s);
  });
  json header{{"config", to_json(w.config)}, {"seed", w.seed}, {"tensors", tensors}};
  return encode_artifact("FKVM", header, data);
}

inline TransformerWeights<float> decode_model(const std::string& bytes) {
  auto art = decode_artifact("FKVM", bytes, "model checkpoint");
  try {
    const ModelConfig config = model_config_from_json(art.header.at("config"));
    config.validate();
    auto w = TransformerWeights<float>::zeros(config);
    w.seed = art.header.at("seed").get<std::uint64_t>();
    std::size_t i = 0;
    const auto& listed = art.header.at("tensors");
    w.for_each_tensor([&](const TensorInfo& info, std::span<float> dst) {
      if (i >= listed.size() || listed[i].at("name") != info.name || art.tensors[i].size() != dst.size())
        throw FormatError("model checkpoint: tensor layout mismatch at '" + info.name + "'");
      std::copy(art.tensors[i].begin(), art.tensors[i].end(), dst.begin());
      ++i;
    });
    if (i != listed.size()) throw FormatError("model checkpoint: unexpected extra tensors");
    return w;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model checkpoint: bad header: ") + e.what());
  }
}

inline void save_model(const TransformerWeights<float>& w, const std::filesystem::path& path) {
  atomic_write(path, encode_model(w));
}
inline TransformerWeights<float> load_model(const std::filesystem::path& path) {
  return decode_model(read_file_bytes(path));
}

// ---- FKVZ: gate set --------------------------------------------------------

struct GateSet {
  std::vector<GateParams<float>> layers;
  std::uint64_t seed = 0;
  json provenance = json::object();

  GateVariant variant() const { return layers.empty() ? GateVariant::sink_attention : layers[0].config.variant; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& g : layers) n += g.parameter_count();
    return n;
  }
  friend bool operator==(const GateSet&, const GateSet&) = default;
};

inline std::string encode_gates(const GateSet& set) {
  json layers = json::array();
  json tensors = json::array();
  std::vector<std::span<const float>> data;
  for (std::size_t l = 0; l < set.layers.size(); ++l) {
    json names = json::array();
    set.layers[l].for_each_tensor([&](const TensorInfo& info, std::span<const float> s) {
      tensors.push_back({{"name", "layers." + std::to_string(l) + "." + info.name}, {"shape", info.shape}});
      names.push_back(info.name);
      data.push_back(s);
    });
    layers.push_back({{"gate_config", to_json(set.layers[l].config)}, {"tensors", names}});
  }
  json header{{"variant", to_string(set.variant())},
              {"seed", set.seed},
              {"provenance", set.provenance},
              {"layers", layers},
              {"tensors", tensors}};
  return encode_artifact("FKVZ", header, data);
}

inline GateSet decode_gates(const std::string& bytes) {
  auto art = decode_artifact("FKVZ", bytes, "gate file");
  try {
    GateSet set;
    set.seed = art.header.at("seed").get<std::uint64_t>();
    set.provenance = art.header.at("provenance");
    std::size_t i = 0;
    for (const auto& layer : art.header.at("layers")) {
      auto params = GateParams<float>::zeros(gate_config_from_json(layer.at("gate_config")));
      params.for_each_tensor([&](const TensorInfo& info, std::span<float> dst) {
        if (i >= art.tensors.size() || art.tensors[i].size() != dst.size())
          throw FormatError("gate file: tensor layout mismatch at '" + info.name + "'");
        std::copy(art.tensors[i].begin(), art.tensors[i].end(), dst.begin());
        ++i;
      });
      set.layers.push_back(std::move(params));
    }
    if (i != art.tensors.size()) throw FormatError("gate file: unexpected extra tensors");
    return set;
  } catch (const json::exception& e) {
    throw FormatError(std::string("gate file: bad header: ") + e.what());
  }
}

inline void save_gates(const GateSet& set, const std::filesystem::path& path) { atomic_write(path, encode_gates(set)); }
inline GateSet load_gates(const std::filesystem::path& path) { return decode_gates(read_file_bytes(path)); }

// ---- FKVT: training shard --------------------------------------------------

/// (hidden state, target) tuples for one layer. Row i of `hiddens` pairs
/// with row i of `targets`.
struct TrainingShard {
  std::size_t layer = 0;
  std::vector<std::size_t> sample_lengths;  // tuples contributed by each context
  Matrix<float> hiddens;                    // count × D
  Matrix<float> targets;                    // count × H
  json provenance = json::object();

  std::size_t count() const { return hiddens.rows(); }
  friend bool operator==(const TrainingShard&, const TrainingShard&) = default;
};

inline std::string encode_shard(const TrainingShard& s) {
  const std::size_t n = s.count();
  json header{{"layer", s.layer},
              {"n_heads", s.targets.cols()},
              {"d_model", s.hiddens.cols()},
              {"count", n},
              {"sample_lengths", s.sample_lengths},
              {"provenance", s.provenance},
              {"tensors",
               json::array({json{{"name", "hiddens"}, {"shape", {n, s.hiddens.cols()}}},
                            json{{"name", "targets"}, {"shape", {n, s.targets.cols()}}}})}};
  return encode_artifact("FKVT", header,
                         {std::span<const float>(s.hiddens.data()), std::span<const float>(s.targets.data())});
}

inline TrainingShard decode_shard(const std::string& bytes) {
  auto art = decode_artifact("FKVT", bytes, "training shard");
  try {
    TrainingShard s;
    s.layer = art.header.at("layer").get<std::size_t>();
    s.sample_lengths = art.header.at("sample_lengths").get<std::vector<std::size_t>>();
    s.provenance = art.header.at("provenance");
    const auto n = art.header.at("count").get<std::size_t>();
    const auto D = art.header.at("d_model").get<std::size_t>();
    const auto H = art.header.at("n_heads").get<std::size_t>();
    if (art.tensors.size() != 2 || art.tensors[0].size() != n * D || art.tensors[1].size() != n * H)
      throw FormatError("training shard: tensor sizes disagree with header counts");
    s.hiddens = Matrix<float>(n, D);
    s.targets = Matrix<float>(n, H);
    s.hiddens.data() = std::move(art.tensors[0]);
    s.targets.data() = std::move(art.tensors[1]);
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("training shard: bad header: ") + e.what());
  }
}

inline void save_shard(const TrainingShard& s, const std::filesystem::path& path) {
  atomic_write(path, encode_shard(s));
}
inline TrainingShard load_shard(const std::filesystem::path& path) { return decode_shard(read_file_bytes(path)); }

}  // namespace fastkv
