// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hdriqa/error.hpp"
#include "hdriqa/io.hpp"
#include "hdriqa/model.hpp"

namespace hdriqa {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'H', 'D', 'R', 'I', 'Q', 'A', 'W', '1'};
constexpr int kFormatVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xF];
  return s;
}

json config_json(const ModelConfig& c) {
  json j;
  j["patch_size"] = c.patch_size;
  j["enet_channels"] = c.enet_channels;
  j["pnet_channels"] = c.pnet_channels;
  j["pnet_dense"] = c.pnet_dense;
  j["pnet_pool"] = c.pnet_pool;
  j["dropout"] = c.dropout;
  j["l_peak"] = c.l_peak;
  j["d_scale"] = c.d_scale;
  j["t_epsilon"] = c.t_epsilon;
  j["domain"] = to_string(c.domain);
  j["window"] = {{"size", c.window.size}, {"sigma", c.window.sigma}};
  return j;
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  try {
    if (j.contains("patch_size")) c.patch_size = j.at("patch_size").get<int>();
    if (j.contains("enet_channels")) c.enet_channels = j.at("enet_channels").get<std::vector<int>>();
    if (j.contains("pnet_channels")) c.pnet_channels = j.at("pnet_channels").get<std::vector<int>>();
    if (j.contains("pnet_dense")) c.pnet_dense = j.at("pnet_dense").get<std::vector<int>>();
    if (j.contains("pnet_pool")) c.pnet_pool = j.at("pnet_pool").get<bool>();
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("l_peak")) c.l_peak = j.at("l_peak").get<double>();
    if (j.contains("d_scale")) c.d_scale = j.at("d_scale").get<double>();
    if (j.contains("t_epsilon")) c.t_epsilon = j.at("t_epsilon").get<double>();
    if (j.contains("domain")) c.domain = parse_input_domain(j.at("domain").get<std::string>());
    if (j.contains("window")) {
      c.window.size = j.at("window").at("size").get<int>();
      c.window.sigma = j.at("window").at("sigma").get<double>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

void append_tensors(const nn::ParameterSet& set, json& dir, std::string& payload) {
  for (const auto& p : set) {
    json t;
    t["name"] = p.name;
    t["shape"] = p.value.shape();
    t["offset"] = payload.size() / 8;
    t["count"] = p.value.size();
    t["trainable"] = p.trainable;
    dir.push_back(t);
    for (double v : p.value.values()) put_u64(payload, std::bit_cast<std::uint64_t>(v));
  }
}

void fill_tensors(nn::ParameterSet& set, const json& dir, const std::string& payload,
                  const std::string& origin) {
  const std::size_t total = payload.size() / 8;
  for (auto& p : set) {
    const json* entry = nullptr;
    for (const auto& t : dir) {
      if (t.at("name").get<std::string>() == p.name) entry = &t;
    }
    if (!entry) throw FormatError(origin + ": missing tensor '" + p.name + "'");
    const auto shape = entry->at("shape").get<std::vector<std::size_t>>();
    if (shape != p.value.shape()) {
      throw FormatError(origin + ": tensor '" + p.name + "' has shape mismatch");
    }
    const auto offset = entry->at("offset").get<std::size_t>();
    const auto count = entry->at("count").get<std::size_t>();
    if (count != p.value.size() || offset > total || total - offset < count) {
      throw FormatError(origin + ": tensor '" + p.name + "' lies outside the payload");
    }
    for (std::size_t i = 0; i < count; ++i) {
      p.value[i] = std::bit_cast<double>(get_u64(payload.data() + 8 * (offset + i)));
    }
    p.trainable = entry->at("trainable").get<bool>();
    p.value.check_finite(p.name);
  }
}

ModelBundle parse_bundle(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError(origin + ": not a weight bundle");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw FormatError(origin + ": truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    throw FormatError(origin + ": bad header: " + e.what());
  }
  const std::string payload = bytes.substr(16 + header_len);
  if (payload.size() % 8 != 0) throw FormatError(origin + ": payload is not a whole number of doubles");
  try {
    if (header.at("format_version").get<int>() != kFormatVersion) {
      throw FormatError(origin + ": unsupported format version");
    }
    const std::string want = header.at("checksum").get<std::string>();
    if (hex64(nn::fnv1a(payload.data(), payload.size())) != want) {
      throw FormatError(origin + ": checksum mismatch, file is corrupt");
    }
    ModelBundle bundle = create_bundle(config_from(header.at("config")), 0);
    if (header.at("fingerprint").get<std::string>() != bundle.config.fingerprint()) {
      throw FormatError(origin + ": fingerprint does not match the stored config");
    }
    const json& dir = header.at("tensors");
    fill_tensors(bundle.enet, dir, payload, origin);
    fill_tensors(bundle.pnet, dir, payload, origin);
    fill_tensors(bundle.mixing, dir, payload, origin);
    return bundle;
  } catch (const json::exception& e) {
    throw FormatError(origin + ": bad header: " + e.what());
  }
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(2); }

ModelConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
}

std::string serialize_bundle(const ModelBundle& bundle) {
  json dir = json::array();
  std::string payload;
  append_tensors(bundle.enet, dir, payload);
  append_tensors(bundle.pnet, dir, payload);
  append_tensors(bundle.mixing, dir, payload);
  json header;
  header["format_version"] = kFormatVersion;
  header["fingerprint"] = bundle.config.fingerprint();
  header["config"] = config_json(bundle.config);
  header["tensors"] = std::move(dir);
  header["checksum"] = hex64(nn::fnv1a(payload.data(), payload.size()));
  const std::string text = header.dump();
  std::string out(kMagic, 8);
  put_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_bundle(bundle));
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  return parse_bundle(read_bytes(path), path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path, const ModelConfig& expected) {
  ModelBundle bundle = load_bundle(path);
  if (bundle.config.fingerprint() != expected.fingerprint()) {
    throw ValidationError(path.string() + ": architecture fingerprint mismatch (file " +
                          bundle.config.fingerprint() + ", expected " + expected.fingerprint() + ")");
  }
  return bundle;
}

}  // namespace hdriqa
