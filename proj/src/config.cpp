#include "rfp/config.hpp"

#include <openssl/sha.h>

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

namespace rfp::config {

void RunConfig::validate() const {
  try {
    net.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (total_epochs == 0) throw ConfigError("total_epochs must be positive");
  if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
  if (val_every == 0) throw ConfigError("val_every must be positive");
  if (augment.flip_probability < 0 || augment.flip_probability > 1) {
    throw ConfigError("flip_probability must be in [0, 1]");
  }
  if (augment.max_rotation_deg < 0) throw ConfigError("max_rotation_deg must be non-negative");
  try {
    synthetic_spec().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

data::SyntheticSpec RunConfig::synthetic_spec() const {
  data::SyntheticSpec s;
  s.seed = seed;
  s.volume_shape = net.input_shape;
  s.num_structures = net.num_classes - 1;
  s.contrast_delta = contrast_delta;
  s.noise_sigma = noise_sigma;
  s.adjacency = adjacency;
  s.spacing = spacing;
  return s;
}

bool is_path_key(const std::string& key) {
  return key == "train_manifest" || key == "val_manifest" || key == "output_dir";
}

namespace {

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <std::size_t N, typename T>
std::string list(const std::array<T, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) out += num(a[i]);
    else out += std::to_string(a[i]);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean (0/1/true/false)");
}

template <std::size_t N, typename F>
auto parse_list(const std::string& key, const std::string& v, F parse_one) {
  std::array<decltype(parse_one(key, v)), N> out{};
  std::size_t i = 0, start = 0;
  for (;;) {
    const std::size_t comma = v.find(',', start);
    if (i >= N) throw ConfigError("config key '" + key + "' expects " + std::to_string(N) + " values");
    out[i++] = parse_one(key, v.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (i != N) throw ConfigError("config key '" + key + "' expects " + std::to_string(N) + " values");
  return out;
}

}  // namespace

std::map<std::string, std::string> to_map(const RunConfig& c) {
  const net::NetworkConfig& n = c.net;
  return {
      {"input_shape", list(n.input_shape)},
      {"stage_channels", list(n.stage_channels)},
      {"num_classes", std::to_string(n.num_classes)},
      {"edge_branch", n.edge_branch ? "1" : "0"},
      {"esc_count", std::to_string(n.esc_count)},
      {"dag_count", std::to_string(n.dag_count)},
      {"neighborhood", std::string(graph::neighborhood_name(n.neighborhood))},
      {"fusion", std::string(head::fusion_name(n.fusion))},
      {"lambda_decoder", num(n.lambda_decoder)},
      {"lambda_final", num(n.lambda_final)},
      {"lambda_edge", num(n.lambda_edge)},
      {"bn_momentum", num(n.bn.momentum)},
      {"bn_eps", num(n.bn.eps)},
      {"total_epochs", std::to_string(c.total_epochs)},
      {"base_lr", num(c.base_lr)},
      {"weight_decay", num(c.weight_decay)},
      {"batch_size", std::to_string(c.batch_size)},
      {"seed", std::to_string(c.seed)},
      {"edge_mode", std::string(edge::edge_mode_name(c.edge_mode))},
      {"flip_probability", num(c.augment.flip_probability)},
      {"max_rotation_deg", num(c.augment.max_rotation_deg)},
      {"checkpoint_every", std::to_string(c.checkpoint_every)},
      {"val_every", std::to_string(c.val_every)},
      {"contrast_delta", num(c.contrast_delta)},
      {"noise_sigma", num(c.noise_sigma)},
      {"adjacency", c.adjacency ? "1" : "0"},
      {"spacing", list(c.spacing)},
      {"train_manifest", c.train_manifest},
      {"val_manifest", c.val_manifest},
      {"output_dir", c.output_dir},
  };
}

RunConfig from_map(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  net::NetworkConfig& n = c.net;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto size = [](const std::string& k, const std::string& v) { return std::size_t(parse_uint(k, v)); };
  const std::map<std::string, Setter> setters{
      {"input_shape", [&](auto& k, auto& v) { n.input_shape = parse_list<3>(k, v, size); }},
      {"stage_channels", [&](auto& k, auto& v) { n.stage_channels = parse_list<5>(k, v, size); }},
      {"num_classes", [&](auto& k, auto& v) { n.num_classes = size(k, v); }},
      {"edge_branch", [&](auto& k, auto& v) { n.edge_branch = parse_bool(k, v); }},
      {"esc_count", [&](auto& k, auto& v) { n.esc_count = size(k, v); }},
      {"dag_count", [&](auto& k, auto& v) { n.dag_count = size(k, v); }},
      {"neighborhood",
       [&](auto& k, auto& v) {
         try {
           n.neighborhood = graph::parse_neighborhood(v);
         } catch (const std::invalid_argument&) {
           throw ConfigError("config key '" + k + "': expected four or eight, got '" + v + "'");
         }
       }},
      {"fusion",
       [&](auto& k, auto& v) {
         try {
           n.fusion = head::parse_fusion(v);
         } catch (const std::invalid_argument&) {
           throw ConfigError("config key '" + k + "': expected sum or concat, got '" + v + "'");
         }
       }},
      {"lambda_decoder", [&](auto& k, auto& v) { n.lambda_decoder = parse_double(k, v); }},
      {"lambda_final", [&](auto& k, auto& v) { n.lambda_final = parse_double(k, v); }},
      {"lambda_edge", [&](auto& k, auto& v) { n.lambda_edge = parse_double(k, v); }},
      {"bn_momentum", [&](auto& k, auto& v) { n.bn.momentum = parse_double(k, v); }},
      {"bn_eps", [&](auto& k, auto& v) { n.bn.eps = parse_double(k, v); }},
      {"total_epochs", [&](auto& k, auto& v) { c.total_epochs = size(k, v); }},
      {"base_lr", [&](auto& k, auto& v) { c.base_lr = parse_double(k, v); }},
      {"weight_decay", [&](auto& k, auto& v) { c.weight_decay = parse_double(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { c.batch_size = size(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = parse_uint(k, v); }},
      {"edge_mode",
       [&](auto& k, auto& v) {
         try {
           c.edge_mode = edge::parse_edge_mode(v);
         } catch (const std::invalid_argument&) {
           throw ConfigError("config key '" + k + "': expected canny or transition, got '" + v + "'");
         }
       }},
      {"flip_probability", [&](auto& k, auto& v) { c.augment.flip_probability = parse_double(k, v); }},
      {"max_rotation_deg", [&](auto& k, auto& v) { c.augment.max_rotation_deg = parse_double(k, v); }},
      {"checkpoint_every", [&](auto& k, auto& v) { c.checkpoint_every = size(k, v); }},
      {"val_every", [&](auto& k, auto& v) { c.val_every = size(k, v); }},
      {"contrast_delta", [&](auto& k, auto& v) { c.contrast_delta = parse_double(k, v); }},
      {"noise_sigma", [&](auto& k, auto& v) { c.noise_sigma = parse_double(k, v); }},
      {"adjacency", [&](auto& k, auto& v) { c.adjacency = parse_bool(k, v); }},
      {"spacing", [&](auto& k, auto& v) { c.spacing = parse_list<3>(k, v, parse_double); }},
      {"train_manifest", [&](auto&, auto& v) { c.train_manifest = v; }},
      {"val_manifest", [&](auto&, auto& v) { c.val_manifest = v; }},
      {"output_dir", [&](auto&, auto& v) { c.output_dir = v; }},
  };
  for (const auto& [k, v] : kv) {
    auto it = setters.find(k);
    if (it == setters.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second(k, v);
  }
  return c;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::string format_kv(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::string canonical_text(const RunConfig& cfg) {
  auto kv = to_map(cfg);
  for (auto it = kv.begin(); it != kv.end();) {
    if (is_path_key(it->first)) it = kv.erase(it);
    else ++it;
  }
  return format_kv(kv);
}

Digest config_digest(const RunConfig& cfg) {
  const std::string text = canonical_text(cfg);
  Digest d{};
  SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), d.data());
  return d;
}

std::string digest_hex(const Digest& d) {
  std::string out;
  char buf[3];
  for (std::uint8_t b : d) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    out += buf;
  }
  return out;
}

}  // namespace rfp::config
