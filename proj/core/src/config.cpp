// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fsdiff/schedule.hpp"

namespace fsdiff {

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "scratch") return TrainMode::kScratch;
  if (name == "finetune") return TrainMode::kFinetune;
  if (name == "pa") return TrainMode::kPa;
  throw std::invalid_argument("unknown training mode: " + name);
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kScratch: return "scratch";
    case TrainMode::kFinetune: return "finetune";
    case TrainMode::kPa: return "pa";
  }
  return "unknown";
}

double TrainConfig::resolved_beta_start() const {
  return beta_start > 0.0 ? beta_start : default_beta_start(T);
}

double TrainConfig::resolved_beta_end() const {
  return beta_end > 0.0 ? beta_end : default_beta_end(T);
}

void validate(const TrainConfig& cfg) {
  if (cfg.T < 1) throw std::invalid_argument("TrainConfig: T must be >= 1");
  if (cfg.iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be > 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be > 0");
  if (cfg.mode == TrainMode::kPa && cfg.batch_size < 2) {
    throw std::invalid_argument("TrainConfig: pa mode needs batch_size >= 2 (pairwise losses)");
  }
  if (!(cfg.learning_rate > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  }
  if (cfg.checkpoint_every < 0 || cfg.sample_every < 0 || cfg.sample_count < 1) {
    throw std::invalid_argument("TrainConfig: bad checkpoint/sample cadence");
  }
  validate(cfg.weights);
  validate(cfg.model);
  // Also validates the endpoint constraints.
  build_schedule(cfg.T, cfg.resolved_beta_start(), cfg.resolved_beta_end());
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t comment = line.find('#');
    if (comment != std::string::npos) line.erase(comment);
    const auto notspace = [](unsigned char c) { return !std::isspace(c); };
    const auto begin = std::find_if(line.begin(), line.end(), notspace);
    if (begin == line.end()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [&](std::string s) {
      const auto b = std::find_if(s.begin(), s.end(), notspace);
      const auto e = std::find_if(s.rbegin(), s.rend(), notspace).base();
      return b < e ? std::string(b, e) : std::string();
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    }
    kv[key] = value;
  }
  return kv;
}

KeyValues read_key_values_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str());
}

std::string serialize_key_values(const KeyValues& kv) {
  std::ostringstream out;
  for (const auto& [key, value] : kv) out << key << " = " << value << "\n";
  return out.str();
}

KeyValues to_key_values(const TrainConfig& cfg) {
  KeyValues kv;
  kv["mode"] = to_string(cfg.mode);
  kv["T"] = std::to_string(cfg.T);
  kv["beta_start"] = format_double(cfg.beta_start);
  kv["beta_end"] = format_double(cfg.beta_end);
  kv["learning_rate"] = format_double(cfg.learning_rate);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["iterations"] = std::to_string(cfg.iterations);
  kv["seed"] = std::to_string(cfg.seed);
  kv["lambda1"] = format_double(cfg.weights.lambda1);
  kv["lambda2"] = format_double(cfg.weights.lambda2);
  kv["lambda3"] = format_double(cfg.weights.lambda3);
  kv["lambda4"] = format_double(cfg.weights.lambda4);
  kv["flip_augment"] = cfg.flip_augment ? "true" : "false";
  kv["checkpoint_every"] = std::to_string(cfg.checkpoint_every);
  kv["sample_every"] = std::to_string(cfg.sample_every);
  kv["sample_count"] = std::to_string(cfg.sample_count);
  kv["image_size"] = std::to_string(cfg.model.image_size);
  kv["channels"] = std::to_string(cfg.model.channels);
  kv["base_width"] = std::to_string(cfg.model.base_width);
  kv["depth"] = std::to_string(cfg.model.depth);
  kv["learn_variance"] = cfg.model.learn_variance ? "true" : "false";
  kv["time_embed_dim"] = std::to_string(cfg.model.time_embed_dim);
  kv["attention"] = cfg.model.attention ? "true" : "false";
  kv["dropout"] = format_double(cfg.model.dropout);
  return kv;
}

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected bool, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected number, got '" + v + "'");
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const unsigned long long i = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

}  // namespace

TrainConfig train_config_from_key_values(const KeyValues& kv) {
  TrainConfig cfg;
  for (const auto& [key, v] : kv) {
    if (key == "mode") cfg.mode = train_mode_from_string(v);
    else if (key == "T") cfg.T = static_cast<int>(parse_int(key, v));
    else if (key == "beta_start") cfg.beta_start = parse_double(key, v);
    else if (key == "beta_end") cfg.beta_end = parse_double(key, v);
    else if (key == "learning_rate") cfg.learning_rate = parse_double(key, v);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, v));
    else if (key == "iterations") cfg.iterations = static_cast<int>(parse_int(key, v));
    else if (key == "seed") cfg.seed = parse_uint(key, v);
    else if (key == "lambda1") cfg.weights.lambda1 = parse_double(key, v);
    else if (key == "lambda2") cfg.weights.lambda2 = parse_double(key, v);
    else if (key == "lambda3") cfg.weights.lambda3 = parse_double(key, v);
    else if (key == "lambda4") cfg.weights.lambda4 = parse_double(key, v);
    else if (key == "flip_augment") cfg.flip_augment = parse_bool(key, v);
    else if (key == "checkpoint_every") cfg.checkpoint_every = static_cast<int>(parse_int(key, v));
    else if (key == "sample_every") cfg.sample_every = static_cast<int>(parse_int(key, v));
    else if (key == "sample_count") cfg.sample_count = static_cast<int>(parse_int(key, v));
    else if (key == "image_size") cfg.model.image_size = parse_int(key, v);
    else if (key == "channels") cfg.model.channels = parse_int(key, v);
    else if (key == "base_width") cfg.model.base_width = parse_int(key, v);
    else if (key == "depth") cfg.model.depth = static_cast<int>(parse_int(key, v));
    else if (key == "learn_variance") cfg.model.learn_variance = parse_bool(key, v);
    else if (key == "time_embed_dim") cfg.model.time_embed_dim = parse_int(key, v);
    else if (key == "attention") cfg.model.attention = parse_bool(key, v);
    else if (key == "dropout") cfg.model.dropout = parse_double(key, v);
    else throw std::invalid_argument("unknown config key: " + key);
  }
  return cfg;
}

}  // namespace fsdiff
