#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fb4/pipeline.hpp"

namespace fb4 {

// Flat key=value config with [section] headers. Every key must be consumed
// by the loader; unknown keys are rejected.
class KvConfig {
public:
  static KvConfig parse(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw std::invalid_argument("config line " + std::to_string(lineno) +
                                      ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (cfg.values_.count(full))
        throw std::invalid_argument("config: duplicate key '" + full + "'");
      cfg.values_[full] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& dflt) {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double dflt) {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    return parse_double(key, it->second);
  }

  std::int64_t get_int(const std::string& key, std::int64_t dflt) {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    return parse_int(key, it->second);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    std::size_t pos = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(it->second, &pos);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: key '" + key + "': bad integer '" +
                                  it->second + "'");
    }
    if (pos != it->second.size())
      throw std::invalid_argument("config: key '" + key + "': bad integer '" +
                                  it->second + "'");
    return v;
  }

  bool get_bool(const std::string& key, bool dflt) {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::invalid_argument("config: key '" + key +
                                "': expected true/false, got '" + it->second +
                                "'");
  }

  std::vector<int> get_int_list(const std::string& key) {
    const auto it = values_.find(key);
    if (it == values_.end()) return {};
    consumed_.insert(key);
    std::vector<int> out;
    std::string token;
    std::istringstream ls(it->second);
    while (std::getline(ls, token, ',')) {
      token = trim(token);
      if (token.empty()) continue;
      out.push_back(static_cast<int>(parse_int(key, token)));
    }
    return out;
  }

  void reject_unconsumed() const {
    for (const auto& [key, value] : values_) {
      if (!consumed_.count(key))
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }

private:
  static std::string trim(std::string s) {
    const auto is_space = [](char c) {
      return c == ' ' || c == '\t' || c == '\r' || c == '\n';
    };
    while (!s.empty() && is_space(s.front())) s.erase(s.begin());
    while (!s.empty() && is_space(s.back())) s.pop_back();
    return s;
  }

  static double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &pos);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: key '" + key + "': bad number '" +
                                  v + "'");
    }
    if (pos != v.size())
      throw std::invalid_argument("config: key '" + key + "': bad number '" +
                                  v + "'");
    return out;
  }

  static std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    std::int64_t out = 0;
    try {
      out = std::stoll(v, &pos);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: key '" + key + "': bad integer '" +
                                  v + "'");
    }
    if (pos != v.size())
      throw std::invalid_argument("config: key '" + key + "': bad integer '" +
                                  v + "'");
    return out;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

namespace detail {

inline SelectionMode parse_mode(const std::string& s) {
  if (s == "grouped") return SelectionMode::Grouped;
  if (s == "exact") return SelectionMode::Exact;
  throw std::invalid_argument("config: mode must be grouped or exact, got '" +
                              s + "'");
}

inline ScoreTransform parse_transform(const std::string& s) {
  if (s == "raw") return ScoreTransform::Raw;
  if (s == "relu") return ScoreTransform::Relu;
  if (s == "abs") return ScoreTransform::Abs;
  throw std::invalid_argument("config: transform must be raw/relu/abs, got '" +
                              s + "'");
}

} // namespace detail

// Loads the simulate config. Defaults mirror the factorized 100-step setup.
inline RunConfig parse_run_config(const std::string& text) {
  KvConfig kv = KvConfig::parse(text);
  RunConfig cfg;

  cfg.scene.frames = static_cast<int>(kv.get_int("scene.frames", 8));
  cfg.scene.height = static_cast<int>(kv.get_int("scene.height", 16));
  cfg.scene.width = static_cast<int>(kv.get_int("scene.width", 16));
  cfg.scene.feature_dim = static_cast<int>(kv.get_int("scene.feature_dim", 64));
  cfg.scene.clusters = static_cast<int>(kv.get_int("scene.clusters", 3));
  cfg.scene.outlier_rate = kv.get_double("scene.outlier_rate", 0.05);
  cfg.scene.outlier_scale = kv.get_double("scene.outlier_scale", 10.0);
  cfg.scene.branch_split = kv.get_double("scene.branch_split", 0.5);
  const std::string attention = kv.get_string("scene.attention", "factorized");
  if (attention == "factorized")
    cfg.scene.factorized = true;
  else if (attention == "three_d")
    cfg.scene.factorized = false;
  else
    throw std::invalid_argument(
        "config: scene.attention must be factorized or three_d");

  cfg.layout.block_size = static_cast<int>(kv.get_int("quant.block_size", 32));
  if (cfg.layout.block_size != 16 && cfg.layout.block_size != 32)
    throw std::invalid_argument("config: quant.block_size must be 16 or 32");
  cfg.layout.num_groups = static_cast<int>(kv.get_int("quant.num_groups", 8));
  cfg.mode = detail::parse_mode(kv.get_string("quant.mode", "grouped"));

  cfg.decomp_targets = kv.get_int_list("decomp.targets");
  cfg.plan.token_tile = static_cast<int>(kv.get_int("decomp.token_tile", 4));
  const std::string branch_mode = kv.get_string("decomp.branch_mode", "split");
  if (branch_mode == "split")
    cfg.plan.branch_mode = BranchMode::Split;
  else if (branch_mode == "cond_only")
    cfg.plan.branch_mode = BranchMode::CondOnly;
  else
    throw std::invalid_argument(
        "config: decomp.branch_mode must be split or cond_only");
  cfg.plan.agg_tile = static_cast<int>(kv.get_int("decomp.agg_tile", 4));
  cfg.plan.transform =
      detail::parse_transform(kv.get_string("decomp.spatial_transform", "abs"));
  cfg.temporal_transform = detail::parse_transform(
      kv.get_string("decomp.temporal_transform", "relu"));

  cfg.seda_enabled = kv.get_bool("seda.enabled", true);
  cfg.seda_targets = kv.get_int_list("seda.targets");
  cfg.seda_tile = static_cast<int>(kv.get_int("seda.tile", 4));
  cfg.seda_window = static_cast<int>(kv.get_int("seda.window", 5));
  cfg.seda_temporal_window =
      static_cast<int>(kv.get_int("seda.temporal_window", 3));
  cfg.tau_spatial = kv.get_double("seda.tau_spatial", 8.0);
  cfg.tau_temporal = kv.get_double("seda.tau_temporal", 3.0);
  cfg.tau_3d = kv.get_double("seda.tau_3d", 5.0);
  cfg.seda_decompose_also = kv.get_bool("seda.decompose_also", false);

  cfg.schedule.total_steps = static_cast<int>(kv.get_int("schedule.steps", 100));
  cfg.schedule.skip_fraction = kv.get_double("schedule.skip_fraction", 0.2);
  cfg.schedule.update_period =
      static_cast<int>(kv.get_int("schedule.update_period", 10));
  cfg.schedule.final_fraction = kv.get_double("schedule.final_fraction", 0.1);

  cfg.seed = kv.get_u64("run.seed", 42);
  cfg.num_layers = static_cast<int>(kv.get_int("run.layers", 3));
  cfg.drift.early = kv.get_double("run.drift_early", 1.2);
  cfg.drift.mid = kv.get_double("run.drift_mid", 0.12);
  cfg.drift.late = kv.get_double("run.drift_late", 0.5);

  kv.reject_unconsumed();
  cfg.check();
  return cfg;
}

} // namespace fb4
