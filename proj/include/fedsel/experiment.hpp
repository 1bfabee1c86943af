#pragma once

// Plans, orchestration, and metrics persistence.
//
// A plan is a flat key/value file (TOML-style sections or the equivalent
// JSON object tree) naming a dataset, a partition, a federation config, and
// a list of strategy specs. run_plan executes every (strategy x repeat)
// cell, persisting each one to its own CSV under <out>/cells/ with an
// atomic tmp+rename, so an interrupted plan resumes by skipping the cells
// whose files already exist. The merged table is re-read from those files,
// which makes the merged metrics.csv byte-identical whether or not the run
// was interrupted.
//
// Strategy specs are strings:
//
//   longfed | divfl | random | powd | afl
//
// optionally with arguments and a fairness wrapper, e.g.
//
//   powd(d=20)        afl(temp=0.5)        random+fair(slack=2)
//
// Argument lists use ';' between entries so specs never contain commas and
// the CSV stays quote-free.

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "federation.hpp"
#include "format.hpp"
#include "partition.hpp"
#include "quadratics.hpp"
#include "rng.hpp"

namespace fedsel {

// ---------------------------------------------------------------------------
// Strategy specs

inline StrategyConfig parse_strategy_spec(const std::string& spec) {
  const auto parse_args = [&spec](const std::string& body) {
    std::map<std::string, std::string> kv;
    std::string item;
    std::istringstream in(body);
    while (std::getline(in, item, ';')) {
      const auto eq = item.find('=');
      require_config(eq != std::string::npos,
                     "strategy spec '" + spec + "': argument '" + item + "' is not key=value");
      kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return kv;
  };
  const auto to_num = [&spec](const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    require_config(end && *end == '\0' && !v.empty(),
                   "strategy spec '" + spec + "': bad numeric value for '" + key + "'");
    return x;
  };

  std::string base = spec;
  std::string fair_part;
  const auto plus = spec.find("+fair");
  if (plus != std::string::npos) {
    base = spec.substr(0, plus);
    fair_part = spec.substr(plus + 5);
  }

  std::string name = base;
  std::map<std::string, std::string> args;
  const auto paren = base.find('(');
  if (paren != std::string::npos) {
    require_config(base.back() == ')', "strategy spec '" + spec + "': unbalanced '('");
    name = base.substr(0, paren);
    args = parse_args(base.substr(paren + 1, base.size() - paren - 2));
  }

  StrategyConfig cfg;
  if (name == "longfed")
    cfg.kind = StrategyKind::LongFed;
  else if (name == "divfl")
    cfg.kind = StrategyKind::DivFL;
  else if (name == "random")
    cfg.kind = StrategyKind::Random;
  else if (name == "powd")
    cfg.kind = StrategyKind::PowerOfChoice;
  else if (name == "afl")
    cfg.kind = StrategyKind::LossGuided;
  else
    throw ConfigError("unknown strategy '" + name + "' in spec '" + spec + "'");

  for (const auto& [k, v] : args) {
    if (k == "d" && cfg.kind == StrategyKind::PowerOfChoice)
      cfg.d_candidates = static_cast<int>(to_num(k, v));
    else if (k == "temp" && cfg.kind == StrategyKind::LossGuided)
      cfg.softmax_temperature = to_num(k, v);
    else
      throw ConfigError("strategy spec '" + spec + "': unknown argument '" + k + "'");
  }

  if (plus != std::string::npos) {
    cfg.fair_wrapper = true;
    if (!fair_part.empty()) {
      require_config(fair_part.front() == '(' && fair_part.back() == ')',
                     "strategy spec '" + spec + "': malformed +fair arguments");
      for (const auto& [k, v] : parse_args(fair_part.substr(1, fair_part.size() - 2))) {
        if (k == "slack")
          cfg.fair_slack = static_cast<int>(to_num(k, v));
        else
          throw ConfigError("strategy spec '" + spec + "': unknown +fair argument '" + k + "'");
      }
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Plan files

struct DatasetPlan {
  std::string kind = "quadratics";  // quadratics | blobs | digits | idx | cifar10
  // quadratics
  int dim = 10;
  double heterogeneity = 0.5;
  int clusters = 1;
  double center_spread = 2.0;
  // blobs
  int samples = 1000;
  int classes = 10;
  double spread = 1.0;
  int eval_samples = 0;
  // digits
  int per_class = 50;
  double noise = 2.0;
  int eval_per_class = 0;
  // idx / cifar10
  std::string images, labels, eval_images, eval_labels;
  std::vector<std::string> batches, eval_batches;
};

struct ExperimentPlan {
  std::string name = "plan";
  uint64_t seed = 1;
  int repeats = 1;
  std::string out_dir;  // resolved against $FEDSEL_OUT when empty
  std::vector<std::string> strategies;
  DatasetPlan dataset;
  PartitionSpec partition;  // seed is stamped per repeat
  FederationConfig fed;     // seed and strategy are stamped per cell
};

namespace detail {

struct PlanValue {
  enum class Kind { Str, Int, Float, Bool, Arr };
  Kind kind = Kind::Str;
  std::string s;
  uint64_t i = 0;
  double f = 0.0;
  bool b = false;
  std::vector<PlanValue> arr;
};

using PlanMap = std::map<std::string, PlanValue>;

inline std::string plan_trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) a++;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) b--;
  return s.substr(a, b - a);
}

inline PlanValue parse_plan_scalar(const std::string& raw, int lineno);

inline PlanValue parse_plan_value(const std::string& raw, int lineno) {
  const std::string v = plan_trim(raw);
  require_config(!v.empty(), "plan line " + std::to_string(lineno) + ": missing value");
  if (v.front() == '[') {
    require_config(v.back() == ']',
                   "plan line " + std::to_string(lineno) + ": unterminated array");
    PlanValue out;
    out.kind = PlanValue::Kind::Arr;
    std::string body = v.substr(1, v.size() - 2);
    // split on commas outside quotes
    std::string cur;
    bool in_str = false;
    for (char c : body) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        if (!plan_trim(cur).empty()) out.arr.push_back(parse_plan_scalar(cur, lineno));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!plan_trim(cur).empty()) out.arr.push_back(parse_plan_scalar(cur, lineno));
    return out;
  }
  return parse_plan_scalar(v, lineno);
}

inline PlanValue parse_plan_scalar(const std::string& raw, int lineno) {
  const std::string v = plan_trim(raw);
  PlanValue out;
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
    out.kind = PlanValue::Kind::Str;
    for (size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        i++;
        out.s += v[i];
      } else {
        out.s += v[i];
      }
    }
    return out;
  }
  if (v == "true" || v == "false") {
    out.kind = PlanValue::Kind::Bool;
    out.b = v == "true";
    return out;
  }
  const bool integral = v.find_first_of(".eE") == std::string::npos;
  char* end = nullptr;
  if (integral && v.find('-') == std::string::npos) {
    out.kind = PlanValue::Kind::Int;
    out.i = std::strtoull(v.c_str(), &end, 10);
  } else {
    out.kind = PlanValue::Kind::Float;
    out.f = std::strtod(v.c_str(), &end);
  }
  require_config(end && *end == '\0',
                 "plan line " + std::to_string(lineno) + ": cannot parse value '" + v + "'");
  return out;
}

inline PlanMap parse_plan_toml(std::istream& in) {
  PlanMap out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    // strip comments outside quotes
    bool in_str = false;
    for (size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_str = !in_str;
      if (line[i] == '#' && !in_str) {
        line = line.substr(0, i);
        break;
      }
    }
    const std::string t = plan_trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      require_config(t.back() == ']', "plan line " + std::to_string(lineno) + ": bad section");
      section = plan_trim(t.substr(1, t.size() - 2));
      require_config(!section.empty(),
                     "plan line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const auto eq = t.find('=');
    require_config(eq != std::string::npos,
                   "plan line " + std::to_string(lineno) + ": expected key = value");
    std::string key = plan_trim(t.substr(0, eq));
    require_config(!key.empty(), "plan line " + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    require_config(out.count(key) == 0, "plan: duplicate key '" + key + "'");
    out[key] = parse_plan_value(t.substr(eq + 1), lineno);
  }
  return out;
}

inline void flatten_json(const nlohmann::json& j, const std::string& prefix, PlanMap& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten_json(v, key, out);
      continue;
    }
    PlanValue pv;
    const auto scalar = [](const nlohmann::json& s) {
      PlanValue p;
      if (s.is_string()) {
        p.kind = PlanValue::Kind::Str;
        p.s = s.get<std::string>();
      } else if (s.is_boolean()) {
        p.kind = PlanValue::Kind::Bool;
        p.b = s.get<bool>();
      } else if (s.is_number_integer() || s.is_number_unsigned()) {
        p.kind = PlanValue::Kind::Int;
        p.i = s.get<uint64_t>();
      } else if (s.is_number_float()) {
        p.kind = PlanValue::Kind::Float;
        p.f = s.get<double>();
      } else {
        throw ConfigError("plan json: unsupported value type");
      }
      return p;
    };
    if (v.is_array()) {
      pv.kind = PlanValue::Kind::Arr;
      for (const auto& e : v) pv.arr.push_back(scalar(e));
    } else {
      pv = scalar(v);
    }
    out[key] = pv;
  }
}

/// Typed extraction with unknown-key rejection.
class PlanReader {
 public:
  explicit PlanReader(PlanMap m) : map_(std::move(m)) {}

  bool has(const std::string& key) {
    used_.insert(key);
    return map_.count(key) > 0;
  }
  std::string str(const std::string& key, const std::string& dflt) {
    if (!has(key)) return dflt;
    const PlanValue& v = map_.at(key);
    require_config(v.kind == PlanValue::Kind::Str, "plan: '" + key + "' must be a string");
    return v.s;
  }
  double num(const std::string& key, double dflt) {
    if (!has(key)) return dflt;
    const PlanValue& v = map_.at(key);
    if (v.kind == PlanValue::Kind::Int) return static_cast<double>(v.i);
    require_config(v.kind == PlanValue::Kind::Float, "plan: '" + key + "' must be a number");
    return v.f;
  }
  int integer(const std::string& key, int dflt) {
    if (!has(key)) return dflt;
    const PlanValue& v = map_.at(key);
    require_config(v.kind == PlanValue::Kind::Int, "plan: '" + key + "' must be an integer");
    return static_cast<int>(v.i);
  }
  uint64_t u64(const std::string& key, uint64_t dflt) {
    if (!has(key)) return dflt;
    const PlanValue& v = map_.at(key);
    require_config(v.kind == PlanValue::Kind::Int, "plan: '" + key + "' must be an integer");
    return v.i;
  }
  bool boolean(const std::string& key, bool dflt) {
    if (!has(key)) return dflt;
    const PlanValue& v = map_.at(key);
    require_config(v.kind == PlanValue::Kind::Bool, "plan: '" + key + "' must be a bool");
    return v.b;
  }
  std::vector<std::string> str_list(const std::string& key) {
    if (!has(key)) return {};
    const PlanValue& v = map_.at(key);
    require_config(v.kind == PlanValue::Kind::Arr, "plan: '" + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& e : v.arr) {
      require_config(e.kind == PlanValue::Kind::Str,
                     "plan: '" + key + "' must be an array of strings");
      out.push_back(e.s);
    }
    return out;
  }
  void reject_unknown() const {
    for (const auto& [k, v] : map_)
      if (used_.count(k) == 0) throw ConfigError("plan: unknown key '" + k + "'");
  }

 private:
  PlanMap map_;
  std::set<std::string> used_;
};

}  // namespace detail

inline ExperimentPlan plan_from_values(detail::PlanMap values) {
  detail::PlanReader r(std::move(values));
  ExperimentPlan p;
  p.name = r.str("name", "plan");
  p.seed = r.u64("seed", 1);
  p.repeats = r.integer("repeats", 1);
  p.out_dir = r.str("out", "");
  p.strategies = r.str_list("strategies");
  require_config(!p.strategies.empty(), "plan: needs a non-empty 'strategies' array");
  require_config(p.repeats >= 1, "plan: repeats must be >= 1");
  for (const auto& s : p.strategies) parse_strategy_spec(s);  // validate early
  {
    std::set<std::string> seen;
    for (const auto& s : p.strategies)
      require_config(seen.insert(s).second, "plan: duplicate strategy '" + s + "'");
  }

  DatasetPlan& d = p.dataset;
  d.kind = r.str("dataset.kind", "quadratics");
  d.dim = r.integer("dataset.dim", d.kind == "quadratics" ? 10 : 8);
  d.heterogeneity = r.num("dataset.heterogeneity", 0.5);
  d.clusters = r.integer("dataset.clusters", 1);
  d.center_spread = r.num("dataset.center_spread", 2.0);
  d.samples = r.integer("dataset.samples", 1000);
  d.classes = r.integer("dataset.classes", 10);
  d.spread = r.num("dataset.spread", 1.0);
  d.eval_samples = r.integer("dataset.eval_samples", 0);
  d.per_class = r.integer("dataset.per_class", 50);
  d.noise = r.num("dataset.noise", 2.0);
  d.eval_per_class = r.integer("dataset.eval_per_class", 0);
  d.images = r.str("dataset.images", "");
  d.labels = r.str("dataset.labels", "");
  d.eval_images = r.str("dataset.eval_images", "");
  d.eval_labels = r.str("dataset.eval_labels", "");
  d.batches = r.str_list("dataset.batches");
  d.eval_batches = r.str_list("dataset.eval_batches");
  require_config(d.kind == "quadratics" || d.kind == "blobs" || d.kind == "digits" ||
                     d.kind == "idx" || d.kind == "cifar10",
                 "plan: unknown dataset.kind '" + d.kind + "'");

  const std::string scheme = r.str("partition.scheme", "iid");
  if (scheme == "iid")
    p.partition.scheme = PartitionScheme::Iid;
  else if (scheme == "1spc")
    p.partition.scheme = PartitionScheme::OneShardPerClient;
  else if (scheme == "2spc")
    p.partition.scheme = PartitionScheme::TwoShardsPerClient;
  else if (scheme == "dirichlet")
    p.partition.scheme = PartitionScheme::Dirichlet;
  else
    throw ConfigError("plan: unknown partition.scheme '" + scheme + "'");
  p.partition.alpha = r.num("partition.alpha", 0.8);

  FederationConfig& f = p.fed;
  f.n_clients = r.integer("federation.n_clients", 100);
  p.partition.n_clients = f.n_clients;
  f.subset_size = r.integer("federation.subset_size", 10);
  f.rounds = r.integer("federation.rounds", 100);
  f.local_epochs = r.integer("federation.local_epochs", 3);
  f.batch_size = r.integer("federation.batch_size", 64);
  const std::string sched = r.str("federation.lr_schedule", "constant");
  if (sched == "constant")
    f.lr.kind = LrKind::Constant;
  else if (sched == "diminishing")
    f.lr.kind = LrKind::Diminishing;
  else
    throw ConfigError("plan: unknown federation.lr_schedule '" + sched + "'");
  f.lr.eta = r.num("federation.lr", 0.005);
  f.lr.beta = r.num("federation.lr_beta", 1.0);
  f.lr.gamma = r.num("federation.lr_gamma", 10.0);
  f.V = r.num("federation.V", 0.8);
  f.epsilon = r.num("federation.epsilon", 0.3);
  f.delta = r.num("federation.delta", 0.01);
  const std::string arch =
      r.str("federation.arch", d.kind == "quadratics" ? "quadratic" : "logistic");
  if (arch == "quadratic")
    f.arch = Arch::Quadratic;
  else if (arch == "linreg")
    f.arch = Arch::LinearRegression;
  else if (arch == "logistic")
    f.arch = Arch::LogisticRegression;
  else if (arch == "mlp")
    f.arch = Arch::Mlp;
  else
    throw ConfigError("plan: unknown federation.arch '" + arch + "'");
  const std::string conv = r.str("federation.convention", "displacement");
  if (conv == "displacement")
    f.convention = GradientConvention::Displacement;
  else if (conv == "laststep")
    f.convention = GradientConvention::LastStep;
  else
    throw ConfigError("plan: unknown federation.convention '" + conv + "'");
  const std::string norm = r.str("federation.norm", "unsquared");
  if (norm == "unsquared")
    f.strategy.norm_mode = NormMode::Unsquared;
  else if (norm == "squared")
    f.strategy.norm_mode = NormMode::Squared;
  else
    throw ConfigError("plan: unknown federation.norm '" + norm + "'");
  f.count_bootstrap = r.boolean("federation.count_bootstrap", false);
  f.bootstrap_update = r.boolean("federation.bootstrap_update", true);
  f.record_timings = r.boolean("federation.record_timings", false);
  f.refresh_period = r.integer("federation.refresh_period", 0);
  f.eval_stride = r.integer("federation.eval_stride", 1);

  require_config(d.kind != "quadratics" || f.arch == Arch::Quadratic,
                 "plan: quadratics dataset requires federation.arch = \"quadratic\"");
  require_config(f.arch != Arch::Quadratic || d.kind == "quadratics",
                 "plan: quadratic arch requires dataset.kind = \"quadratics\"");
  r.reject_unknown();
  return p;
}

inline ExperimentPlan parse_plan(const std::string& path) {
  std::ifstream in(path);
  require_config(in.good(), "cannot open plan file '" + path + "'");
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("plan json parse error: " + std::string(e.what()));
    }
    require_config(j.is_object(), "plan json: top level must be an object");
    detail::PlanMap m;
    detail::flatten_json(j, "", m);
    return plan_from_values(std::move(m));
  }
  return plan_from_values(detail::parse_plan_toml(in));
}

// ---------------------------------------------------------------------------
// Metrics table and CSV

inline const char* kMetricsHeader =
    "strategy,repeat,round,loss,accuracy,dub,sigma,max_Z,max_Q,select_ms,round_ms,"
    "selected_bitmap_hex";

struct MetricsRow {
  std::string strategy;
  int repeat = 0;
  int round = 0;
  double loss = 0.0;
  std::optional<double> accuracy;
  double dub_value = 0.0;
  double sigma = 0.0;
  double max_Z = 0.0;
  double max_Q = 0.0;
  std::optional<double> select_ms, round_ms;
  std::vector<uint8_t> selected;
};

struct MetricsTable {
  int schema_version = 1;
  std::vector<MetricsRow> rows;
};

inline std::string bitmap_to_hex(const std::vector<uint8_t>& bits) {
  require_internal(!bits.empty(), "bitmap_to_hex: empty bitmap");
  const size_t digits = (bits.size() + 3) / 4;
  std::string out(digits, '0');
  for (size_t i = 0; i < bits.size(); ++i) {
    if (!bits[i]) continue;
    const size_t nibble = i / 4;
    int v = out[digits - 1 - nibble];
    v = (v >= 'a' ? v - 'a' + 10 : v - '0') | (1 << (i % 4));
    out[digits - 1 - nibble] = static_cast<char>(v < 10 ? '0' + v : 'a' + v - 10);
  }
  return out;
}

inline std::vector<uint8_t> hex_to_bitmap(const std::string& hex) {
  require_config(!hex.empty(), "bitmap hex: empty");
  std::vector<uint8_t> bits(hex.size() * 4, 0);
  for (size_t d = 0; d < hex.size(); ++d) {
    const char c = hex[hex.size() - 1 - d];
    int v;
    if (c >= '0' && c <= '9')
      v = c - '0';
    else if (c >= 'a' && c <= 'f')
      v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F')
      v = c - 'A' + 10;
    else
      throw ConfigError("bitmap hex: bad digit '" + std::string(1, c) + "'");
    for (int b = 0; b < 4; ++b)
      if (v & (1 << b)) bits[d * 4 + static_cast<size_t>(b)] = 1;
  }
  return bits;
}

inline MetricsRow metrics_row(const std::string& strategy, int repeat, const RoundRecord& r) {
  MetricsRow row;
  row.strategy = strategy;
  row.repeat = repeat;
  row.round = r.round;
  row.loss = r.loss;
  row.accuracy = r.accuracy;
  row.dub_value = r.dub_value;
  row.sigma = r.sigma;
  row.max_Z = r.max_Z;
  row.max_Q = r.max_Q;
  if (r.select_ns) row.select_ms = static_cast<double>(*r.select_ns) / 1e6;
  if (r.round_ns) row.round_ms = static_cast<double>(*r.round_ns) / 1e6;
  row.selected = r.selected;
  return row;
}

inline void validate_table(const MetricsTable& t) {
  std::set<std::tuple<std::string, int, int>> keys;
  std::map<std::pair<std::string, int>, int> last_round;
  for (const auto& r : t.rows) {
    require_config(r.strategy.find(',') == std::string::npos &&
                       r.strategy.find('\n') == std::string::npos,
                   "metrics: strategy label may not contain ',' or newline");
    require_config(keys.insert({r.strategy, r.repeat, r.round}).second,
                   "metrics: duplicate (strategy, repeat, round) key");
    const auto group = std::make_pair(r.strategy, r.repeat);
    const auto it = last_round.find(group);
    if (it != last_round.end())
      require_config(r.round > it->second, "metrics: rounds not monotone within a group");
    last_round[group] = r.round;
  }
}

inline std::string export_csv_string(const MetricsTable& t) {
  require_config(!t.rows.empty(), "export_csv: empty table");
  validate_table(t);
  std::string out = kMetricsHeader;
  out += '\n';
  const auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  for (const auto& r : t.rows) {
    out += r.strategy;
    out += ',' + std::to_string(r.repeat);
    out += ',' + std::to_string(r.round);
    out += ',' + format_double(r.loss);
    out += ',' + opt(r.accuracy);
    out += ',' + format_double(r.dub_value);
    out += ',' + format_double(r.sigma);
    out += ',' + format_double(r.max_Z);
    out += ',' + format_double(r.max_Q);
    out += ',' + opt(r.select_ms);
    out += ',' + opt(r.round_ms);
    out += ',' + bitmap_to_hex(r.selected);
    out += '\n';
  }
  return out;
}

inline MetricsTable parse_csv(std::istream& in) {
  MetricsTable t;
  std::string line;
  require_config(static_cast<bool>(std::getline(in, line)), "metrics csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require_config(line == kMetricsHeader, "metrics csv: unexpected header");
  int lineno = 1;
  while (std::getline(in, line)) {
    lineno++;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    f.push_back(cur);
    require_config(f.size() == 12,
                   "metrics csv line " + std::to_string(lineno) + ": expected 12 fields");
    const auto req = [&](const std::string& v) {
      char* end = nullptr;
      const double x = std::strtod(v.c_str(), &end);
      require_config(!v.empty() && end && *end == '\0',
                     "metrics csv line " + std::to_string(lineno) + ": bad number '" + v + "'");
      return x;
    };
    const auto opt = [&](const std::string& v) {
      return v.empty() ? std::optional<double>() : std::optional<double>(req(v));
    };
    MetricsRow r;
    r.strategy = f[0];
    r.repeat = static_cast<int>(req(f[1]));
    r.round = static_cast<int>(req(f[2]));
    r.loss = req(f[3]);
    r.accuracy = opt(f[4]);
    r.dub_value = req(f[5]);
    r.sigma = req(f[6]);
    r.max_Z = req(f[7]);
    r.max_Q = req(f[8]);
    r.select_ms = opt(f[9]);
    r.round_ms = opt(f[10]);
    r.selected = hex_to_bitmap(f[11]);
    t.rows.push_back(std::move(r));
  }
  validate_table(t);
  return t;
}

inline MetricsTable parse_csv_file(const std::string& path) {
  std::ifstream in(path);
  require_config(in.good(), "cannot open metrics csv '" + path + "'");
  return parse_csv(in);
}

// ---------------------------------------------------------------------------
// Plan execution

namespace detail {

inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out.good()) throw InternalError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out.good()) throw InternalError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw InternalError("cannot rename '" + tmp.string() + "': " + ec.message());
}

inline std::string sanitize_cell_name(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '+' || c == '-';
    out += ok ? c : '-';
  }
  return out;
}

struct RepeatData {
  std::vector<ClientDataset> clients;
  std::optional<LabeledDataset> eval;
  std::optional<QuadraticInstance> quad;
};

inline RepeatData build_repeat_data(const ExperimentPlan& plan, uint64_t repeat_seed) {
  RepeatData out;
  const DatasetPlan& d = plan.dataset;
  if (d.kind == "quadratics") {
    SyntheticQuadraticSpec q;
    q.n_clients = plan.fed.n_clients;
    q.dim = d.dim;
    q.heterogeneity = d.heterogeneity;
    q.cluster_count = d.clusters;
    q.center_spread = d.center_spread;
    q.seed = repeat_seed;
    out.quad = make_quadratics(q);
    out.clients = out.quad->clients;
    return out;
  }

  LabeledDataset ds;
  if (d.kind == "blobs") {
    ds = make_blobs(d.samples, d.classes, d.dim, d.spread, repeat_seed);
    if (d.eval_samples > 0)
      out.eval = make_blobs(d.eval_samples, d.classes, d.dim, d.spread,
                            Rng::derive(repeat_seed, {0x6576616cULL}).next_u64());
  } else if (d.kind == "digits") {
    ds = make_digits(d.per_class, repeat_seed, d.noise);
    if (d.eval_per_class > 0)
      out.eval = make_digits(d.eval_per_class, Rng::derive(repeat_seed, {0x6576616cULL}).next_u64(),
                             d.noise);
  } else if (d.kind == "idx") {
    require_config(!d.images.empty() && !d.labels.empty(),
                   "plan: idx dataset needs dataset.images and dataset.labels");
    ds = load_idx(d.images, d.labels);
    if (!d.eval_images.empty()) out.eval = load_idx(d.eval_images, d.eval_labels);
  } else {
    require_config(!d.batches.empty(), "plan: cifar10 dataset needs dataset.batches");
    ds = load_cifar10(d.batches);
    if (!d.eval_batches.empty()) out.eval = load_cifar10(d.eval_batches);
  }

  PartitionSpec ps = plan.partition;
  ps.seed = repeat_seed;
  out.clients = partition(ds, ps);
  return out;
}

inline std::string decisions_jsonl(const RunResult& run) {
  std::string out;
  for (const auto& d : run.decisions) {
    nlohmann::ordered_json j;
    j["round"] = &d - run.decisions.data() + 1;
    j["strategy"] = d.strategy_name;
    j["subset"] = d.subset;
    j["weights"] = d.weights;
    j["objective"] = d.objective_value;
    j["evaluations"] = d.evaluations;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::string embeddings_csv(const QuadraticInstance& inst) {
  std::string out = "client,x,y,cluster\n";
  for (size_t i = 0; i < inst.embedding.size(); ++i) {
    out += std::to_string(i);
    out += ',' + format_double(inst.embedding[i][0]);
    out += ',' + format_double(inst.embedding[i][1]);
    out += ',' + std::to_string(inst.cluster_of[i]);
    out += '\n';
  }
  return out;
}

}  // namespace detail

inline std::string resolve_out_dir(const ExperimentPlan& plan) {
  if (!plan.out_dir.empty()) return plan.out_dir;
  const char* env = std::getenv("FEDSEL_OUT");
  const std::string root = env && *env ? env : "out";
  return root + "/" + plan.name;
}

struct PlanOutcome {
  MetricsTable table;
  std::vector<std::string> failed_cells;  // "strategy:repeat" with a .failed marker
  std::string out_dir;
};

/// Executes every (strategy x repeat) cell, resuming past completed ones.
/// Each cell's CSV is written atomically; a diverged cell leaves a .failed
/// marker and the plan continues. The merged table is re-read from the cell
/// files so resumed and uninterrupted runs produce identical output.
inline PlanOutcome run_plan(const ExperimentPlan& plan, bool quiet = true) {
  namespace fs = std::filesystem;
  PlanOutcome outcome;
  outcome.out_dir = resolve_out_dir(plan);
  const fs::path cells = fs::path(outcome.out_dir) / "cells";
  std::error_code ec;
  fs::create_directories(cells, ec);
  if (ec) throw InternalError("cannot create '" + cells.string() + "': " + ec.message());

  for (int rep = 0; rep < plan.repeats; ++rep) {
    const uint64_t repeat_seed = Rng::derive(plan.seed, {0x72707365ULL, static_cast<uint64_t>(rep)})
                                     .next_u64();
    std::optional<detail::RepeatData> data;  // built lazily, shared by this repeat's cells
    const auto ensure_data = [&]() -> detail::RepeatData& {
      if (!data) data = detail::build_repeat_data(plan, repeat_seed);
      return *data;
    };

    for (const auto& spec : plan.strategies) {
      const std::string cell_name =
          detail::sanitize_cell_name(spec) + "__r" + std::to_string(rep);
      const fs::path csv_path = cells / (cell_name + ".csv");
      const fs::path failed_path = cells / (cell_name + ".failed");
      if (fs::exists(csv_path)) continue;
      if (fs::exists(failed_path)) {
        outcome.failed_cells.push_back(spec + ":" + std::to_string(rep));
        continue;
      }

      detail::RepeatData& rd = ensure_data();
      FederationConfig cfg = plan.fed;
      NormMode norm = plan.fed.strategy.norm_mode;
      cfg.strategy = parse_strategy_spec(spec);
      cfg.strategy.norm_mode = norm;
      cfg.seed = repeat_seed;

      if (!quiet)
        std::fprintf(stderr, "[fedsel] cell %s repeat %d\n", spec.c_str(), rep);
      try {
        const RunResult run_result =
            run(cfg, rd.clients, rd.eval ? &*rd.eval : nullptr);
        MetricsTable cell_table;
        for (const auto& rec : run_result.records)
          cell_table.rows.push_back(metrics_row(spec, rep, rec));
        detail::write_file_atomic(csv_path, export_csv_string(cell_table));
        detail::write_file_atomic(cells / (cell_name + ".decisions.jsonl"),
                                  detail::decisions_jsonl(run_result));
      } catch (const DivergenceError& e) {
        detail::write_file_atomic(failed_path, std::string(e.what()) + "\n");
        outcome.failed_cells.push_back(spec + ":" + std::to_string(rep));
        continue;
      }
    }

    if (plan.dataset.kind == "quadratics") {
      const fs::path emb = fs::path(outcome.out_dir) / ("r" + std::to_string(rep) +
                                                        ".embeddings.csv");
      if (!fs::exists(emb))
        detail::write_file_atomic(emb, detail::embeddings_csv(*ensure_data().quad));
    }
  }

  // Merge in plan order from the persisted files.
  for (const auto& spec : plan.strategies) {
    for (int rep = 0; rep < plan.repeats; ++rep) {
      const fs::path csv_path =
          cells / (detail::sanitize_cell_name(spec) + "__r" + std::to_string(rep) + ".csv");
      if (!fs::exists(csv_path)) continue;
      MetricsTable cell = parse_csv_file(csv_path.string());
      for (auto& r : cell.rows) outcome.table.rows.push_back(std::move(r));
    }
  }
  require_config(!outcome.table.rows.empty(), "plan produced no completed cells");
  validate_table(outcome.table);
  detail::write_file_atomic(fs::path(outcome.out_dir) / "metrics.csv",
                            export_csv_string(outcome.table));
  return outcome;
}

// ---------------------------------------------------------------------------
// Selection timing bench

struct BenchResult {
  int n = 0, k = 0, trials = 0;
  double mean_ms = 0.0, sd_ms = 0.0;
  long evaluations = 0;
};

/// Times greedy selection on a synthetic warmed instance. Warmup runs are
/// excluded; the instance (matrix, queues, counts) is fixed across trials.
inline BenchResult bench_select(int n, int k, int trials = 100, uint64_t seed = 1) {
  require_config(n >= 1 && 1 <= k && k <= n, "bench_select: need 1 <= k <= n");
  require_config(trials >= 1, "bench_select: trials must be >= 1");
  Rng rng = Rng::derive(seed, {0x62656e63ULL});
  std::vector<Vec> grads(static_cast<size_t>(n));
  for (auto& g : grads) {
    g.resize(8);
    for (auto& x : g) x = rng.normal();
  }
  DistanceMatrix m(n);
  m.full_refresh(grads, 0);

  FairnessState st = make_fairness_state(n, 0.3, 0.01);
  st.round = 50;
  for (int i = 0; i < n; ++i) {
    st.counts[static_cast<size_t>(i)] = static_cast<int>(rng.below(51));
    st.Z[static_cast<size_t>(i)] = std::fabs(rng.normal(0.0, 0.5));
    st.Q[static_cast<size_t>(i)] = std::fabs(rng.normal(0.0, 0.5));
  }

  StrategyConfig cfg;
  cfg.kind = StrategyKind::LongFed;
  cfg.K = k;
  cfg.V = 0.8;
  cfg.seed = seed;

  using clock = std::chrono::steady_clock;
  BenchResult res;
  res.n = n;
  res.k = k;
  res.trials = trials;
  std::vector<double> ms(static_cast<size_t>(trials));
  for (int w = 0; w < 3; ++w) (void)select_clients(cfg, m, st, {}, 1);
  for (int t = 0; t < trials; ++t) {
    const auto a = clock::now();
    const SelectionDecision dec = select_clients(cfg, m, st, {}, 1);
    const auto b = clock::now();
    ms[static_cast<size_t>(t)] =
        static_cast<double>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count()) /
        1e6;
    res.evaluations = dec.evaluations;
  }
  for (double v : ms) res.mean_ms += v / static_cast<double>(trials);
  double var = 0.0;
  for (double v : ms) var += (v - res.mean_ms) * (v - res.mean_ms);
  res.sd_ms = trials > 1 ? std::sqrt(var / static_cast<double>(trials - 1)) : 0.0;
  return res;
}

}  // namespace fedsel
