#include "resflow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "resflow/errors.hpp"
#include "resflow/rng.hpp"

namespace resflow::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string out(buf, res.ptr);
  if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (v.empty() || res.ec != std::errc() || res.ptr != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (v.empty() || res.ec != std::errc() || res.ptr != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  const auto n = parse_int(key, v);
  if (n < 0) throw ConfigError(key + ": must be >= 0, got " + v);
  return static_cast<std::size_t>(n);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

const char* direction_name(gat::EdgeDirection d) { return d == gat::EdgeDirection::as_built ? "as_built" : "reversed"; }
const char* merge_name(gat::HeadMerge m) { return m == gat::HeadMerge::concat ? "concat" : "mean"; }
const char* prune_mode_name(gat::PruneMode m) { return m == gat::PruneMode::global ? "global" : "per_day"; }

struct Entry {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <class T>
Entry count_entry(T RunConfig::*outer, std::size_t T::*field) {
  return {[=](const RunConfig& c) { return std::to_string(c.*outer.*field); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { c.*outer.*field = parse_count(k, v); }};
}

template <class T>
Entry int_entry(T RunConfig::*outer, int T::*field) {
  return {[=](const RunConfig& c) { return std::to_string(c.*outer.*field); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.*outer.*field = static_cast<int>(parse_int(k, v));
          }};
}

template <class T>
Entry double_entry(T RunConfig::*outer, double T::*field) {
  return {[=](const RunConfig& c) { return format_double(c.*outer.*field); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { c.*outer.*field = parse_double(k, v); }};
}

template <class T>
Entry bool_entry(T RunConfig::*outer, bool T::*field) {
  return {[=](const RunConfig& c) { return std::string(c.*outer.*field ? "true" : "false"); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { c.*outer.*field = parse_bool(k, v); }};
}

Entry string_field(std::string RunConfig::*field) {
  return {[=](const RunConfig& c) { return "\"" + c.*field + "\""; },
          [=](RunConfig& c, const std::string&, const std::string& v) { c.*field = v; }};
}

const std::map<std::string, Entry>& registry() {
  using R = RunConfig;
  static const std::map<std::string, Entry> table = [] {
    std::map<std::string, Entry> t;
    t["seed"] = {[](const R& c) { return std::to_string(c.seed); },
                 [](R& c, const std::string& k, const std::string& v) {
                   const auto n = parse_int(k, v);
                   if (n < 0) throw ConfigError(k + ": must be >= 0");
                   c.seed = static_cast<std::uint64_t>(n);
                 }};

    t["data.dir"] = string_field(&R::data_dir);
    t["data.metadata"] = string_field(&R::metadata);
    t["data.gap_limit_days"] = {[](const R& c) { return std::to_string(c.gap_limit_days); },
                                [](R& c, const std::string& k, const std::string& v) {
                                  c.gap_limit_days = static_cast<int>(parse_int(k, v));
                                }};
    t["data.history"] = count_entry(&R::window, &data::WindowSpec::history);
    t["data.horizon"] = count_entry(&R::window, &data::WindowSpec::horizon);
    t["data.stride"] = count_entry(&R::window, &data::WindowSpec::stride);
    t["data.train_fraction"] = {[](const R& c) { return format_double(c.train_fraction); },
                                [](R& c, const std::string& k, const std::string& v) {
                                  c.train_fraction = parse_double(k, v);
                                }};
    t["data.validation_fraction"] = {[](const R& c) { return format_double(c.validation_fraction); },
                                     [](R& c, const std::string& k, const std::string& v) {
                                       c.validation_fraction = parse_double(k, v);
                                     }};

    t["graph.k"] = count_entry(&R::train, &train::TrainConfig::neighbors);
    t["graph.edge_direction"] = {[](const R& c) { return "\"" + std::string(direction_name(c.model.gat.direction)) + "\""; },
                                 [](R& c, const std::string&, const std::string& v) {
                                   c.model.gat.direction = gat::parse_direction(v);
                                 }};
    t["graph.prune_interval"] = int_entry(&R::train, &train::TrainConfig::prune_interval);
    t["graph.prune_threshold"] = double_entry(&R::train, &train::TrainConfig::prune_threshold);
    t["graph.prune_mode"] = {[](const R& c) { return "\"" + std::string(prune_mode_name(c.train.prune_mode)) + "\""; },
                             [](R& c, const std::string&, const std::string& v) {
                               c.train.prune_mode = gat::parse_prune_mode(v);
                             }};

    t["model.embed"] = count_entry(&R::model, &model::ModelConfig::embed);
    t["model.encoder_depth"] = count_entry(&R::model, &model::ModelConfig::encoder_depth);
    t["model.gat_layers"] = {[](const R& c) { return std::to_string(c.model.gat.layers); },
                             [](R& c, const std::string& k, const std::string& v) { c.model.gat.layers = parse_count(k, v); }};
    t["model.gat_heads"] = {[](const R& c) { return std::to_string(c.model.gat.heads); },
                            [](R& c, const std::string& k, const std::string& v) { c.model.gat.heads = parse_count(k, v); }};
    t["model.gat_head_dim"] = {[](const R& c) { return std::to_string(c.model.gat.head_dim); },
                               [](R& c, const std::string& k, const std::string& v) {
                                 c.model.gat.head_dim = parse_count(k, v);
                               }};
    t["model.head_merge"] = {[](const R& c) { return "\"" + std::string(merge_name(c.model.gat.merge)) + "\""; },
                             [](R& c, const std::string&, const std::string& v) { c.model.gat.merge = gat::parse_merge(v); }};
    t["model.negative_slope"] = {[](const R& c) { return format_double(c.model.gat.negative_slope); },
                                 [](R& c, const std::string& k, const std::string& v) {
                                   c.model.gat.negative_slope = parse_double(k, v);
                                 }};
    t["model.tf_layers"] = count_entry(&R::model, &model::ModelConfig::tf_layers);
    t["model.tf_heads"] = count_entry(&R::model, &model::ModelConfig::tf_heads);
    t["model.ff"] = count_entry(&R::model, &model::ModelConfig::ff);
    t["model.latent"] = count_entry(&R::model, &model::ModelConfig::latent);
    t["model.dropout"] = double_entry(&R::model, &model::ModelConfig::dropout);

    using P = encoder::PretrainConfig;
    t["pretrain.epochs"] = int_entry(&R::pretrain, &P::epochs);
    t["pretrain.per_reservoir_batch"] = count_entry(&R::pretrain, &P::per_reservoir_batch);
    t["pretrain.temperature"] = double_entry(&R::pretrain, &P::temperature);
    t["pretrain.sigma_aug"] = double_entry(&R::pretrain, &P::sigma_aug);
    t["pretrain.w_contrastive"] = double_entry(&R::pretrain, &P::w_contrastive);
    t["pretrain.w_supervised"] = double_entry(&R::pretrain, &P::w_supervised);
    t["pretrain.momentum"] = double_entry(&R::pretrain, &P::momentum);
    t["pretrain.lr"] = double_entry(&R::pretrain, &P::lr);
    t["pretrain.lr_decay"] = double_entry(&R::pretrain, &P::lr_decay);
    t["pretrain.max_steps_per_epoch"] = count_entry(&R::pretrain, &P::max_steps_per_epoch);

    using T = train::TrainConfig;
    t["train.epochs"] = int_entry(&R::train, &T::epochs);
    t["train.batch_size"] = count_entry(&R::train, &T::batch_size);
    t["train.lr"] = double_entry(&R::train, &T::lr);
    t["train.lr_decay"] = double_entry(&R::train, &T::lr_decay);
    t["train.no_graph"] = bool_entry(&R::train, &T::no_graph);
    t["train.static_graph"] = bool_entry(&R::train, &T::static_graph);
    t["train.no_pretrain"] = bool_entry(&R::train, &T::no_pretrain);
    t["train.max_steps_per_epoch"] = count_entry(&R::train, &T::max_steps_per_epoch);
    t["train.init_from"] = string_field(&R::init_from);

    using S = synth::SynthConfig;
    t["synth.n_reservoirs"] = count_entry(&R::synth, &S::n_reservoirs);
    t["synth.n_days"] = count_entry(&R::synth, &S::n_days);
    t["synth.lag_days"] = int_entry(&R::synth, &S::lag_days);
    t["synth.attenuation"] = double_entry(&R::synth, &S::attenuation);
    t["synth.local_share"] = double_entry(&R::synth, &S::local_share);
    t["synth.noise"] = double_entry(&R::synth, &S::noise);
    t["synth.max_start_offset"] = int_entry(&R::synth, &S::max_start_offset);
    t["synth.gaps_per_reservoir"] = int_entry(&R::synth, &S::gaps_per_reservoir);
    t["synth.start_date"] = {[](const R& c) { return "\"" + c.synth.start_date + "\""; },
                             [](R& c, const std::string&, const std::string& v) {
                               data::parse_date(v);
                               c.synth.start_date = v;
                             }};

    t["ablate.seeds"] = {[](const R& c) {
                           std::string out = "\"";
                           for (std::size_t i = 0; i < c.ablate_seeds.size(); ++i)
                             out += (i ? "," : "") + std::to_string(c.ablate_seeds[i]);
                           return out + "\"";
                         },
                         [](R& c, const std::string& k, const std::string& v) {
                           c.ablate_seeds.clear();
                           for (const auto& s : split_list(v)) c.ablate_seeds.push_back(parse_count(k, s));
                         }};
    t["ablate.arms"] = {[](const R& c) {
                          std::string out = "\"";
                          for (std::size_t i = 0; i < c.ablate_arms.size(); ++i)
                            out += (i ? "," : "") + std::string(train::arm_name(c.ablate_arms[i]));
                          return out + "\"";
                        },
                        [](R& c, const std::string&, const std::string& v) {
                          c.ablate_arms.clear();
                          for (const auto& s : split_list(v)) c.ablate_arms.push_back(train::parse_arm(s));
                        }};
    return t;
  }();
  return table;
}

std::string unquote(const std::string& raw, const std::string& where) {
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') return raw.substr(1, raw.size() - 2);
  if (!raw.empty() && raw.front() == '"') throw ConfigError(where + ": unterminated string");
  return raw;
}

}  // namespace

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = registry();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second.set(cfg, key, value);
}

std::map<std::string, std::string> resolved_values(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [key, entry] : registry()) out[key] = entry.get(cfg);
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& [key, entry] : registry()) out.push_back(key);
  return out;
}

std::map<std::string, std::string> parse_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": missing key");
    const auto full = section.empty() ? key : section + "." + key;
    const auto value = unquote(trim(line.substr(eq + 1)), where);
    if (!out.emplace(full, value).second) throw ConfigError(where + ": duplicate key '" + full + "'");
  }
  return out;
}

void validate(const RunConfig& cfg) {
  train::validate(cfg.train);
  encoder::validate(cfg.pretrain);
  if (cfg.window.history == 0 || cfg.window.horizon == 0 || cfg.window.stride == 0)
    throw ConfigError("data.history, data.horizon and data.stride must be >= 1");
  if (!(cfg.train_fraction > 0.0 && cfg.validation_fraction >= 0.0 && cfg.train_fraction + cfg.validation_fraction < 1.0))
    throw ConfigError("data fractions must satisfy train > 0, validation >= 0, train + validation < 1");
  if (cfg.gap_limit_days < 0) throw ConfigError("data.gap_limit_days must be >= 0");
  const auto& g = cfg.model.gat;
  if (g.layers == 0 || g.heads == 0 || g.head_dim == 0) throw ConfigError("graph attention sizes must be >= 1");
  const auto width = g.merge == gat::HeadMerge::concat ? g.heads * g.head_dim : g.head_dim;
  if (cfg.model.tf_heads == 0 || width % cfg.model.tf_heads != 0)
    throw ConfigError("graph output width " + std::to_string(width) + " is not divisible by model.tf_heads = " +
                      std::to_string(cfg.model.tf_heads));
  if (cfg.model.embed == 0 || cfg.model.latent == 0 || cfg.model.ff == 0 || cfg.model.tf_layers == 0)
    throw ConfigError("model sizes must be >= 1");
  if (!(cfg.model.dropout >= 0.0 && cfg.model.dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
  if (cfg.ablate_seeds.empty()) throw ConfigError("ablate.seeds must list at least one seed");
  if (cfg.ablate_arms.empty()) throw ConfigError("ablate.arms must list at least one arm");
}

RunConfig resolve(const std::string& file_text, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  for (const auto& [key, value] : parse_text(file_text)) set_value(cfg, key, value);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    set_value(cfg, trim(o.substr(0, eq)), unquote(trim(o.substr(eq + 1)), "override"));
  }
  cfg.model.history = cfg.window.history;
  cfg.model.horizon = cfg.window.horizon;
  cfg.train.seed = cfg.seed;
  cfg.synth.seed = cfg.seed;
  validate(cfg);
  return cfg;
}

RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return resolve(text.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string resolved_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, value] : resolved_values(cfg)) out += key + " = " + value + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) { return hex64(fnv1a(resolved_text(cfg))); }

}  // namespace resflow::config
