#include "glab/harness/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"

#include "glab/errors.hpp"
#include "glab/text.hpp"

namespace glab::harness {

namespace {

struct KeyEntry {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

bool parse_bool(const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ParameterError("expected true or false, got '" + t + "'");
}

int parse_positive_int(const std::string& text) {
  const long long v = parse_int(text);
  if (v < 1 || v > 1000000) throw ParameterError("expected a positive integer, got " + trim(text));
  return static_cast<int>(v);
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) out.push_back(parse_double(part));
  return out;
}

std::string join_doubles(const std::vector<double>& values, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(sep);
    out += format_shortest(values[i]);
  }
  return out;
}

std::vector<std::vector<double>> parse_rows(const std::string& text) {
  std::vector<std::vector<double>> rows;
  if (trim(text).empty()) return rows;
  for (const auto& row : split(text, ';')) rows.push_back(parse_double_list(row));
  return rows;
}

std::string join_rows(const std::vector<std::vector<double>>& rows) {
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i) out.push_back(';');
    out += join_doubles(rows[i]);
  }
  return out;
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  bool contiguous = seeds.size() >= 3;
  for (std::size_t i = 1; contiguous && i < seeds.size(); ++i) contiguous = seeds[i] == seeds[i - 1] + 1;
  if (contiguous) return std::to_string(seeds.front()) + ".." + std::to_string(seeds.back());
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(seeds[i]);
  }
  return out;
}

const std::vector<KeyEntry>& key_table() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<KeyEntry> table = {
      {"experiment", [](C& c, S v) { c.experiment = parse_experiment_kind(v); },
       [](const C& c) { return to_string(c.experiment); }},
      {"schedule.kind", [](C& c, S v) { c.schedule_kind = parse_schedule_kind(trim(v)); },
       [](const C& c) { return std::string(to_string(c.schedule_kind)); }},
      {"schedule.T", [](C& c, S v) { c.train_steps = parse_positive_int(v); },
       [](const C& c) { return std::to_string(c.train_steps); }},
      {"schedule.beta_min", [](C& c, S v) { c.schedule_params.beta_min = parse_double(v); },
       [](const C& c) { return format_shortest(c.schedule_params.beta_min); }},
      {"schedule.beta_max", [](C& c, S v) { c.schedule_params.beta_max = parse_double(v); },
       [](const C& c) { return format_shortest(c.schedule_params.beta_max); }},
      {"model.preset",
       [](C& c, S v) {
         const std::string t = trim(v);
         if (t.rfind("ring-", 0) == 0) {
           c.model.preset = "ring";
           c.model.components = parse_positive_int(t.substr(5));
           return;
         }
         if (t != "ring" && t != "custom") throw ParameterError("model preset must be 'ring', 'ring-K' or 'custom'");
         c.model.preset = t;
       },
       [](const C& c) { return c.model.preset; }},
      {"model.components", [](C& c, S v) { c.model.components = parse_positive_int(v); },
       [](const C& c) { return std::to_string(c.model.components); }},
      {"model.radius", [](C& c, S v) { c.model.radius = parse_double(v); },
       [](const C& c) { return format_shortest(c.model.radius); }},
      {"model.std", [](C& c, S v) { c.model.component_std = parse_double(v); },
       [](const C& c) { return format_shortest(c.model.component_std); }},
      {"model.means", [](C& c, S v) { c.model.means = parse_rows(v); },
       [](const C& c) { return join_rows(c.model.means); }},
      {"model.weights", [](C& c, S v) { c.model.weights = parse_double_list(v); },
       [](const C& c) { return join_doubles(c.model.weights); }},
      {"grid.nfe", [](C& c, S v) { c.nfe = parse_positive_int(v); },
       [](const C& c) { return std::to_string(c.nfe); }},
      {"solver.kind", [](C& c, S v) { c.solver.kind = parse_solver_kind(trim(v)); },
       [](const C& c) { return std::string(to_string(c.solver.kind)); }},
      {"solver.ancestral_noise", [](C& c, S v) { c.solver.ancestral_noise = parse_ancestral_noise(trim(v)); },
       [](const C& c) { return std::string(to_string(c.solver.ancestral_noise)); }},
      {"solver.midpoint_ratio", [](C& c, S v) { c.solver.midpoint_ratio = parse_double(v); },
       [](const C& c) { return format_shortest(c.solver.midpoint_ratio); }},
      {"guidance", [](C& c, S v) { c.guidance = parse_guidance(v); },
       [](const C& c) { return to_string(c.guidance); }},
      {"condition", [](C& c, S v) { c.condition = parse_condition(v); },
       [](const C& c) { return to_string(c.condition); }},
      {"edit.target", [](C& c, S v) { c.edit_target = parse_condition(v); },
       [](const C& c) { return to_string(c.edit_target); }},
      {"seeds", [](C& c, S v) { c.seeds = parse_seed_list(v); }, [](const C& c) { return join_seeds(c.seeds); }},
      {"output.dir",
       [](C& c, S v) {
         if (trim(v).empty()) throw ParameterError("output directory must not be empty");
         c.output_dir = trim(v);
       },
       [](const C& c) { return c.output_dir; }},
      {"output.svg", [](C& c, S v) { c.svg = parse_bool(v); },
       [](const C& c) { return std::string(c.svg ? "true" : "false"); }},
      {"inverse.operator", [](C& c, S v) { c.inverse.op = trim(v); }, [](const C& c) { return c.inverse.op; }},
      {"inverse.noise_std", [](C& c, S v) { c.inverse.noise_std = parse_double(v); },
       [](const C& c) { return format_shortest(c.inverse.noise_std); }},
      {"inverse.gamma", [](C& c, S v) { c.inverse.params.gamma = parse_double(v); },
       [](const C& c) { return format_shortest(c.inverse.params.gamma); }},
      {"inverse.gamma_shape", [](C& c, S v) { c.inverse.params.shape = parse_gamma_shape(trim(v)); },
       [](const C& c) { return std::string(to_string(c.inverse.params.shape)); }},
      {"inverse.gamma_per_step", [](C& c, S v) { c.inverse.params.gamma_per_step = parse_double_list(v); },
       [](const C& c) { return join_doubles(c.inverse.params.gamma_per_step); }},
      {"inverse.mode", [](C& c, S v) { c.inverse.params.mode = parse_dis_mode(trim(v)); },
       [](const C& c) { return std::string(to_string(c.inverse.params.mode)); }},
      {"inverse.guidance", [](C& c, S v) { c.inverse.params.guidance = parse_guidance(v); },
       [](const C& c) { return to_string(c.inverse.params.guidance); }},
      {"sweep.lambdas", [](C& c, S v) { c.sweep_lambdas = parse_double_list(v); },
       [](const C& c) { return join_doubles(c.sweep_lambdas); }},
      {"sweep.omegas", [](C& c, S v) { c.sweep_omegas = parse_double_list(v); },
       [](const C& c) { return join_doubles(c.sweep_omegas); }},
      {"sweep.nfes",
       [](C& c, S v) {
         c.sweep_nfes.clear();
         for (const auto& part : split(v, ',')) c.sweep_nfes.push_back(parse_positive_int(part));
       },
       [](const C& c) {
         std::string out;
         for (std::size_t i = 0; i < c.sweep_nfes.size(); ++i) {
           if (i) out.push_back(',');
           out += std::to_string(c.sweep_nfes[i]);
         }
         return out;
       }},
      {"equiv.tolerance", [](C& c, S v) { c.equiv_tolerance = parse_double(v); },
       [](const C& c) { return format_shortest(c.equiv_tolerance); }},
      {"report.seeds", [](C& c, S v) { c.report_seeds = static_cast<std::size_t>(parse_positive_int(v)); },
       [](const C& c) { return std::to_string(c.report_seeds); }},
  };
  return table;
}

const KeyEntry* find_key(const std::string& key) {
  for (const auto& e : key_table()) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

void check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

// semantic checks that need more than one key
void validate(const ExperimentConfig& c) {
  try {
    (void)c.build_schedule();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  GaussianMixture<double> model = GaussianMixture<double>::default_ring();
  try {
    model = c.model.build();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  check(c.nfe <= c.train_steps, "grid.nfe", "must not exceed schedule.T");
  for (int n : c.sweep_nfes) check(n <= c.train_steps, "sweep.nfes", "must not exceed schedule.T");
  check(!c.sweep_nfes.empty(), "sweep.nfes", "must not be empty");
  check(c.solver.midpoint_ratio > 0.0 && c.solver.midpoint_ratio < 1.0, "solver.midpoint_ratio", "must lie in (0, 1)");
  check(!c.seeds.empty(), "seeds", "must not be empty");
  check(std::isfinite(c.equiv_tolerance) && c.equiv_tolerance > 0.0, "equiv.tolerance", "must be positive");
  check(c.report_seeds >= 2, "report.seeds", "must be at least 2");
  for (double l : c.sweep_lambdas) check(l >= 0.0 && l <= 2.0, "sweep.lambdas", "entries must lie in [0, 2]");
  for (double w : c.sweep_omegas) check(std::isfinite(w) && w >= 0.0, "sweep.omegas", "entries must be >= 0");
  check(std::isfinite(c.inverse.noise_std) && c.inverse.noise_std >= 0.0, "inverse.noise_std", "must be >= 0");
  auto cond_ok = [&](const Condition& cond, const std::string& key) {
    try {
      (void)component_mask(cond, model.components());
    } catch (const std::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  };
  cond_ok(c.condition, "condition");
  cond_ok(c.edit_target, "edit.target");
  try {
    c.inverse.params.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("inverse.gamma: ") + e.what());
  }
  try {
    (void)c.inverse.build_operator(model.dim());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("inverse.operator: ") + e.what());
  }
}

void flatten(const nlohmann::json& node, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  auto scalar = [](const nlohmann::json& v, const std::string& key) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) return format_shortest(v.get<double>());
    throw ConfigError(key + ": unsupported JSON value");
  };
  if (node.is_object()) {
    for (const auto& [k, v] : node.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    return;
  }
  if (prefix.empty()) throw ConfigError("JSON config must be an object");
  if (node.is_array()) {
    std::string joined;
    for (std::size_t i = 0; i < node.size(); ++i) {
      const auto& item = node[i];
      if (item.is_array()) {
        if (i) joined.push_back(';');
        for (std::size_t j = 0; j < item.size(); ++j) {
          if (j) joined.push_back(',');
          joined += scalar(item[j], prefix);
        }
      } else {
        if (i) joined.push_back(',');
        joined += scalar(item, prefix);
      }
    }
    out.emplace_back(prefix, joined);
    return;
  }
  out.emplace_back(prefix, scalar(node, prefix));
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kSample: return "sample";
    case ExperimentKind::kInvert: return "invert";
    case ExperimentKind::kRoundtrip: return "roundtrip";
    case ExperimentKind::kEdit: return "edit";
    case ExperimentKind::kEquivCheck: return "equiv-check";
    case ExperimentKind::kInverseProblem: return "inverse-problem";
    case ExperimentKind::kSweep: return "sweep";
    case ExperimentKind::kReport: return "report";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string& text) {
  const std::string t = trim(text);
  for (auto k : {ExperimentKind::kSample, ExperimentKind::kInvert, ExperimentKind::kRoundtrip, ExperimentKind::kEdit,
                 ExperimentKind::kEquivCheck, ExperimentKind::kInverseProblem, ExperimentKind::kSweep,
                 ExperimentKind::kReport}) {
    if (to_string(k) == t) return k;
  }
  throw ParameterError("unknown experiment '" + t + "'");
}

GaussianMixture<double> ModelSpec::build() const {
  if (preset == "ring") return GaussianMixture<double>::ring(components, radius, component_std);
  if (means.empty()) throw ParameterError("custom model needs model.means");
  const auto d = static_cast<Eigen::Index>(means.front().size());
  Matrix<double> m(d, static_cast<Eigen::Index>(means.size()));
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (static_cast<Eigen::Index>(means[k].size()) != d) throw ParameterError("model.means rows differ in length");
    for (Eigen::Index i = 0; i < d; ++i) m(i, static_cast<Eigen::Index>(k)) = means[k][static_cast<std::size_t>(i)];
  }
  Vector<double> w;
  if (weights.empty()) {
    w = Vector<double>::Constant(m.cols(), 1.0 / static_cast<double>(m.cols()));
  } else {
    w = Eigen::Map<const Vector<double>>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  }
  return GaussianMixture<double>(std::move(m), component_std, std::move(w));
}

LinearOperator InverseSpec::build_operator(Eigen::Index dim) const {
  const std::string t = trim(op);
  if (t == "identity") return LinearOperator::identity(dim);
  if (t.rfind("mask:", 0) == 0) {
    std::vector<bool> keep;
    for (char c : t.substr(5)) {
      if (c != '0' && c != '1') throw ParameterError("mask must be a 0/1 string");
      keep.push_back(c == '1');
    }
    if (static_cast<Eigen::Index>(keep.size()) != dim) throw ParameterError("mask length must equal the dimension");
    return LinearOperator::mask(std::move(keep));
  }
  if (t.rfind("matrix:", 0) == 0) {
    const auto rows = parse_rows(t.substr(7));
    if (rows.empty()) throw ParameterError("empty matrix");
    Matrix<double> a(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<Eigen::Index>(rows[r].size()) != dim) throw ParameterError("matrix rows must have dim entries");
      for (Eigen::Index j = 0; j < dim; ++j) a(static_cast<Eigen::Index>(r), j) = rows[r][static_cast<std::size_t>(j)];
    }
    return LinearOperator::matrix(std::move(a));
  }
  throw ParameterError("operator must be 'identity', 'mask:<bits>' or 'matrix:<rows>'");
}

NoiseSchedule ExperimentConfig::build_schedule() const {
  return glab::build_schedule(schedule_kind, train_steps, schedule_params);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& e : key_table()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  const std::string t = trim(text);
  std::vector<std::uint64_t> seeds;
  if (const auto dots = t.find(".."); dots != std::string::npos) {
    const long long lo = parse_int(t.substr(0, dots));
    const long long hi = parse_int(t.substr(dots + 2));
    if (lo < 0 || hi < lo) throw ParameterError("seed range must be 'a..b' with 0 <= a <= b");
    if (hi - lo >= 1000000) throw ParameterError("seed range too long");
    for (long long s = lo; s <= hi; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
    return seeds;
  }
  for (const auto& part : split(t, ',')) {
    const long long s = parse_int(part);
    if (s < 0) throw ParameterError("seeds must be non-negative");
    seeds.push_back(static_cast<std::uint64_t>(s));
  }
  return seeds;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value, int line) {
  const KeyEntry* entry = find_key(key);
  if (!entry) throw ConfigError("unknown key '" + key + "'", line);
  try {
    entry->set(config, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what(), line);
  }
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string body = trim(raw);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line);
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw ConfigError("missing key before '='", line);
    if (!seen.insert(key).second && find_key(key)) throw ConfigError("duplicate key '" + key + "'", line);
    set_config_value(config, key, body.substr(eq + 1), line);
  }
  validate(config);
  return config;
}

ExperimentConfig parse_config_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    int line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()) && i + 1 < e.byte; ++i) {
      line += text[i] == '\n';
    }
    throw ConfigError("invalid JSON", line);
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  flatten(doc, "", pairs);
  ExperimentConfig config;
  for (const auto& [key, value] : pairs) set_config_value(config, key, value);
  validate(config);
  return config;
}

ExperimentConfig parse_config_any(const std::string& text) {
  const std::string t = trim(text);
  if (!t.empty() && t.front() == '{') return parse_config_json(text);
  return parse_config(text);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_any(buf.str());
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& e : key_table()) out += e.key + " = " + e.get(config) + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& config) {
  std::string text;
  for (const auto& e : key_table()) {
    if (e.key != "output.dir") text += e.key + " = " + e.get(config) + "\n";
  }
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace glab::harness
