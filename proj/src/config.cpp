#include "cnls/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace cnls {

namespace {

int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

[[noreturn]] void fail(const std::string& key, const YAML::Node& n, const std::string& msg) {
  const int line = line_of(n);
  throw ConfigError("line " + std::to_string(line) + ", key '" + key + "': " + msg, key, line);
}

template <class T>
T scalar_as(const std::string& key, const YAML::Node& n, const char* type) {
  if (!n.IsScalar()) fail(key, n, std::string("expected ") + type);
  try {
    return n.as<T>();
  } catch (const YAML::BadConversion&) {
    fail(key, n, std::string("expected ") + type + ", got '" + n.Scalar() + "'");
  }
}

// Table of setters for one section; unknown keys are rejected.
class Section {
 public:
  using Setter = std::function<void(const std::string&, const YAML::Node&)>;

  Section& real(const std::string& name, double& out) {
    setters_[name] = [&out](const std::string& k, const YAML::Node& n) { out = scalar_as<double>(k, n, "a number"); };
    return *this;
  }
  Section& count(const std::string& name, std::size_t& out) {
    setters_[name] = [&out](const std::string& k, const YAML::Node& n) {
      const auto v = scalar_as<long long>(k, n, "an integer");
      if (v < 0) fail(k, n, "must be nonnegative");
      out = static_cast<std::size_t>(v);
    };
    return *this;
  }
  Section& integer(const std::string& name, int& out) {
    setters_[name] = [&out](const std::string& k, const YAML::Node& n) { out = scalar_as<int>(k, n, "an integer"); };
    return *this;
  }
  Section& u64(const std::string& name, std::uint64_t& out) {
    setters_[name] = [&out](const std::string& k, const YAML::Node& n) {
      out = scalar_as<std::uint64_t>(k, n, "an unsigned 64-bit integer");
    };
    return *this;
  }
  Section& flag(const std::string& name, bool& out) {
    setters_[name] = [&out](const std::string& k, const YAML::Node& n) { out = scalar_as<bool>(k, n, "true or false"); };
    return *this;
  }
  Section& text(const std::string& name, std::string& out) {
    setters_[name] = [&out](const std::string& k, const YAML::Node& n) { out = scalar_as<std::string>(k, n, "a string"); };
    return *this;
  }
  Section& path(const std::string& name, std::filesystem::path& out) {
    setters_[name] = [&out](const std::string& k, const YAML::Node& n) { out = scalar_as<std::string>(k, n, "a path"); };
    return *this;
  }
  Section& reals(const std::string& name, std::vector<double>& out) {
    setters_[name] = [&out](const std::string& k, const YAML::Node& n) {
      if (!n.IsSequence()) fail(k, n, "expected a list of numbers");
      out.clear();
      for (const auto& e : n) out.push_back(scalar_as<double>(k, e, "a number"));
    };
    return *this;
  }
  Section& counts(const std::string& name, std::vector<std::size_t>& out) {
    setters_[name] = [&out](const std::string& k, const YAML::Node& n) {
      if (!n.IsSequence()) fail(k, n, "expected a list of integers");
      out.clear();
      for (const auto& e : n) {
        const auto v = scalar_as<long long>(k, e, "an integer");
        if (v < 0) fail(k, e, "must be nonnegative");
        out.push_back(static_cast<std::size_t>(v));
      }
    };
    return *this;
  }
  Section& custom(const std::string& name, Setter s) {
    setters_[name] = std::move(s);
    return *this;
  }

  void apply(const std::string& prefix, const YAML::Node& node, std::map<std::string, int>& lines) const {
    if (!node.IsMap()) fail(prefix, node, "expected a mapping");
    for (const auto& kv : node) {
      const auto name = kv.first.as<std::string>();
      const std::string key = prefix + "." + name;
      const auto it = setters_.find(name);
      if (it == setters_.end()) fail(key, kv.first, "unknown key");
      lines[key] = line_of(kv.first);
      it->second(key, kv.second);
    }
  }

 private:
  std::map<std::string, Setter> setters_;
};

RunConfig from_yaml(const YAML::Node& root) {
  RunConfig c;
  std::map<std::string, int> lines;
  if (root.IsNull()) return c;
  if (!root.IsMap()) fail("<root>", root, "expected a mapping of sections");

  auto& s = c.solver;
  auto& nz = c.noise;
  auto& f = c.functionals;
  auto& cp = c.coupling.params;
  auto& e = c.experiment;
  std::map<std::string, Section> sections;
  sections["solver"]
      .real("alpha", s.alpha)
      .real("dt", s.dt)
      .custom("scheme",
              [&s](const std::string& k, const YAML::Node& n) {
                try {
                  s.scheme = scheme_from_string(scalar_as<std::string>(k, n, "a string"));
                } catch (const std::invalid_argument& ex) {
                  fail(k, n, ex.what());
                }
              })
      .count("snapshot_stride", s.snapshot_stride)
      .count("n_modes", s.n_modes)
      .count("n_quad", s.n_quad);
  sections["noise"]
      .real("amplitude", nz.amplitude)
      .real("decay", nz.decay)
      .count("n_star", nz.n_star)
      .reals("custom_b", nz.custom_b)
      .custom("kind", [&nz](const std::string& k, const YAML::Node& n) {
        const auto v = scalar_as<std::string>(k, n, "a string");
        if (v == "complex") nz.kind = NoiseKind::kComplex;
        else if (v == "real") nz.kind = NoiseKind::kReal;
        else fail(k, n, "expected complex or real");
      });
  sections["functionals"]
      .real("c0", f.c0)
      .real("c1", f.c1)
      .real("Lambda", f.Lambda)
      .count("corpus_size", f.corpus_size)
      .real("lambda_safety", f.lambda_safety);
  sections["coupling"]
      .real("T", cp.T)
      .real("T1", cp.T1)
      .real("d0", cp.d0)
      .real("R0", cp.R0)
      .real("R1", cp.R1)
      .real("kappa", cp.kappa)
      .real("a", cp.a)
      .real("rho", cp.rho)
      .real("C4_prime", cp.C4_prime)
      .real("C6_prime", cp.C6_prime)
      .real("C_star", cp.C_star)
      .custom("bridge",
              [&cp](const std::string& k, const YAML::Node& n) {
                try {
                  cp.bridge = bridge_from_string(scalar_as<std::string>(k, n, "a string"));
                } catch (const std::invalid_argument& ex) {
                  fail(k, n, ex.what());
                }
              })
      .flag("independent_step1", cp.independent_step1)
      .count("max_retries", cp.max_retries)
      .count("pilot_paths", c.coupling.pilot_paths);
  sections["experiment"]
      .count("paths", e.paths)
      .real("horizon", e.horizon)
      .count("N", e.N)
      .counts("N_scan", e.N_scan)
      .count("scan_paths", e.scan_paths)
      .real("H0", e.H0)
      .real("H1", e.H1)
      .flag("zero_first", e.zero_first)
      .integer("k", e.k)
      .integer("growth_k", e.growth_k)
      .real("initial_decay", e.initial_decay)
      .text("initial", e.initial)
      .real("amplitude", e.amplitude)
      .count("epochs", e.epochs)
      .reals("rho_scan", e.rho_scan)
      .reals("R0_grid", e.R0_grid)
      .reals("R1_grid", e.R1_grid)
      .real("hit_time", e.hit_time)
      .real("tail_fraction", e.tail_fraction)
      .count("bootstrap", e.bootstrap)
      .flag("write_trajectory", e.write_trajectory);
  sections["rng"].u64("master_seed", c.master_seed);
  sections["output"].path("dir", c.output_dir).path("cache_dir", c.cache_dir);

  for (const auto& kv : root) {
    const auto name = kv.first.as<std::string>();
    const auto it = sections.find(name);
    if (it == sections.end()) fail(name, kv.first, "unknown section");
    lines[name] = line_of(kv.first);
    it->second.apply(name, kv.second, lines);
  }
  try {
    c.validate();
  } catch (const ConfigError& ex) {
    const auto it = lines.find(ex.key());
    const int line = it == lines.end() ? 0 : it->second;
    throw ConfigError((line ? "line " + std::to_string(line) + ", " : std::string()) + ex.what(), ex.key(), line);
  }
  return c;
}

void require(bool ok, const std::string& key, const std::string& msg) {
  if (!ok) throw ConfigError("key '" + key + "': " + msg, key, 0);
}

}  // namespace

SpectralSpace RunConfig::space() const { return SpectralSpace(solver.n_modes, solver.n_quad); }

SolverConfig RunConfig::solver_config() const {
  SolverConfig s;
  s.alpha = solver.alpha;
  s.dt = solver.dt;
  s.scheme = solver.scheme;
  s.snapshot_stride = solver.snapshot_stride;
  return s;
}

NoiseSpec RunConfig::noise_spec() const {
  if (!noise.custom_b.empty()) return make_noise_spec(noise.custom_b, noise.n_star, noise.kind);
  return make_noise_spec(solver.n_modes, noise.n_star, noise.amplitude, noise.decay, noise.kind);
}

void RunConfig::validate() const {
  require(solver.n_modes >= 1, "solver.n_modes", "must be at least 1");
  require(solver.n_quad == 0 || solver.n_quad >= 4 * solver.n_modes, "solver.n_quad",
          "must be 0 (automatic) or at least 4 n_modes");
  require(solver.dt > 0.0, "solver.dt", "must be positive");
  require(solver.alpha >= 0.0, "solver.alpha", "must be nonnegative");
  require(solver.snapshot_stride >= 1, "solver.snapshot_stride", "must be positive");
  require(noise.n_star <= solver.n_modes, "noise.n_star", "must not exceed solver.n_modes");
  require(noise.custom_b.empty() || noise.custom_b.size() == solver.n_modes, "noise.custom_b",
          "must have solver.n_modes entries");
  try {
    (void)noise_spec();
  } catch (const std::exception& ex) {
    require(false, noise.custom_b.empty() ? "noise.decay" : "noise.custom_b", ex.what());
  }
  require(functionals.c0 >= 0.0, "functionals.c0", "must be nonnegative (0 calibrates)");
  require(functionals.c1 >= 0.0, "functionals.c1", "must be nonnegative (0 calibrates)");
  require(functionals.Lambda >= 0.0, "functionals.Lambda", "must be nonnegative (0 fits)");
  require(functionals.corpus_size >= 10, "functionals.corpus_size", "must be at least 10");
  require(functionals.lambda_safety >= 1.0, "functionals.lambda_safety", "must be at least 1");
  try {
    coupling.params.validate();
  } catch (const std::domain_error& ex) {
    std::string msg = ex.what();
    const auto key = msg.substr(0, msg.find(' '));
    require(false, key.rfind("coupling.", 0) == 0 ? key : "coupling", msg);
  }
  require(coupling.pilot_paths >= 1, "coupling.pilot_paths", "must be positive");
  require(experiment.paths >= 2, "experiment.paths", "must be at least 2");
  require(experiment.horizon > 0.0, "experiment.horizon", "must be positive");
  require(experiment.N <= solver.n_modes, "experiment.N", "must not exceed solver.n_modes");
  for (auto n : experiment.N_scan) require(n <= solver.n_modes, "experiment.N_scan", "entries must not exceed n_modes");
  require(experiment.scan_paths >= 2, "experiment.scan_paths", "must be at least 2");
  require(experiment.H0 >= 0.0, "experiment.H0", "must be nonnegative");
  require(experiment.H1 >= 0.0, "experiment.H1", "must be nonnegative");
  require(experiment.k >= 1, "experiment.k", "must be at least 1");
  require(experiment.growth_k >= 1, "experiment.growth_k", "must be at least 1");
  require(experiment.initial == "random" || experiment.initial == "e1" || experiment.initial == "zero",
          "experiment.initial", "expected random, e1 or zero");
  require(experiment.epochs >= 1, "experiment.epochs", "must be positive");
  require(!experiment.rho_scan.empty(), "experiment.rho_scan", "must not be empty");
  for (double r : experiment.rho_scan) require(r > 0.0, "experiment.rho_scan", "entries must be positive");
  require(!experiment.R0_grid.empty() && !experiment.R1_grid.empty(), "experiment.R0_grid", "grids must not be empty");
  require(experiment.hit_time > 0.0, "experiment.hit_time", "must be positive");
  require(experiment.tail_fraction > 0.0 && experiment.tail_fraction < 1.0, "experiment.tail_fraction",
          "must lie in (0, 1)");
  require(experiment.bootstrap >= 2, "experiment.bootstrap", "must be at least 2");
  require(!output_dir.empty(), "output.dir", "must not be empty");
}

RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& ex) {
    const int line = ex.mark.line + 1;
    throw ConfigError("line " + std::to_string(line) + ": " + ex.msg, "", line);
  }
  return from_yaml(root);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string(), "", 0);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

nlohmann::json to_json(const RunConfig& c) {
  const auto& s = c.solver;
  const auto& n = c.noise;
  const auto& f = c.functionals;
  const auto& p = c.coupling.params;
  const auto& e = c.experiment;
  nlohmann::json j;
  j["solver"] = {{"alpha", s.alpha},       {"dt", s.dt},           {"scheme", to_string(s.scheme)},
                 {"snapshot_stride", s.snapshot_stride}, {"n_modes", s.n_modes}, {"n_quad", s.n_quad}};
  j["noise"] = {{"amplitude", n.amplitude}, {"decay", n.decay}, {"n_star", n.n_star},
                {"custom_b", n.custom_b},   {"kind", n.kind == NoiseKind::kComplex ? "complex" : "real"}};
  j["functionals"] = {{"c0", f.c0}, {"c1", f.c1}, {"Lambda", f.Lambda}, {"corpus_size", f.corpus_size},
                      {"lambda_safety", f.lambda_safety}};
  j["coupling"] = {{"T", p.T},
                   {"T1", p.T1},
                   {"d0", p.d0},
                   {"R0", p.R0},
                   {"R1", p.R1},
                   {"kappa", p.kappa},
                   {"a", p.a},
                   {"rho", p.rho},
                   {"C4_prime", p.C4_prime},
                   {"C6_prime", p.C6_prime},
                   {"C_star", p.C_star},
                   {"bridge", to_string(p.bridge)},
                   {"independent_step1", p.independent_step1},
                   {"max_retries", p.max_retries},
                   {"pilot_paths", c.coupling.pilot_paths}};
  j["experiment"] = {{"paths", e.paths},
                     {"horizon", e.horizon},
                     {"N", e.N},
                     {"N_scan", e.N_scan},
                     {"scan_paths", e.scan_paths},
                     {"H0", e.H0},
                     {"H1", e.H1},
                     {"zero_first", e.zero_first},
                     {"k", e.k},
                     {"growth_k", e.growth_k},
                     {"initial_decay", e.initial_decay},
                     {"initial", e.initial},
                     {"amplitude", e.amplitude},
                     {"epochs", e.epochs},
                     {"rho_scan", e.rho_scan},
                     {"R0_grid", e.R0_grid},
                     {"R1_grid", e.R1_grid},
                     {"hit_time", e.hit_time},
                     {"tail_fraction", e.tail_fraction},
                     {"bootstrap", e.bootstrap},
                     {"write_trajectory", e.write_trajectory}};
  j["rng"] = {{"master_seed", c.master_seed}};
  j["output"] = {{"dir", c.output_dir.string()}, {"cache_dir", c.cache_dir.string()}};
  return j;
}

std::uint64_t config_hash(const nlohmann::json& j) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cnls
