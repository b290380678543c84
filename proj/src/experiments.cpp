#include "cnls/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>
#include <tuple>

#include "cnls/statistics.hpp"
#include "experiments_detail.hpp"

namespace cnls {

// ---------------------------------------------------------------------------
// Infrastructure

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  jobs = std::clamp<std::size_t>(jobs, 1, n);
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_index = n;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard lock(mu);
        if (i > failed_index) return;  // a smaller index already failed
      }
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

namespace detail {

std::vector<double> sample_times(std::size_t n_steps, std::size_t stride, double dt) {
  std::vector<double> t;
  for (std::size_t s = 0; s <= n_steps; ++s) {
    if (sample_due(s, n_steps, stride)) t.push_back(static_cast<double>(s) * dt);
  }
  return t;
}

void column_stats(const std::vector<std::vector<double>>& rows, std::vector<double>& mean, std::vector<double>& se) {
  const std::size_t n_t = rows.empty() ? 0 : rows.front().size();
  mean.assign(n_t, 0.0);
  se.assign(n_t, 0.0);
  std::vector<double> col(rows.size());
  for (std::size_t t = 0; t < n_t; ++t) {
    for (std::size_t i = 0; i < rows.size(); ++i) col[i] = rows[i][t];
    const auto ms = mean_stderr(col);
    mean[t] = ms.mean;
    se[t] = ms.stderr_;
  }
}

void run_plain(const SpectralSpace& space, const SolverConfig& solver, const NoiseSpec& noise, StreamId id,
               CVector& u, std::size_t n_steps, std::size_t stride, std::size_t path,
               const std::function<void(std::size_t, const CVector&)>& obs) {
  Stepper stepper(space, solver);
  const NoiseGenerator gen(noise, solver.dt, id);
  CVector forcing(u.size());
  if (obs) obs(0, u);
  for (std::size_t s = 0; s < n_steps; ++s) {
    gen.forcing(s, forcing);
    try {
      stepper.step(u, forcing, static_cast<std::ptrdiff_t>(s));
    } catch (const NumericError& e) {
      throw BlowUp(e.what(), static_cast<std::ptrdiff_t>(s), path, u);
    }
    if (obs && sample_due(s + 1, n_steps, stride)) obs(s + 1, u);
  }
}

std::string fmt(double x, int prec) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", prec, x);
  return buf;
}

ExperimentReport make_report(const std::string& name, const ExperimentContext& ctx) {
  ExperimentReport r;
  r.name = name;
  r.config = to_json(ctx.cfg);
  r.seed = ctx.cfg.master_seed;
  return r;
}

}  // namespace detail

using namespace detail;

// ---------------------------------------------------------------------------
// Calibration

nlohmann::json to_json(const Calibration& c) {
  nlohmann::json j;
  j["c0"] = {{"value", c.consts.c0},
             {"max_ratio", c.c0.max_ratio},
             {"corpus_size", c.c0.corpus_size},
             {"argmax", c.c0.argmax}};
  j["c1"] = {{"value", c.consts.c1},
             {"max_ratio", c.c1.max_ratio},
             {"corpus_size", c.c1.corpus_size},
             {"positive", c.c1.positive}};
  j["Lambda"] = c.consts.Lambda;
  j["coupling_fitted"] = c.coupling_fitted;
  j["coupling"] = {{"C4_prime", c.fit.C4_prime},
                   {"C6_prime", c.fit.C6_prime},
                   {"C_star", c.fit.C_star},
                   {"pilot_paths", c.fit.n_paths}};
  return j;
}

namespace {

Calibration calibration_from_json(const nlohmann::json& j) {
  Calibration c;
  c.consts.c0 = j.at("c0").at("value");
  c.c0.c0 = c.consts.c0;
  c.c0.max_ratio = j.at("c0").at("max_ratio");
  c.c0.corpus_size = j.at("c0").at("corpus_size");
  c.c0.argmax = j.at("c0").at("argmax");
  c.consts.c1 = j.at("c1").at("value");
  c.c1.c1 = c.consts.c1;
  c.c1.max_ratio = j.at("c1").at("max_ratio");
  c.c1.corpus_size = j.at("c1").at("corpus_size");
  c.c1.positive = j.at("c1").at("positive");
  c.consts.Lambda = j.at("Lambda");
  c.coupling_fitted = j.at("coupling_fitted");
  c.fit.C4_prime = j.at("coupling").at("C4_prime");
  c.fit.C6_prime = j.at("coupling").at("C6_prime");
  c.fit.C_star = j.at("coupling").at("C_star");
  c.fit.n_paths = j.at("coupling").at("pilot_paths");
  return c;
}

// Everything that determines the calibrated numbers, and nothing else.
nlohmann::json calibration_key(const RunConfig& cfg) {
  const auto full = to_json(cfg);
  nlohmann::json k;
  k["version"] = 2;
  k["solver"] = full["solver"];
  k["solver"].erase("snapshot_stride");
  k["noise"] = full["noise"];
  k["functionals"] = full["functionals"];
  k["functionals"].erase("lambda_safety");
  k["coupling"] = full["coupling"];
  k["coupling"].erase("max_retries");
  k["coupling"].erase("independent_step1");
  k["seed"] = cfg.master_seed;
  return k;
}

bool coupling_possible(const RunConfig& cfg) {
  return cfg.noise.n_star >= 1 && cfg.noise.kind == NoiseKind::kComplex;
}

}  // namespace

Calibration calibrate(const RunConfig& cfg, bool use_cache, bool with_coupling) {
  const auto key = calibration_key(cfg);
  char name[64];
  std::snprintf(name, sizeof name, "calibration_%016llx.json", static_cast<unsigned long long>(config_hash(key)));
  const auto file = cfg.cache_dir / name;
  if (use_cache && std::filesystem::exists(file)) {
    try {
      std::ifstream is(file);
      const auto j = nlohmann::json::parse(is);
      auto c = calibration_from_json(j.at("calibration"));
      const bool complete = c.coupling_fitted || !with_coupling || !coupling_possible(cfg);
      if (j.at("key") == key && complete) {
        c.from_cache = true;
        c.cache_file = file;
        return c;
      }
    } catch (const std::exception&) {
      // unreadable cache entries are recomputed
    }
  }

  Calibration c;
  const auto space = cfg.space();
  const std::uint64_t seed = derived_seed(cfg.master_seed, 0xC0FFEE);
  if (cfg.functionals.c0 > 0.0) {
    c.consts.c0 = cfg.functionals.c0;
    c.c0.c0 = c.consts.c0;
    c.c0.argmax = "configured";
  } else {
    c.c0 = calibrate_c0(space, cfg.functionals.corpus_size, seed);
    c.consts.c0 = c.c0.c0;
  }
  if (cfg.functionals.c1 > 0.0) {
    c.consts.c1 = cfg.functionals.c1;
    c.c1.c1 = c.consts.c1;
  } else {
    c.c1 = calibrate_c1(space, c.consts.c0, cfg.functionals.corpus_size, seed + 1);
    c.consts.c1 = c.c1.c1;
  }
  c.consts.Lambda = cfg.functionals.Lambda;

  const auto& p = cfg.coupling.params;
  if (p.fitted()) {
    c.fit = {p.C4_prime, p.C6_prime, p.C_star, 0};
    c.coupling_fitted = true;
  } else if (with_coupling && coupling_possible(cfg)) {
    CouplingSetup setup{space, cfg.solver_config(), cfg.noise_spec(), c.consts, p};
    c.fit = fit_coupling_constants(setup, cfg.coupling.pilot_paths, seed + 2);
    if (p.C4_prime > 0.0) c.fit.C4_prime = p.C4_prime;
    if (p.C6_prime > 0.0) c.fit.C6_prime = p.C6_prime;
    if (p.C_star > 0.0) c.fit.C_star = p.C_star;
    c.coupling_fitted = true;
  }

  c.cache_file = file;
  try {
    std::filesystem::create_directories(cfg.cache_dir);
    std::ofstream os(file);
    os << nlohmann::json{{"key", key}, {"calibration", to_json(c)}}.dump(2) << '\n';
  } catch (const std::exception&) {
    c.cache_file.clear();  // a read-only cache directory only costs recomputation
  }
  return c;
}

CouplingSetup coupling_setup(const RunConfig& cfg, const Calibration& cal) {
  if (!cal.coupling_fitted) {
    throw std::domain_error("coupling needs complex noise with noise.n_star >= 1");
  }
  CouplingSetup s{cfg.space(), cfg.solver_config(), cfg.noise_spec(), cal.consts, cfg.coupling.params};
  s.params.C4_prime = cal.fit.C4_prime;
  s.params.C6_prime = cal.fit.C6_prime;
  s.params.C_star = cal.fit.C_star;
  return s;
}

SpectralField initial_field(const SpectralSpace& space, const std::string& kind, double target, double amplitude,
                            double decay, const FunctionalConstants& consts, SequentialRng& rng) {
  if (kind == "zero" || (kind == "random" && target == 0.0)) return SpectralField(space);
  if (kind == "e1") return SpectralField::mode(space, 1, amplitude);
  if (kind == "random") return random_field_with_energy(space, target, decay, consts, rng);
  throw std::invalid_argument("unknown initial datum '" + kind + "'");
}

std::vector<std::string> mixing_observable_names() {
  return {"H", "mass", "H1_norm", "Re_u1", "abs_u1_sq", "abs_u2_sq", "abs_u3_sq", "abs_u4_sq"};
}

std::vector<double> mixing_observables(FieldEvaluator& ev, std::span<const Complex> u, const FunctionalConstants& c) {
  const auto n = ev.norms(u);
  std::vector<double> o{n.hamiltonian(c.c0), n.mass, std::sqrt(n.gradient), u[0].real()};
  for (std::size_t k = 0; k < 4; ++k) o.push_back(k < u.size() ? std::norm(u[k]) : 0.0);
  return o;
}

// ---------------------------------------------------------------------------
// Trajectory files

void write_trajectory_binary(const std::filesystem::path& path, const std::vector<double>& times,
                             const std::vector<CVector>& states) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const std::uint64_t m = states.empty() ? 0 : states.front().size(), n = states.size();
  os.write("CNLSTRJ1", 8);
  os.write(reinterpret_cast<const char*>(&m), sizeof m);
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (std::size_t i = 0; i < n; ++i) {
    os.write(reinterpret_cast<const char*>(&times[i]), sizeof(double));
    os.write(reinterpret_cast<const char*>(states[i].data()), static_cast<std::streamsize>(m * sizeof(Complex)));
  }
}

std::pair<std::vector<double>, std::vector<CVector>> read_trajectory_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[8];
  std::uint64_t m = 0, n = 0;
  if (!is.read(magic, 8) || std::memcmp(magic, "CNLSTRJ1", 8) != 0) {
    throw std::runtime_error(path.string() + " is not a trajectory dump");
  }
  is.read(reinterpret_cast<char*>(&m), sizeof m);
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  std::vector<double> t(n);
  std::vector<CVector> s(n, CVector(m));
  for (std::size_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(&t[i]), sizeof(double));
    is.read(reinterpret_cast<char*>(s[i].data()), static_cast<std::streamsize>(m * sizeof(Complex)));
  }
  if (!is) throw std::runtime_error(path.string() + " is truncated");
  return {std::move(t), std::move(s)};
}

void write_trajectory_csv(const std::filesystem::path& path, const std::vector<double>& times,
                          const std::vector<CVector>& states) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t k = 0; k < states[i].size(); ++k) {
      rows.push_back({format_number(times[i]), std::to_string(k + 1), format_number(states[i][k].real()),
                      format_number(states[i][k].imag())});
    }
  }
  write_csv(path, {"t", "k", "re_u_k", "im_u_k"}, rows);
}

// ---------------------------------------------------------------------------
// simulate

ExperimentReport experiment_simulate(const ExperimentContext& ctx) {
  const Stopwatch clock;
  const auto& cfg = ctx.cfg;
  auto rep = make_report("simulate", ctx);
  const auto space = cfg.space();
  const auto solver = cfg.solver_config();
  const auto noise = cfg.noise_spec();
  auto rng = initial_rng(cfg.master_seed, 0);
  const auto u0 = initial_field(space, cfg.experiment.initial, cfg.experiment.H0, cfg.experiment.amplitude,
                                cfg.experiment.initial_decay, ctx.cal.consts, rng);
  const std::size_t n = steps_for(cfg.experiment.horizon, solver.dt);
  FieldEvaluator ev(space);
  Series l2{"l2_norm", "|u|", {}, {}, {}}, hs{"hamiltonian_star", "H_*", {}, {}, {}}, h{"hamiltonian", "H", {}, {}, {}};
  std::vector<double> times;
  std::vector<CVector> states;
  CVector u = u0.vector();
  run_plain(space, solver, noise, noise_stream(cfg.master_seed, 0), u, n, solver.snapshot_stride, 0,
            [&](std::size_t s, const CVector& v) {
              const double t = static_cast<double>(s) * solver.dt;
              const auto nm = ev.norms(v);
              for (auto* series : {&l2, &hs, &h}) series->t.push_back(t);
              l2.value.push_back(std::sqrt(nm.mass));
              hs.value.push_back(nm.hamiltonian_star());
              h.value.push_back(nm.hamiltonian(ctx.cal.consts.c0));
              times.push_back(t);
              states.push_back(v);
            });
  rep.series = {l2, hs, h};
  rep.counts["steps"] = n;
  rep.counts["snapshots"] = times.size();
  rep.add_scalar("l2_norm_initial", l2.value.front());
  rep.add_scalar("l2_norm_final", l2.value.back());
  rep.add_scalar("hamiltonian_star_initial", hs.value.front());
  rep.add_scalar("hamiltonian_star_final", hs.value.back());

  if (noise.is_zero()) {
    // Deterministic flow: the L2 norm contracts exactly at rate alpha.
    double worst = 0.0;
    for (std::size_t i = 0; i < l2.t.size(); ++i) {
      const double exact = std::exp(-solver.alpha * l2.t[i]) * l2.value.front();
      if (exact > 0) worst = std::max(worst, std::abs(l2.value[i] - exact) / exact);
    }
    rep.add_scalar("l2_contraction_max_rel_error", worst);
    rep.add_verdict("exact_contraction", worst <= 1e-8, "| |u(t)| - exp(-alpha t)|u0| | <= 1e-8 |u(t)| exact",
                    "max rel error " + fmt(worst));
    if (solver.alpha == 0.0) {
      double drift = 0.0;
      for (double v : hs.value) drift = std::max(drift, std::abs(v - hs.value.front()));
      const double scale = std::abs(hs.value.front());
      rep.add_scalar("hamiltonian_star_max_drift", drift);
      rep.add_verdict("conservation", drift <= 1e-4 * scale, "max |H_*(t) - H_*(0)| <= 1e-4 |H_*(0)|",
                      "drift " + fmt(drift) + " vs " + fmt(1e-4 * scale));
    }
  }
  if (cfg.experiment.write_trajectory) {
    std::filesystem::create_directories(ctx.out);
    write_trajectory_csv(ctx.out / "trajectory.csv", times, states);
    write_trajectory_binary(ctx.out / "trajectory.bin", times, states);
  }
  rep.wall_clock_s = clock.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// Foias-Prodi

namespace {

struct SyncSample {
  std::vector<double> J, l_integral, r2;
};

SyncSample run_sync_pair(const SpectralSpace& space, const SolverConfig& solver, const NoiseSpec& noise,
                         const FunctionalConstants& c, std::size_t cutoff, std::size_t n_steps, StreamId id,
                         CVector u1, CVector u2, std::size_t path) {
  Stepper s1(space, solver), s2(space, solver);
  const NoiseGenerator gen(noise, solver.dt, id);
  FieldEvaluator ev(space);
  std::copy_n(u1.begin(), cutoff, u2.begin());
  CVector f(u1.size()), r(u1.size());
  SyncSample out;
  double prev_l = 0.0, prev_t = 0.0;
  auto sample = [&](std::size_t s) {
    const double t = static_cast<double>(s) * solver.dt;
    const double H1 = ev.hamiltonian(u1, c), H2 = ev.hamiltonian(u2, c);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = u1[k] - u2[k];
    out.J.push_back(ev.coupling_J(u1, u2, r, H1, H2, c).second);
    out.r2.push_back(sobolev_norm_squared(space, r, 1.0));
    const double l = l_weight(H1, H2);
    const double integral = out.l_integral.empty() ? 0.0 : out.l_integral.back() + 0.5 * (l + prev_l) * (t - prev_t);
    out.l_integral.push_back(integral);
    prev_l = l;
    prev_t = t;
  };
  sample(0);
  for (std::size_t s = 0; s < n_steps; ++s) {
    gen.forcing(s, f);
    try {
      s1.step(u1, f, static_cast<std::ptrdiff_t>(s));
      s2.step(u2, f, static_cast<std::ptrdiff_t>(s));
    } catch (const NumericError& e) {
      throw BlowUp(e.what(), static_cast<std::ptrdiff_t>(s), path, u1);
    }
    std::copy_n(u1.begin(), cutoff, u2.begin());
    if (sample_due(s + 1, n_steps, solver.snapshot_stride)) sample(s + 1);
  }
  return out;
}

// Decay rate of the ensemble mean of |r|^2 by least squares of its logarithm
// over the sample times t >= t0.
double decay_rate(const std::vector<SyncSample>& paths, std::span<const std::size_t> idx,
                  const std::vector<double>& times, double t0) {
  std::vector<double> x, y;
  for (std::size_t t = 0; t < times.size(); ++t) {
    if (times[t] < t0) continue;
    double m = 0.0;
    for (auto i : idx) m += paths[i].r2[t];
    m /= static_cast<double>(idx.size());
    if (!(m > 0.0)) continue;
    x.push_back(times[t]);
    y.push_back(std::log(m));
  }
  if (x.size() < 2) return NAN;
  return -least_squares(x, y).slope;
}

}  // namespace

ExperimentReport experiment_foias_prodi(const ExperimentContext& ctx) {
  const Stopwatch clock;
  const auto& cfg = ctx.cfg;
  const auto& e = cfg.experiment;
  auto rep = make_report("foias-prodi", ctx);
  const auto space = cfg.space();
  const auto solver = cfg.solver_config();
  const auto noise = cfg.noise_spec();
  auto consts = ctx.cal.consts;
  const std::size_t n_steps = steps_for(e.horizon, solver.dt);
  const auto times = sample_times(n_steps, solver.snapshot_stride, solver.dt);

  // Both fields drawn at H = H0, then the second takes the low modes of the
  // first.  That can raise H(u2); a common shrink factor restores
  // max H <= H0 without breaking the synchronization.
  auto initial_pair = [&](std::uint64_t seed, std::size_t i, std::size_t cutoff) {
    auto rng = initial_rng(seed, i);
    auto a = initial_field(space, e.initial, e.H0, e.amplitude, e.initial_decay, consts, rng).vector();
    auto b = initial_field(space, e.initial, e.H0, e.amplitude, e.initial_decay, consts, rng).vector();
    std::copy_n(a.begin(), cutoff, b.begin());
    FieldEvaluator ev(space);
    auto worst = [&](double s) {
      CVector sa(a), sb(b);
      for (auto& z : sa) z *= s;
      for (auto& z : sb) z *= s;
      return std::max(ev.hamiltonian(sa, consts), ev.hamiltonian(sb, consts));
    };
    if (worst(1.0) > e.H0) {
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 100; ++it) (worst(0.5 * (lo + hi)) > e.H0 ? hi : lo) = 0.5 * (lo + hi);
      for (auto& z : a) z *= lo;
      for (auto& z : b) z *= lo;
    }
    return std::tuple{a, b, worst(1.0)};
  };
  double H_initial_max = 0.0;
  auto ensemble = [&](std::uint64_t seed, std::size_t cutoff, std::size_t M) {
    std::vector<SyncSample> paths(M);
    std::vector<double> h(M);
    parallel_for(M, ctx.jobs, [&](std::size_t i) {
      auto [a, b, H] = initial_pair(seed, i, cutoff);
      h[i] = H;
      paths[i] = run_sync_pair(space, solver, noise, consts, cutoff, n_steps, noise_stream(seed, i), a, b, i);
    });
    H_initial_max = std::max(H_initial_max, *std::max_element(h.begin(), h.end()));
    return paths;
  };

  // Lambda from a pilot ensemble with its own seed.
  if (consts.Lambda <= 0.0) {
    const std::uint64_t pilot_seed = derived_seed(cfg.master_seed, 0xF0F0);
    const auto pilot = ensemble(pilot_seed, e.N, std::max<std::size_t>(e.paths / 2, 20));
    std::vector<FoiasProdiPath> parts;
    for (const auto& p : pilot) parts.push_back({p.J, p.l_integral});
    const double fitted = fit_lambda(parts, times, solver.alpha, e.N);
    consts.Lambda = cfg.functionals.lambda_safety * fitted;
    rep.add_scalar("Lambda_pilot_fit", fitted);
    rep.counts["pilot_paths"] = pilot.size();
    rep.notes.push_back("Lambda fitted on an independent pilot ensemble, times lambda_safety");
  }
  rep.add_scalar("Lambda", consts.Lambda);

  const auto main = ensemble(cfg.master_seed, e.N, e.paths);
  rep.counts["paths"] = main.size();
  rep.counts["N"] = e.N;

  // J_FP along each path and its paired difference from J(0).
  std::vector<std::vector<double>> fp(main.size()), diff(main.size()), r2(main.size());
  std::vector<double> j0(main.size());
  for (std::size_t i = 0; i < main.size(); ++i) {
    fp[i] = foias_prodi_from_parts({main[i].J, main[i].l_integral}, times, solver.alpha, e.N, consts.Lambda);
    j0[i] = main[i].J.front();
    diff[i].resize(fp[i].size());
    for (std::size_t t = 0; t < fp[i].size(); ++t) diff[i][t] = fp[i][t] - j0[i];
    r2[i] = main[i].r2;
  }
  Series s_fp{"J_FP_mean", "E J_FP", times, {}, {}}, s_r2{"r_sq_mean", "E |r|^2", times, {}, {}};
  column_stats(fp, s_fp.value, s_fp.stderr_);
  column_stats(r2, s_r2.value, s_r2.stderr_);
  std::vector<double> dmean, dse;
  column_stats(diff, dmean, dse);
  const auto J0 = mean_stderr(j0);
  rep.add_scalar("J0_mean", J0.mean, J0.stderr_);
  double worst = -INFINITY;
  std::size_t worst_t = 0;
  bool ok = true;
  for (std::size_t t = 0; t < times.size(); ++t) {
    const double margin = dmean[t] - 2.0 * dse[t];
    if (margin > 0.0) ok = false;
    if (dmean[t] - 2.0 * dse[t] > worst) {
      worst = dmean[t] - 2.0 * dse[t];
      worst_t = t;
    }
  }
  rep.add_verdict("fp_mean_bound", ok, "mean J_FP(t) <= J(0) + 2 stderr for every sample time",
                  "max of mean(J_FP - J0) - 2 se = " + fmt(worst) + " at t = " + fmt(times[worst_t]));
  rep.series = {s_fp, s_r2};

  // Decay rate of E|r|^2 against N.  Common random numbers across N.
  const double t0 = std::min(1.0, 0.25 * e.horizon);
  std::vector<std::size_t> scan = e.N_scan;
  std::sort(scan.begin(), scan.end());
  Series s_rate{"decay_rate_vs_N", "rate", {}, {}, {}};
  std::vector<double> rates;
  for (auto N : scan) {
    std::vector<SyncSample> paths;
    if (N == e.N && e.scan_paths <= main.size()) {
      paths.assign(main.begin(), main.begin() + static_cast<std::ptrdiff_t>(e.scan_paths));
    } else {
      paths = ensemble(cfg.master_seed, N, e.scan_paths);
    }
    std::vector<std::size_t> all(paths.size());
    std::iota(all.begin(), all.end(), 0);
    const double rate = decay_rate(paths, all, times, t0);
    const double se = bootstrap_stderr(paths.size(), e.bootstrap, cfg.master_seed + N,
                                       [&](std::span<const std::size_t> idx) { return decay_rate(paths, idx, times, t0); });
    rates.push_back(rate);
    s_rate.t.push_back(static_cast<double>(N));
    s_rate.value.push_back(rate);
    s_rate.stderr_.push_back(se);
    rep.add_scalar("decay_rate_N" + std::to_string(N), rate, se);
  }
  bool increasing = rates.size() >= 2;
  std::string detail;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (i > 0 && !(rates[i] > rates[i - 1])) increasing = false;
    detail += (i ? ", " : "") + std::string("N=") + std::to_string(scan[i]) + ": " + fmt(rates[i]);
  }
  rep.add_verdict("decay_rate_increases_with_N", increasing,
                  "fitted decay rate of E|r|^2 strictly increasing over the N scan", detail);
  rep.series.push_back(s_rate);
  rep.counts["scan_paths"] = e.scan_paths;
  rep.add_scalar("H_initial_max", H_initial_max);
  rep.add_verdict("initial_energy", H_initial_max <= e.H0, "H(u0^i) <= H0 for both systems on every path",
                  "max " + fmt(H_initial_max, 10));
  rep.wall_clock_s = clock.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// Lyapunov decay

ExperimentReport experiment_lyapunov(const ExperimentContext& ctx) {
  const Stopwatch clock;
  const auto& cfg = ctx.cfg;
  const auto& e = cfg.experiment;
  auto rep = make_report("lyapunov", ctx);
  const auto space = cfg.space();
  const auto solver = cfg.solver_config();
  const auto noise = cfg.noise_spec();
  const auto& c = ctx.cal.consts;
  auto rng = initial_rng(cfg.master_seed, 0);
  const auto u0 = initial_field(space, e.initial, e.H0, e.amplitude, e.initial_decay, c, rng);
  FieldEvaluator ev0(space);
  const double H0 = ev0.hamiltonian(u0.vector(), c);
  const std::size_t n_steps = steps_for(e.horizon, solver.dt);
  const auto times = sample_times(n_steps, solver.snapshot_stride, solver.dt);
  const std::size_t M = noise.is_zero() ? 1 : e.paths;

  std::vector<std::vector<double>> Hk(M);
  parallel_for(M, ctx.jobs, [&](std::size_t i) {
    FieldEvaluator ev(space);
    CVector u = u0.vector();
    run_plain(space, solver, noise, noise_stream(cfg.master_seed, i), u, n_steps, solver.snapshot_stride, i,
              [&](std::size_t, const CVector& v) { Hk[i].push_back(std::pow(ev.hamiltonian(v, c), e.k)); });
  });
  Series s{"EH_k", "E H^k", times, {}, {}};
  column_stats(Hk, s.value, s.stderr_);
  if (M < 2) s.stderr_.assign(s.value.size(), 0.0);

  // Plateau: mean of the series over the stationary tail.
  const double tail_start = (1.0 - e.tail_fraction) * e.horizon;
  double plateau = 0.0;
  std::size_t n_tail = 0;
  for (std::size_t t = 0; t < times.size(); ++t) {
    if (times[t] >= tail_start) {
      plateau += s.value[t];
      ++n_tail;
    }
  }
  plateau /= static_cast<double>(std::max<std::size_t>(n_tail, 1));
  const double H0k = std::pow(H0, e.k);
  bool ok = true;
  double worst = -INFINITY;
  Series bound{"bound", "H0^k exp(-alpha k t) + plateau", times, {}, {}};
  for (std::size_t t = 0; t < times.size(); ++t) {
    const double b = H0k * std::exp(-solver.alpha * e.k * times[t]) + plateau;
    bound.value.push_back(b);
    const double excess = s.value[t] - b - 3.0 * s.stderr_[t];
    worst = std::max(worst, excess);
    if (excess > 0.0) ok = false;
  }
  rep.add_scalar("H0", H0);
  rep.add_scalar("plateau", plateau);
  rep.add_verdict("lyapunov_bound", ok, "E H^k(t) <= H0^k exp(-alpha k t) + plateau + 3 stderr for all t",
                  "max excess " + fmt(worst));
  if (noise.is_zero() && solver.alpha > 0.0) {
    bool decreasing = true;
    for (std::size_t t = 1; t < times.size(); ++t) decreasing = decreasing && s.value[t] < s.value[t - 1];
    rep.add_verdict("deterministic_decrease", decreasing || H0 == 0.0, "H strictly decreasing along the noise-free flow");
  }

  // Relaxation rate from the transient, where it clearly exceeds the plateau.
  std::vector<double> x, y;
  for (std::size_t t = 0; t < times.size(); ++t) {
    const double gap = s.value[t] - plateau;
    if (times[t] < tail_start && gap > 0.05 * (H0k - plateau) && gap > 5.0 * s.stderr_[t]) {
      x.push_back(times[t]);
      y.push_back(std::log(gap));
    }
  }
  if (x.size() >= 3) {
    const auto fit = least_squares(x, y);
    rep.add_scalar("relaxation_rate", -fit.slope, fit.slope_stderr);
  }
  rep.series = {s, bound};
  rep.counts["paths"] = M;
  rep.counts["k"] = static_cast<std::uint64_t>(e.k);
  rep.wall_clock_s = clock.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// Energy growth tails

ExperimentReport experiment_energy_growth(const ExperimentContext& ctx) {
  const Stopwatch clock;
  const auto& cfg = ctx.cfg;
  const auto& e = cfg.experiment;
  auto rep = make_report("energy-growth", ctx);
  const auto space = cfg.space();
  const auto solver = cfg.solver_config();
  const auto noise = cfg.noise_spec();
  const auto& c = ctx.cal.consts;
  const int k = e.growth_k;
  auto rng = initial_rng(cfg.master_seed, 0);
  const auto u0 = initial_field(space, e.initial, e.H0, e.amplitude, e.initial_decay, c, rng);
  FieldEvaluator ev0(space);
  const double H0 = ev0.hamiltonian(u0.vector(), c);
  const std::size_t n_steps = steps_for(e.horizon, solver.dt);
  const auto times = sample_times(n_steps, solver.snapshot_stride, solver.dt);
  const std::size_t M = e.paths;

  std::vector<std::vector<double>> E(M);
  parallel_for(M, ctx.jobs, [&](std::size_t i) {
    FieldEvaluator ev(space);
    EnergyAccumulator acc(k, solver.alpha);
    CVector u = u0.vector();
    run_plain(space, solver, noise, noise_stream(cfg.master_seed, i), u, n_steps, solver.snapshot_stride, i,
              [&](std::size_t s, const CVector& v) {
                acc.add(static_cast<double>(s) * solver.dt, ev.hamiltonian(v, c));
                E[i].push_back(acc.value());
              });
  });

  // Growth rate C_k' = mean (E(T) - H0^k) / T on two disjoint halves.
  const double H0k = std::pow(H0, k);
  auto slope_of = [&](std::size_t from, std::size_t to) {
    std::vector<double> v;
    for (std::size_t i = from; i < to; ++i) v.push_back((E[i].back() - H0k) / e.horizon);
    return mean_stderr(v);
  };
  const auto half_a = slope_of(0, M / 2), half_b = slope_of(M / 2, M), all = slope_of(0, M);
  const double Ck = all.mean;
  rep.add_scalar("C_k_prime", Ck, all.stderr_);
  rep.add_scalar("C_k_prime_half_a", half_a.mean, half_a.stderr_);
  rep.add_scalar("C_k_prime_half_b", half_b.mean, half_b.stderr_);
  const double rel = std::abs(half_a.mean - half_b.mean) / std::max(std::abs(Ck), 1e-300);
  rep.add_verdict("growth_rate_split_stable", rel <= 0.2, "|C'_a - C'_b| <= 0.2 C' on disjoint halves",
                  "relative difference " + fmt(rel));

  // Normalized excursions Z = (sup_t (E(t) - C' t) - H0^k) / (H0^{2k} + T).
  std::vector<double> Z(M);
  for (std::size_t i = 0; i < M; ++i) {
    double sup = -INFINITY;
    for (std::size_t t = 0; t < times.size(); ++t) sup = std::max(sup, E[i][t] - Ck * times[t]);
    Z[i] = (sup - H0k) / (std::pow(H0, 2 * k) + e.horizon);
  }
  std::vector<double> rho = e.rho_scan;
  std::sort(rho.begin(), rho.end());
  Series s{"exceedance", "P(excursion >= rho)", rho, {}, {}};
  for (double r : rho) {
    const double f = static_cast<double>(std::count_if(Z.begin(), Z.end(), [r](double z) { return z >= r; })) /
                     static_cast<double>(M);
    s.value.push_back(f);
    s.stderr_.push_back(std::sqrt(std::max(f * (1 - f), 1.0 / static_cast<double>(M)) / static_cast<double>(M)));
  }
  bool monotone = true;
  for (std::size_t j = 1; j < rho.size(); ++j) monotone = monotone && s.value[j] <= s.value[j - 1];
  rep.add_verdict("exceedance_monotone", monotone, "exceedance frequency nonincreasing in rho");
  for (int p : {1, 2}) {
    bool ok = true;
    for (std::size_t j = 1; j < rho.size(); ++j) {
      if (s.value[j - 1] > 0.2) continue;  // not yet in the tail
      const double bound = s.value[j - 1] * std::pow(rho[j - 1] / rho[j], p) + 2.0 * s.stderr_[j];
      if (s.value[j] > bound) ok = false;
    }
    rep.add_verdict("tail_order_p" + std::to_string(p), ok,
                    "f(rho') <= f(rho) (rho/rho')^p + 2 stderr on consecutive tail points, p = " + std::to_string(p));
  }
  rep.add_scalar("H0", H0);
  rep.series = {s};
  rep.counts["paths"] = M;
  rep.counts["k"] = static_cast<std::uint64_t>(k);
  rep.wall_clock_s = clock.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// Small-ball hitting

ExperimentReport experiment_small_ball(const ExperimentContext& ctx) {
  const Stopwatch clock;
  const auto& cfg = ctx.cfg;
  const auto& e = cfg.experiment;
  auto rep = make_report("small-ball", ctx);
  const auto space = cfg.space();
  const auto solver = cfg.solver_config();
  const auto noise = cfg.noise_spec();
  const auto& c = ctx.cal.consts;
  const std::size_t n_steps = steps_for(e.hit_time, solver.dt);
  const std::size_t M = e.paths;
  std::vector<double> R1 = e.R1_grid;
  std::sort(R1.begin(), R1.end());

  bool positive = true, nested = true;
  for (std::size_t g = 0; g < e.R0_grid.size(); ++g) {
    const double R0 = e.R0_grid[g];
    auto rng = initial_rng(cfg.master_seed, 1000 + g);
    const auto a = random_field_with_energy(space, 0.5 * R0, e.initial_decay, c, rng);
    const auto b = random_field_with_energy(space, 0.5 * R0, e.initial_decay, c, rng);
    std::vector<double> sums(M);
    parallel_for(M, ctx.jobs, [&](std::size_t i) {
      // Trivial coupling: both systems see the same increments.
      FieldEvaluator ev(space);
      CVector u1 = a.vector(), u2 = b.vector();
      const auto id = noise_stream(cfg.master_seed, g * M + i);
      run_plain(space, solver, noise, id, u1, n_steps, n_steps, i, {});
      run_plain(space, solver, noise, id, u2, n_steps, n_steps, i, {});
      sums[i] = ev.hamiltonian(u1, c) + ev.hamiltonian(u2, c);
    });
    Series s{"hit_R0_" + fmt(R0, 3), "P(H1 + H2 <= R1)", R1, {}, {}};
    for (double r : R1) {
      const double p = static_cast<double>(std::count_if(sums.begin(), sums.end(), [r](double x) { return x <= r; })) /
                       static_cast<double>(M);
      const double se = std::sqrt(p * (1 - p) / static_cast<double>(M));
      s.value.push_back(p);
      s.stderr_.push_back(se);
      rep.add_scalar("pi_R0_" + fmt(R0, 3) + "_R1_" + fmt(r, 3), p, se);
      if (!(p - 3.0 * se > 0.0)) positive = false;
    }
    for (std::size_t j = 1; j < s.value.size(); ++j) nested = nested && s.value[j - 1] <= s.value[j];
    rep.series.push_back(s);
  }
  rep.add_verdict("hitting_probability_positive", positive, "estimate - 3 stderr > 0 at every (R0, R1)");
  rep.add_verdict("nested_in_R1", nested, "estimate nondecreasing in R1");
  rep.counts["paths"] = M;
  rep.wall_clock_s = clock.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// Dispatch

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"simulate", "foias-prodi", "lyapunov", "energy-growth",
                                              "small-ball", "couple", "mixing", "calibrate"};
  return names;
}

ExperimentReport run_experiment(const std::string& name, const ExperimentContext& ctx) {
  if (name == "simulate") return experiment_simulate(ctx);
  if (name == "foias-prodi") return experiment_foias_prodi(ctx);
  if (name == "lyapunov") return experiment_lyapunov(ctx);
  if (name == "energy-growth") return experiment_energy_growth(ctx);
  if (name == "small-ball") return experiment_small_ball(ctx);
  if (name == "couple") return experiment_couple(ctx);
  if (name == "mixing") return experiment_mixing(ctx);
  if (name == "calibrate") return experiment_calibrate(ctx);
  throw std::invalid_argument("unknown experiment '" + name + "'");
}

}  // namespace cnls
