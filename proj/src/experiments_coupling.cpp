// couple, mixing and calibrate.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

#include "cnls/experiments.hpp"
#include "cnls/statistics.hpp"
#include "cnls/wasserstein.hpp"
#include "experiments_detail.hpp"

namespace cnls {

using namespace detail;

namespace {

struct PairData {
  SpectralField a, b;
};

// u0^1 = 0 (or H = H0) and u0^2 with H = H1, fixed across paths.
PairData two_ensemble_data(const ExperimentContext& ctx) {
  const auto& e = ctx.cfg.experiment;
  const auto space = ctx.cfg.space();
  auto rng = initial_rng(ctx.cfg.master_seed, 0);
  SpectralField a = e.zero_first ? SpectralField(space)
                                 : random_field_with_energy(space, e.H0, e.initial_decay, ctx.cal.consts, rng);
  SpectralField b = random_field_with_energy(space, e.H1, e.initial_decay, ctx.cal.consts, rng);
  return {a, b};
}

// H at time `horizon` for plain runs from u0, on a noise seed unrelated to the
// coupled runs.
std::vector<double> plain_energies(const ExperimentContext& ctx, const SpectralField& u0, double horizon,
                                   std::size_t M, std::uint64_t salt) {
  const auto space = ctx.cfg.space();
  const auto solver = ctx.cfg.solver_config();
  const auto noise = ctx.cfg.noise_spec();
  const std::uint64_t seed = derived_seed(ctx.cfg.master_seed, salt);
  const std::size_t n = steps_for(horizon, solver.dt);
  std::vector<double> H(M);
  parallel_for(M, ctx.jobs, [&](std::size_t i) {
    FieldEvaluator ev(space);
    CVector u = u0.vector();
    run_plain(space, solver, noise, noise_stream(seed, i), u, n, n, i, {});
    H[i] = ev.hamiltonian(u, ctx.cal.consts);
  });
  return H;
}

struct CoupledEnsemble {
  std::vector<CoupledRun> runs;
  std::vector<std::vector<std::vector<double>>> obs1, obs2;  // [epoch][path][observable]
  std::uint64_t l0_violations = 0;
};

CoupledEnsemble coupled_ensemble(const ExperimentContext& ctx, const PairData& data, std::size_t M,
                                 std::size_t epochs, bool observe) {
  const auto setup = coupling_setup(ctx.cfg, ctx.cal);
  CoupledEnsemble out;
  out.runs.resize(M);
  if (observe) {
    out.obs1.assign(epochs + 1, std::vector<std::vector<double>>(M));
    out.obs2 = out.obs1;
  }
  const auto before = L0Record::violations();
  parallel_for(M, ctx.jobs, [&](std::size_t i) {
    FieldEvaluator ev(setup.space);
    EpochObserver obs;
    if (observe) {
      obs = [&](std::size_t k, const CVector& u1, const CVector& u2) {
        out.obs1[k][i] = mixing_observables(ev, u1, setup.consts);
        out.obs2[k][i] = mixing_observables(ev, u2, setup.consts);
      };
    }
    try {
      out.runs[i] = run_coupled(data.a, data.b, epochs, setup, ctx.cfg.master_seed, static_cast<std::uint32_t>(i), obs);
    } catch (const NumericError& err) {
      throw BlowUp(err.what(), err.where(), i, data.b.vector());
    }
  });
  out.l0_violations = L0Record::violations() - before;
  return out;
}

void write_epochs(const std::filesystem::path& file, const std::vector<CoupledRun>& runs) {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (const auto& r : runs[i].epochs) {
      std::ostringstream line;
      write_jsonl(line, r);
      auto j = nlohmann::json::parse(line.str());
      j["path"] = i;
      os << j.dump() << '\n';
    }
  }
}

struct EpochTally {
  std::uint64_t a = 0, a_success = 0, b = 0, trivial = 0, drift_violations = 0, exhausted = 0;
  std::uint64_t small_ball = 0;
  double max_drift_ratio = 0.0;
};

EpochTally tally(const std::vector<CoupledRun>& runs) {
  EpochTally t;
  for (const auto& run : runs) {
    for (const auto& r : run.epochs) {
      switch (r.branch) {
        case Branch::kA:
          ++t.a;
          t.a_success += r.met;
          t.small_ball += r.reached_small_ball;
          break;
        case Branch::kB:
          ++t.b;
          if (r.drift_energy > r.drift_budget) ++t.drift_violations;
          if (r.drift_budget > 0) t.max_drift_ratio = std::max(t.max_drift_ratio, r.drift_energy / r.drift_budget);
          break;
        default: ++t.trivial;
      }
      t.exhausted += r.retries_exhausted;
    }
  }
  return t;
}

void add_tally(ExperimentReport& rep, const EpochTally& t, std::uint64_t l0_violations) {
  rep.counts["epochs_case_a"] = t.a;
  rep.counts["epochs_case_a_coupled"] = t.a_success;
  rep.counts["epochs_case_a_small_ball"] = t.small_ball;
  rep.counts["epochs_case_b"] = t.b;
  rep.counts["epochs_trivial"] = t.trivial;
  rep.counts["drift_budget_violations"] = t.drift_violations;
  rep.counts["l0_violations"] = l0_violations;
  rep.counts["residual_retries_exhausted"] = t.exhausted;
  rep.add_scalar("max_drift_over_budget", t.max_drift_ratio);
  rep.add_verdict("drift_budget", t.drift_violations == 0,
                  "int |d|^2 dt <= budget on every case-b epoch",
                  std::to_string(t.drift_violations) + " violations in " + std::to_string(t.b) + " epochs");
  rep.add_verdict("l0_bookkeeping", l0_violations == 0, "l0 consistency conditions hold at every epoch",
                  std::to_string(l0_violations) + " violations");
}

// Fraction of runs with finite l0 and mean distance at each epoch boundary.
void add_coupling_series(ExperimentReport& rep, const std::vector<CoupledRun>& runs, std::size_t epochs, double T) {
  Series met{"coupled_fraction", "P(l0 finite)", {}, {}, {}}, dist{"distance", "E |u1 - u2|", {}, {}, {}};
  const double M = static_cast<double>(runs.size());
  for (std::size_t k = 0; k <= epochs; ++k) {
    std::vector<double> d;
    double f = 0.0;
    for (const auto& r : runs) {
      f += r.l0[k] != kL0Infinity;
      d.push_back(r.distance[k]);
    }
    f /= M;
    const auto ms = mean_stderr(d);
    met.t.push_back(static_cast<double>(k) * T);
    met.value.push_back(f);
    met.stderr_.push_back(std::sqrt(f * (1 - f) / M));
    dist.t.push_back(static_cast<double>(k) * T);
    dist.value.push_back(ms.mean);
    dist.stderr_.push_back(ms.stderr_);
  }
  rep.series.push_back(met);
  rep.series.push_back(dist);

  // Coupling time: first epoch of the final finite-l0 run.
  std::vector<std::uint64_t> hist(epochs + 2, 0);
  for (const auto& r : runs) ++hist[r.coupling_epoch ? *r.coupling_epoch : epochs + 1];
  Series ct{"coupling_time", "fraction", {}, {}, {}};
  for (std::size_t k = 0; k <= epochs; ++k) {
    ct.t.push_back(static_cast<double>(k) * T);
    const double f = static_cast<double>(hist[k]) / M;
    ct.value.push_back(f);
    ct.stderr_.push_back(std::sqrt(f * (1 - f) / M));
    char key[40];
    std::snprintf(key, sizeof key, "coupled_at_epoch_%02zu", k);
    rep.counts[key] = hist[k];
  }
  rep.counts["not_coupled"] = hist[epochs + 1];
  rep.series.push_back(ct);
}

}  // namespace

// ---------------------------------------------------------------------------
// couple

ExperimentReport experiment_couple(const ExperimentContext& ctx) {
  const Stopwatch clock;
  const auto& cfg = ctx.cfg;
  const auto& e = cfg.experiment;
  auto rep = make_report("couple", ctx);
  const auto data = two_ensemble_data(ctx);
  const double T = cfg.coupling.params.T;
  const auto ens = coupled_ensemble(ctx, data, e.paths, e.epochs, false);
  write_epochs(ctx.out / "epochs.jsonl", ens.runs);

  const auto t = tally(ens.runs);
  add_tally(rep, t, ens.l0_violations);
  rep.add_verdict("case_a_succeeds", t.a_success > 0, "at least one case-a epoch ends coupled",
                  std::to_string(t.a_success) + " of " + std::to_string(t.a));
  add_coupling_series(rep, ens.runs, e.epochs, T);

  // Each coupled marginal against plain runs.
  const double horizon = static_cast<double>(e.epochs) * T;
  FieldEvaluator ev(cfg.space());
  std::vector<double> H1, H2;
  for (const auto& r : ens.runs) {
    H1.push_back(ev.hamiltonian(r.u1, ctx.cal.consts));
    H2.push_back(ev.hamiltonian(r.u2, ctx.cal.consts));
  }
  const auto p1 = plain_energies(ctx, data.a, horizon, e.paths, 0xA11);
  const auto p2 = plain_energies(ctx, data.b, horizon, e.paths, 0xB22);
  const auto ks1 = ks_two_sample(H1, p1), ks2 = ks_two_sample(H2, p2);
  rep.add_scalar("ks_first_statistic", ks1.statistic);
  rep.add_scalar("ks_first_p", ks1.p_value);
  rep.add_scalar("ks_second_statistic", ks2.statistic);
  rep.add_scalar("ks_second_p", ks2.p_value);
  rep.add_verdict("marginal_first", ks1.p_value >= 0.01, "KS of H(u1(KT)) against plain runs, p >= 0.01",
                  "p = " + fmt(ks1.p_value));
  rep.add_verdict("marginal_second", ks2.p_value >= 0.01, "KS of H(u2(KT)) against plain runs, p >= 0.01",
                  "p = " + fmt(ks2.p_value));
  rep.counts["paths"] = e.paths;
  rep.counts["epochs"] = e.epochs;
  rep.notes.push_back("epoch log: epochs.jsonl");
  rep.wall_clock_s = clock.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// mixing

ExperimentReport experiment_mixing(const ExperimentContext& ctx) {
  const Stopwatch clock;
  const auto& cfg = ctx.cfg;
  const auto& e = cfg.experiment;
  auto rep = make_report("mixing", ctx);
  const auto data = two_ensemble_data(ctx);
  const double T = cfg.coupling.params.T;
  const std::size_t K = e.epochs, M = e.paths;
  if (K < 2) throw std::domain_error("mixing needs experiment.epochs >= 2");
  const auto ens = coupled_ensemble(ctx, data, M, K, true);
  write_epochs(ctx.out / "epochs.jsonl", ens.runs);
  const auto t = tally(ens.runs);
  add_tally(rep, t, ens.l0_violations);
  add_coupling_series(rep, ens.runs, K, T);

  // W(kT) between the two coupled ensembles.
  Series w{"wasserstein", "W(kT)", {}, {}, {}};
  std::vector<double> wk(K + 1);
  for (std::size_t k = 0; k <= K; ++k) {
    const auto est = wasserstein_bl(ens.obs1[k], ens.obs2[k]);
    wk[k] = est.max;
    w.t.push_back(static_cast<double>(k) * T);
    w.value.push_back(est.max);
    w.stderr_.push_back(k == 0 ? 0.0 : wasserstein_bl_stderr(ens.obs1[k], ens.obs2[k], e.bootstrap, cfg.master_seed + k, true));
    if (k == 1 || k == K) {
      const auto names = mixing_observable_names();
      rep.notes.push_back("W(" + std::to_string(k) + "T) attained by " + names[est.argmax]);
    }
  }
  rep.series.push_back(w);

  // Paired bootstrap of W(T) - W(KT) and of the decay exponent.
  auto resampled = [&](std::size_t k, std::span<const std::size_t> idx) {
    std::vector<std::vector<double>> a, b;
    for (auto i : idx) {
      a.push_back(ens.obs1[k][i]);
      b.push_back(ens.obs2[k][i]);
    }
    return wasserstein_bl(a, b).max;
  };
  const double gap = wk[1] - wk[K];
  const double gap_se = bootstrap_stderr(M, e.bootstrap, cfg.master_seed ^ 0x9A9, [&](std::span<const std::size_t> idx) {
    return resampled(1, idx) - resampled(K, idx);
  });
  rep.add_scalar("W_T", wk[1], w.stderr_[1]);
  rep.add_scalar("W_KT", wk[K], w.stderr_[K]);
  rep.add_scalar("W_gap", gap, gap_se);
  rep.add_verdict("wasserstein_decreases", gap > 3.0 * gap_se, "W(KT) < W(T) - 3 stderr (paired bootstrap)",
                  "gap " + fmt(gap) + ", stderr " + fmt(gap_se));

  // Power-law exponent: log W(kT) against log(1 + kT), k >= 1.
  auto exponent = [&](const std::vector<double>& values) {
    std::vector<double> x, y;
    for (std::size_t k = 1; k <= K; ++k) {
      if (!(values[k] > 0.0)) continue;
      x.push_back(std::log1p(static_cast<double>(k) * T));
      y.push_back(std::log(values[k]));
    }
    return x.size() >= 2 ? -least_squares(x, y).slope : NAN;
  };
  const double q = exponent(wk);
  const double q_se = bootstrap_stderr(M, e.bootstrap, cfg.master_seed ^ 0x9AA, [&](std::span<const std::size_t> idx) {
    std::vector<double> v(K + 1);
    for (std::size_t k = 1; k <= K; ++k) v[k] = resampled(k, idx);
    return exponent(v);
  });
  rep.add_scalar("decay_exponent", q, q_se);
  rep.add_verdict("decay_exponent_positive", q > 2.0 * q_se, "fitted exponent q > 0 at 2 stderr",
                  "q = " + fmt(q) + " +- " + fmt(q_se));

  // Marginal gate: the second coupled ensemble against plain runs.
  std::vector<double> H2;
  for (std::size_t i = 0; i < M; ++i) H2.push_back(ens.obs2[K][i][0]);
  const auto plain = plain_energies(ctx, data.b, static_cast<double>(K) * T, M, 0xB33);
  const auto ks = ks_two_sample(H2, plain);
  rep.add_scalar("ks_second_p", ks.p_value);
  rep.add_verdict("marginal_second", ks.p_value >= 0.01, "KS of H(u2(KT)) against plain runs, p >= 0.01",
                  "p = " + fmt(ks.p_value));
  rep.counts["paths"] = M;
  rep.counts["epochs"] = K;
  rep.wall_clock_s = clock.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// calibrate

ExperimentReport experiment_calibrate(const ExperimentContext& ctx) {
  const Stopwatch clock;
  const auto& cfg = ctx.cfg;
  auto rep = make_report("calibrate", ctx);
  const auto space = cfg.space();
  const auto& c = ctx.cal.consts;
  rep.add_scalar("c0", c.c0);
  rep.add_scalar("c1", c.c1);
  rep.add_verdict("c0_positive", c.c0 > 0.0, "c0 > 0");
  rep.add_verdict("c1_positive", c.c1 > 0.0, "c1 > 0");
  if (ctx.cal.coupling_fitted) {
    rep.add_scalar("C4_prime", ctx.cal.fit.C4_prime);
    rep.add_scalar("C6_prime", ctx.cal.fit.C6_prime);
    rep.add_scalar("C_star", ctx.cal.fit.C_star);
  }

  // Fresh fields with log-uniform amplitudes on their own stream.
  SequentialRng rng(StreamId{cfg.master_seed, static_cast<std::uint64_t>(Lane::kCalibration), 7});
  auto field = [&](double decay, double scale) {
    SpectralField u(space);
    for (std::size_t k = 1; k <= space.n_modes(); ++k) {
      u[k] = scale * std::pow(static_cast<double>(k), -decay) * Complex(rng.normal(), rng.normal());
    }
    return u;
  };
  FieldEvaluator ev(space);
  const std::size_t n = 10000;
  std::size_t bad_h = 0, bad_j = 0;
  double worst_h = INFINITY, worst_j = INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = field(0.5 + 0.25 * static_cast<double>(i % 6), std::pow(10.0, -1.0 + 2.0 * rng.uniform()));
    const auto nv = ev.norms(v.coeffs());
    const double ratio = nv.hamiltonian(c.c0) / (0.25 * nv.gradient);
    worst_h = std::min(worst_h, ratio);
    bad_h += ratio < 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::pow(10.0, -1.0 + 2.0 * rng.uniform());
    const auto u1 = field(1.0, s);
    const auto u2 = field(1.0, s * 2 * rng.uniform());
    const auto r = field(1.0 + rng.uniform(), 1.0);
    const double H1 = ev.hamiltonian(u1.coeffs(), c), H2 = ev.hamiltonian(u2.coeffs(), c);
    const double j = ev.coupling_J(u1.coeffs(), u2.coeffs(), r.coeffs(), H1, H2, c).second;
    const double ratio = j / (0.25 * sobolev_norm_squared(space, r.coeffs(), 1.0));
    worst_j = std::min(worst_j, ratio);
    bad_j += ratio < 1.0;
  }
  rep.add_scalar("coercivity_min_ratio", worst_h);
  rep.add_scalar("J_min_ratio", worst_j);
  rep.counts["coercivity_samples"] = n;
  rep.counts["coercivity_violations"] = bad_h;
  rep.counts["J_violations"] = bad_j;
  rep.add_verdict("coercivity", bad_h == 0, "H(v) >= 1/4 ||v||^2 on 10^4 random fields",
                  std::to_string(bad_h) + " violations, min ratio " + fmt(worst_h));
  rep.add_verdict("J_lower_bound", bad_j == 0, "J >= 1/4 ||r||^2 on 10^4 random triples",
                  std::to_string(bad_j) + " violations, min ratio " + fmt(worst_j));

  std::filesystem::create_directories(ctx.out);
  std::ofstream os(ctx.out / "calibration.json");
  os << to_json(ctx.cal).dump(2) << '\n';
  rep.wall_clock_s = clock.seconds();
  return rep;
}

}  // namespace cnls
