#include "cnls/coupling.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace cnls {

// ---------------------------------------------------------------------------
// Finite distributions

namespace {

void require_distribution(std::span<const double> p, const char* name) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw std::domain_error(std::string(name) + ": negative or non-finite mass");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::domain_error(std::string(name) + ": masses sum to " + std::to_string(sum) + ", not 1");
  }
}

std::size_t draw_index(std::span<const double> weights, double total, double u) {
  double target = u * total, acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last = i;
    acc += weights[i];
    if (target <= acc) return i;
  }
  return last;  // rounding at the top end
}

}  // namespace

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw std::domain_error("total_variation: support mismatch");
  require_distribution(p, "total_variation");
  require_distribution(q, "total_variation");
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

DiscretePair maximal_coupling_discrete(std::span<const double> p, std::span<const double> q, SequentialRng& rng) {
  const double tv = total_variation(p, q);
  std::vector<double> overlap(p.size()), rp(p.size()), rq(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    overlap[i] = std::min(p[i], q[i]);
    rp[i] = std::max(p[i] - q[i], 0.0);
    rq[i] = std::max(q[i] - p[i], 0.0);
  }
  const double common = std::accumulate(overlap.begin(), overlap.end(), 0.0);
  if (rng.uniform() <= common) {
    const std::size_t i = draw_index(overlap, common, rng.uniform());
    return {i, i};
  }
  const double mp = std::accumulate(rp.begin(), rp.end(), 0.0);
  const double mq = std::accumulate(rq.begin(), rq.end(), 0.0);
  if (!(mp > 0.0) || !(mq > 0.0) || tv == 0.0) {
    const std::size_t i = draw_index(overlap, common, rng.uniform());
    return {i, i};
  }
  const std::size_t a = draw_index(rp, mp, rng.uniform());
  const std::size_t b = draw_index(rq, mq, rng.uniform());
  return {a, b};
}

// ---------------------------------------------------------------------------
// Girsanov weights

void GirsanovAccumulator::add(std::span<const Complex> drift, std::span<const Complex> increment, double dt) {
  if (!active_) return;
  if (drift.size() > increment.size()) throw std::domain_error("GirsanovAccumulator: drift longer than increment");
  double inner = 0.0, energy = 0.0;
  for (std::size_t n = 0; n < drift.size(); ++n) {
    inner += (std::conj(drift[n]) * increment[n]).real();
    energy += std::norm(drift[n]);
  }
  log_density_ += inv_var_ * (inner - 0.5 * energy * dt);
  drift_energy_ += energy * dt;
}

double girsanov_log_weight(std::span<const CVector> drifts, std::span<const CVector> increments, double dt,
                           NoiseKind kind) {
  if (drifts.size() != increments.size()) throw std::domain_error("girsanov_log_weight: lengths differ");
  GirsanovAccumulator acc(kind);
  for (std::size_t j = 0; j < drifts.size(); ++j) acc.add(drifts[j], increments[j], dt);
  return acc.log_density();
}

// ---------------------------------------------------------------------------
// Parameters and bookkeeping

std::string to_string(Bridge b) { return b == Bridge::kLinear ? "linear" : "propagated"; }

Bridge bridge_from_string(const std::string& name) {
  if (name == "linear") return Bridge::kLinear;
  if (name == "propagated") return Bridge::kPropagated;
  throw std::invalid_argument("unknown bridge '" + name + "' (expected linear or propagated)");
}

void CouplingParams::validate() const {
  auto positive = [](double x, const char* key) {
    if (!(x > 0.0) || !std::isfinite(x)) throw std::domain_error(std::string("coupling.") + key + " must be positive");
  };
  positive(T, "T");
  positive(T1, "T1");
  positive(d0, "d0");
  positive(R0, "R0");
  positive(R1, "R1");
  positive(kappa, "kappa");
  positive(rho, "rho");
  if (!std::isfinite(a)) throw std::domain_error("coupling.a must be finite");
  if (T1 > T) throw std::domain_error("coupling.T1 must not exceed coupling.T");
  if (R0 < d0) throw std::domain_error("coupling.R0 must be at least coupling.d0");
  for (double c : {C4_prime, C6_prime, C_star}) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw std::domain_error("coupling constants must be nonnegative");
  }
  if (max_retries == 0) throw std::domain_error("coupling.max_retries must be positive");
}

namespace {
std::atomic<std::uint64_t> g_l0_violations{0};
}

L0Record::L0Record(bool low_modes_equal, double H_sum, double d0) {
  Entry e;
  e.low_modes_equal = low_modes_equal;
  e.small_energy = H_sum <= d0;
  e.l0 = (low_modes_equal && e.small_energy) ? 0 : kL0Infinity;
  history_.push_back(e);
  check(H_sum, d0);
}

void L0Record::advance(bool identity_held, bool low_modes_equal, double H_sum, double d0) {
  const std::size_t k = epoch();
  const std::size_t prev = current();
  Entry e;
  e.low_modes_equal = low_modes_equal;
  e.small_energy = H_sum <= d0;
  e.envelope_held = identity_held;
  if (prev != kL0Infinity && identity_held) {
    e.l0 = prev;
  } else if (low_modes_equal && e.small_energy) {
    e.l0 = k + 1;
  } else {
    e.l0 = kL0Infinity;
  }
  history_.push_back(e);
  check(H_sum, d0);
}

void L0Record::check(double H_sum, double d0) const {
  const std::size_t k = epoch();
  const Entry& now = history_.back();
  bool ok = true;
  // l0(k) = l <= k - 1 requires l0(k - 1) = l.
  if (k > 0 && now.l0 != kL0Infinity && now.l0 < k && history_[k - 1].l0 != now.l0) ok = false;
  // l0(k) = k requires H_k <= d0.
  if (now.l0 == k && !(H_sum <= d0)) ok = false;
  // l0 finite requires identical low modes.
  if (now.l0 != kL0Infinity && !now.low_modes_equal) ok = false;
  if (now.l0 != kL0Infinity && now.l0 > k) ok = false;
  if (!ok) {
    g_l0_violations.fetch_add(1, std::memory_order_relaxed);
    throw std::logic_error("l0 bookkeeping violated at epoch " + std::to_string(k));
  }
}

std::uint64_t L0Record::violations() noexcept { return g_l0_violations.load(std::memory_order_relaxed); }

std::string to_string(Branch b) {
  switch (b) {
    case Branch::kA: return "a";
    case Branch::kB: return "b";
    default: return "trivial";
  }
}

std::string to_string(Truncation t) {
  switch (t) {
    case Truncation::kNone: return "none";
    case Truncation::kEnergy1: return "energy1";
    case Truncation::kEnergy2: return "energy2";
    case Truncation::kDistance: return "distance";
    default: return "drift_budget";
  }
}

void write_jsonl(std::ostream& os, const EpochRecord& r) {
  nlohmann::json j;
  j["k"] = r.k;
  j["branch"] = to_string(r.branch);
  j["l0"] = r.l0 == kL0Infinity ? nlohmann::json("inf") : nlohmann::json(r.l0);
  j["H1"] = r.H1;
  j["H2"] = r.H2;
  j["log_weight"] = r.log_weight;
  j["drift_energy"] = r.drift_energy;
  if (r.branch == Branch::kB) j["drift_budget"] = r.drift_budget;
  j["met"] = r.met;
  j["accepted"] = r.accepted;
  j["truncation"] = to_string(r.truncation);
  j["retries"] = r.retries;
  if (r.retries_exhausted) j["retries_exhausted"] = true;
  os << j.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Synchronized pair engine

namespace {

constexpr std::uint64_t kAttemptShift = 40;

// Raw increment for one step: low modes from `low`, high modes from `high`.
void reference_increment(const CounterStream& low, const CounterStream& high, std::uint64_t low_step,
                         std::uint64_t high_step, std::size_t n_star, double scale, std::span<Complex> out) {
  for (std::size_t n = 0; n < out.size(); ++n) {
    const auto [x, y] = n < n_star ? low.normal_pair(low_step, static_cast<std::uint32_t>(n))
                                   : high.normal_pair(high_step, static_cast<std::uint32_t>(n));
    out[n] = Complex(scale * x, scale * y);
  }
}

struct Envelope {
  enum class Kind { kNone, kCaseA, kCaseB } kind = Kind::kNone;
  // Case b: E_{u,4}(t, lT) <= offset + slope (t + lag); distance and drift budgets.
  double offset = 0.0, slope = 0.0, lag = 0.0;
  double distance_budget = INFINITY, drift_budget = INFINITY;
  // Case a: E_{u,6}(t) <= 2 (R1^6 + C6' t + rho (R1^12 + t)).
  double R1 = 0.0, C6 = 0.0, rho = 0.0;

  double case_a_bound(double t) const { return 2.0 * (std::pow(R1, 6) + C6 * t + rho * (std::pow(R1, 12) + t)); }
};

struct SyncInput {
  const CVector* ref0 = nullptr;  // reference system at the start
  const CVector* fol0 = nullptr;  // follower at the start
  const CounterStream* low = nullptr;
  const CounterStream* high = nullptr;
  std::uint64_t low_offset = 0;   // counter step of the first reference low increment
  std::uint64_t high_offset = 0;  // counter step of the first shared high increment
  std::size_t n_steps = 0;
  const CVector* delta = nullptr;  // bridge displacement at j = 0 (nullptr: none)
  double sign = 1.0;               // follower target = P ref + sign * bridge
  bool ref_is_first = true;        // labels for the energy truncations
  Envelope env;
  double t0 = 0.0;                 // absolute time of the first step (for accumulators)
  const EnergyAccumulator* acc_ref = nullptr;  // case b: running E4 since lT
  const EnergyAccumulator* acc_fol = nullptr;
};

struct SyncOutput {
  CVector ref, fol;
  double log_ratio = 0.0;  // log (follower law / reference law) on the prefix
  double drift_energy = 0.0;
  std::size_t tau = 0;
  Truncation truncation = Truncation::kNone;
  double H_ref = 0.0, H_fol = 0.0;
  EnergyAccumulator acc_ref{4, 1.0}, acc_fol{4, 1.0};
};

class PairEngine {
 public:
  explicit PairEngine(const CouplingSetup& setup)
      : setup_(setup),
        ref_stepper_(setup.space, setup.solver),
        fol_stepper_(setup.space, setup.solver),
        eval_(setup.space),
        m_(setup.space.n_modes()),
        n_star_(setup.noise.n_star),
        dw_(m_),
        r_(m_) {}

  SyncOutput run(const SyncInput& in) {
    const auto& b = setup_.noise.b;
    const double dt = setup_.solver.dt;
    const double alpha = setup_.solver.alpha;
    const double scale = std::sqrt(0.5 * dt);
    const double inv_var_dt = 1.0 / dt;  // complex increments: density exp(-|dW|^2 / dt)
    SyncOutput out;
    out.ref = *in.ref0;
    out.fol = *in.fol0;
    out.tau = in.n_steps;

    const bool case_b = in.env.kind == Envelope::Kind::kCaseB;
    const int power = case_b ? 4 : 6;
    out.acc_ref = in.acc_ref ? *in.acc_ref : EnergyAccumulator(power, alpha);
    out.acc_fol = in.acc_fol ? *in.acc_fol : EnergyAccumulator(power, alpha);
    if (out.acc_ref.empty()) out.acc_ref.add(in.t0, eval_.hamiltonian(out.ref, setup_.consts));
    if (out.acc_fol.empty()) out.acc_fol.add(in.t0, eval_.hamiltonian(out.fol, setup_.consts));
    double H_ref = eval_.hamiltonian(out.ref, setup_.consts);
    double H_fol = eval_.hamiltonian(out.fol, setup_.consts);
    double prev_weighted = weighted_distance(out.ref, out.fol, H_ref, H_fol);
    double distance_integral = 0.0;
    bool active = true;

    const double n1 = static_cast<double>(in.n_steps);
    const auto mu = setup_.space.eigenvalues();
    for (std::size_t j = 0; j < in.n_steps; ++j) {
      reference_increment(*in.low, *in.high, in.low_offset + j, in.high_offset + j, n_star_, scale, dw_);
      ref_stepper_.propagate(out.ref);
      fol_stepper_.propagate(out.fol);
      for (std::size_t n = 0; n < m_; ++n) out.ref[n] += b[n] * dw_[n];

      if (active) {
        // Implied low-mode increments of the follower and the drift they carry.
        double ref_sq = 0.0, fol_sq = 0.0, drift_sq = 0.0;
        for (std::size_t n = 0; n < n_star_; ++n) {
          Complex target = out.ref[n];
          if (in.delta) target += in.sign * bridge((*in.delta)[n], j + 1, n1, mu[n]);
          const Complex implied = (target - out.fol[n]) / b[n];
          ref_sq += std::norm(dw_[n]);
          fol_sq += std::norm(implied);
          drift_sq += std::norm(implied - dw_[n]);
        }
        const double step_energy = drift_sq / dt;  // |d|^2 dt with d = (dW_fol - dW_ref) / dt
        if (case_b && out.drift_energy + step_energy > in.env.drift_budget) {
          active = false;
          out.tau = j;
          out.truncation = Truncation::kDriftBudget;
        } else {
          for (std::size_t n = 0; n < n_star_; ++n) {
            Complex target = out.ref[n];
            if (in.delta) target += in.sign * bridge((*in.delta)[n], j + 1, n1, mu[n]);
            out.fol[n] = target;
          }
          for (std::size_t n = n_star_; n < m_; ++n) out.fol[n] += b[n] * dw_[n];
          out.log_ratio += (ref_sq - fol_sq) * inv_var_dt;
          out.drift_energy += step_energy;
        }
      }
      if (!active) {
        for (std::size_t n = 0; n < m_; ++n) out.fol[n] += b[n] * dw_[n];
      }
      check_finite(out.ref, j);
      check_finite(out.fol, j);

      const double t = in.t0 + static_cast<double>(j + 1) * dt;
      H_ref = eval_.hamiltonian(out.ref, setup_.consts);
      H_fol = eval_.hamiltonian(out.fol, setup_.consts);
      out.acc_ref.add(t, H_ref);
      out.acc_fol.add(t, H_fol);
      if (active) {
        const double local_t = static_cast<double>(j + 1) * dt;
        Truncation hit = Truncation::kNone;
        const Truncation ref_label = in.ref_is_first ? Truncation::kEnergy1 : Truncation::kEnergy2;
        const Truncation fol_label = in.ref_is_first ? Truncation::kEnergy2 : Truncation::kEnergy1;
        if (case_b) {
          const double bound = in.env.offset + in.env.slope * (local_t + in.env.lag);
          if (out.acc_ref.value() > bound) hit = ref_label;
          else if (out.acc_fol.value() > bound) hit = fol_label;
          const double weighted = weighted_distance(out.ref, out.fol, H_ref, H_fol);
          distance_integral += 0.5 * (weighted + prev_weighted) * dt;
          prev_weighted = weighted;
          if (hit == Truncation::kNone && distance_integral > in.env.distance_budget) hit = Truncation::kDistance;
        } else if (in.env.kind == Envelope::Kind::kCaseA) {
          const double bound = in.env.case_a_bound(local_t);
          if (out.acc_ref.value() > bound) hit = ref_label;
          else if (out.acc_fol.value() > bound) hit = fol_label;
        }
        if (hit != Truncation::kNone) {
          active = false;
          out.tau = j + 1;
          out.truncation = hit;
        }
      }
    }
    out.H_ref = H_ref;
    out.H_fol = H_fol;
    return out;
  }

  void set_bridge(Bridge kind) { bridge_kind_ = kind; }

 private:
  Complex bridge(Complex delta0, std::size_t j, double n1, double mu) const {
    const double frac = 1.0 - static_cast<double>(j) / n1;
    if (bridge_kind_ == Bridge::kLinear) return frac * delta0;
    const double t = static_cast<double>(j) * setup_.solver.dt;
    return frac * std::exp(-Complex(setup_.solver.alpha, mu) * t) * delta0;
  }

  double weighted_distance(const CVector& u1, const CVector& u2, double H1, double H2) {
    for (std::size_t n = 0; n < m_; ++n) r_[n] = u1[n] - u2[n];
    return l_weight(H1, H2) * sobolev_norm_squared(setup_.space, r_, 1.0);
  }

  static void check_finite(const CVector& u, std::size_t j) {
    for (const auto& c : u) {
      if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) {
        throw NumericError("coupled pair: non-finite state after step " + std::to_string(j),
                           static_cast<std::ptrdiff_t>(j));
      }
    }
  }

  const CouplingSetup& setup_;
  Stepper ref_stepper_, fol_stepper_;
  FieldEvaluator eval_;
  std::size_t m_, n_star_;
  CVector dw_, r_;
  Bridge bridge_kind_ = Bridge::kLinear;
};

std::size_t steps_per_epoch(const CouplingSetup& s) { return steps_for(s.params.T, s.solver.dt); }

bool low_modes_equal(const CVector& a, const CVector& b, std::size_t n_star) {
  return std::equal(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(n_star), b.begin());
}

StreamId noise_id(std::uint64_t seed, std::uint32_t trajectory, Lane lane) {
  return StreamId{seed, static_cast<std::uint64_t>(lane), trajectory};
}

// Drives both systems with the same increments (or independent ones) for n steps.
void trivial_steps(CVector& u1, CVector& u2, const CouplingSetup& setup, const CounterStream& s1,
                   const CounterStream& s2, std::uint64_t first_step, std::size_t n_steps) {
  Stepper st1(setup.space, setup.solver), st2(setup.space, setup.solver);
  const std::size_t m = setup.space.n_modes();
  const double scale = std::sqrt(0.5 * setup.solver.dt);
  CVector f1(m), f2(m);
  const bool shared = &s1 == &s2;
  for (std::size_t j = 0; j < n_steps; ++j) {
    const std::uint64_t step = first_step + j;
    for (std::size_t n = 0; n < m; ++n) {
      const auto [x, y] = s1.normal_pair(step, static_cast<std::uint32_t>(n));
      f1[n] = setup.noise.b[n] * Complex(scale * x, scale * y);
      if (!shared) {
        const auto [p, q] = s2.normal_pair(step, static_cast<std::uint32_t>(n));
        f2[n] = setup.noise.b[n] * Complex(scale * p, scale * q);
      }
    }
    st1.step(u1, f1, static_cast<std::ptrdiff_t>(step));
    st2.step(u2, shared ? f1 : f2, static_cast<std::ptrdiff_t>(step));
  }
}

struct MaximalOutcome {
  CVector u1, u2;
  bool accepted = false;
  SyncOutput reference;  // the first-system reference run
  std::size_t retries = 0;
  bool exhausted = false;
};

// Accept/reject maximal coupling of the low-mode path laws.  The reference run
// has system 1 as reference; residual candidates use system 2 as reference
// with low noise from the residual lane and the shared high noise.
MaximalOutcome maximal_path_coupling(PairEngine& engine, SyncInput in, const CouplingSetup& setup,
                                     std::uint64_t seed, std::uint32_t trajectory, std::uint64_t epoch) {
  MaximalOutcome out;
  out.reference = engine.run(in);
  const CounterStream uniforms(noise_id(seed, trajectory, Lane::kCoupling));
  if (std::log(uniforms.uniform(epoch, 0)) <= out.reference.log_ratio) {
    out.accepted = true;
    out.u1 = out.reference.ref;
    out.u2 = out.reference.fol;
    return out;
  }
  out.u1 = out.reference.ref;
  const CounterStream residual(noise_id(seed, trajectory, Lane::kResidual));
  SyncInput cand = in;
  std::swap(cand.ref0, cand.fol0);
  std::swap(cand.acc_ref, cand.acc_fol);
  cand.low = &residual;
  cand.sign = -in.sign;
  cand.ref_is_first = !in.ref_is_first;
  for (std::size_t attempt = 1; attempt <= setup.params.max_retries; ++attempt) {
    cand.low_offset = (static_cast<std::uint64_t>(attempt) << kAttemptShift) + in.low_offset;
    SyncOutput c = engine.run(cand);
    out.retries = attempt;
    // Candidate from q is kept with probability 1 - min(1, p/q).
    if (std::log(uniforms.uniform(epoch, static_cast<std::uint32_t>(attempt))) > c.log_ratio) {
      out.u2 = std::move(c.ref);
      return out;
    }
    if (attempt == setup.params.max_retries) {
      out.u2 = std::move(c.ref);
      out.exhausted = true;
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Epoch constructors

EpochRecord couple_trivial(CouplingState& state, const CouplingSetup& setup, std::uint64_t seed,
                           std::uint32_t trajectory) {
  const std::size_t n = steps_per_epoch(setup);
  const CounterStream s(noise_id(seed, trajectory, Lane::kNoise));
  trivial_steps(state.u1, state.u2, setup, s, s, state.k * n, n);
  EpochRecord rec;
  rec.k = state.k;
  rec.branch = Branch::kTrivial;
  FieldEvaluator ev(setup.space);
  rec.H1 = ev.hamiltonian(state.u1, setup.consts);
  rec.H2 = ev.hamiltonian(state.u2, setup.consts);
  ++state.k;
  return rec;
}

EpochRecord couple_case_a(CouplingState& state, const CouplingSetup& setup, std::uint64_t seed,
                          std::uint32_t trajectory) {
  const auto& p = setup.params;
  const std::size_t n = steps_per_epoch(setup);
  const std::size_t n1 = steps_for(p.T1, setup.solver.dt);
  const std::size_t n_theta = n - n1;
  const std::uint64_t first = state.k * n;
  const CounterStream s1(noise_id(seed, trajectory, Lane::kNoise));
  const CounterStream aux(noise_id(seed, trajectory, Lane::kAuxiliary));
  EpochRecord rec;
  rec.k = state.k;
  rec.branch = Branch::kA;

  trivial_steps(state.u1, state.u2, setup, s1, p.independent_step1 ? aux : s1, first, n_theta);
  FieldEvaluator ev(setup.space);
  const double H_sum = ev.hamiltonian(state.u1, setup.consts) + ev.hamiltonian(state.u2, setup.consts);
  rec.reached_small_ball = H_sum <= p.R1;
  if (!rec.reached_small_ball) {
    trivial_steps(state.u1, state.u2, setup, s1, s1, first + n_theta, n1);
  } else {
    CVector delta(setup.noise.n_star);
    for (std::size_t k = 0; k < delta.size(); ++k) delta[k] = state.u2[k] - state.u1[k];
    PairEngine engine(setup);
    engine.set_bridge(p.bridge);
    SyncInput in;
    in.ref0 = &state.u1;
    in.fol0 = &state.u2;
    in.low = &s1;
    in.high = &s1;
    in.low_offset = first + n_theta;
    in.high_offset = first + n_theta;
    in.n_steps = n1;
    in.delta = &delta;
    in.sign = 1.0;
    in.env.kind = Envelope::Kind::kCaseA;
    in.env.R1 = p.R1;
    in.env.C6 = p.C6_prime;
    in.env.rho = p.rho;
    in.t0 = 0.0;
    auto res = maximal_path_coupling(engine, in, setup, seed, trajectory, state.k);
    rec.accepted = res.accepted;
    rec.log_weight = res.reference.log_ratio;
    rec.drift_energy = res.reference.drift_energy;
    rec.truncation = res.reference.truncation;
    rec.retries = res.retries;
    rec.retries_exhausted = res.exhausted;
    state.u1 = std::move(res.u1);
    state.u2 = std::move(res.u2);
  }
  rec.H1 = ev.hamiltonian(state.u1, setup.consts);
  rec.H2 = ev.hamiltonian(state.u2, setup.consts);
  ++state.k;
  return rec;
}

EpochRecord couple_case_b(CouplingState& state, std::size_t l, const CouplingSetup& setup, std::uint64_t seed,
                          std::uint32_t trajectory) {
  const auto& p = setup.params;
  if (!low_modes_equal(state.u1, state.u2, setup.noise.n_star)) {
    throw std::logic_error("case b requires equal low modes at the epoch start");
  }
  if (l > state.k) throw std::logic_error("case b requires l0 <= k");
  const std::size_t n = steps_per_epoch(setup);
  const std::uint64_t first = state.k * n;
  const CounterStream s1(noise_id(seed, trajectory, Lane::kNoise));
  const double alpha = setup.solver.alpha;
  const double gap = static_cast<double>(state.k - l) * p.T;
  const double budget_scale = p.C_star * std::exp(p.a - 0.5 * alpha * gap);

  PairEngine engine(setup);
  SyncInput in;
  in.ref0 = &state.u1;
  in.fol0 = &state.u2;
  in.low = &s1;
  in.high = &s1;
  in.low_offset = first;
  in.high_offset = first;
  in.n_steps = n;
  in.env.kind = Envelope::Kind::kCaseB;
  in.env.offset = p.kappa + 1.0 + std::pow(p.d0, 4) + std::pow(p.d0, 8);
  in.env.slope = p.C4_prime;
  in.env.lag = gap;
  in.env.distance_budget = budget_scale;
  in.env.drift_budget = budget_scale / (setup.noise.sigma_0 * setup.noise.sigma_0);
  in.t0 = static_cast<double>(state.k) * p.T;
  in.acc_ref = &state.e4_1;
  in.acc_fol = &state.e4_2;
  auto res = maximal_path_coupling(engine, in, setup, seed, trajectory, state.k);

  EpochRecord rec;
  rec.k = state.k;
  rec.branch = Branch::kB;
  rec.accepted = res.accepted;
  rec.log_weight = res.reference.log_ratio;
  rec.drift_energy = res.reference.drift_energy;
  rec.drift_budget = in.env.drift_budget;
  rec.truncation = res.reference.truncation;
  rec.retries = res.retries;
  rec.retries_exhausted = res.exhausted;
  if (!(rec.drift_energy <= rec.drift_budget)) {
    throw std::logic_error("case b drift budget exceeded at epoch " + std::to_string(state.k));
  }
  if (res.accepted && res.reference.truncation == Truncation::kNone) {
    state.e4_1 = res.reference.acc_ref;
    state.e4_2 = res.reference.acc_fol;
  }
  state.u1 = std::move(res.u1);
  state.u2 = std::move(res.u2);
  rec.H1 = res.reference.H_ref;
  FieldEvaluator ev(setup.space);
  rec.H2 = ev.hamiltonian(state.u2, setup.consts);
  ++state.k;
  return rec;
}

CoupledRun run_coupled(const SpectralField& u0_1, const SpectralField& u0_2, std::size_t n_epochs,
                       const CouplingSetup& setup, std::uint64_t seed, std::uint32_t trajectory,
                       const EpochObserver& observer) {
  setup.params.validate();
  if (!setup.params.fitted()) throw std::domain_error("run_coupled: coupling constants are not fitted");
  if (setup.noise.kind != NoiseKind::kComplex) throw std::domain_error("run_coupled: coupling needs complex noise");
  if (setup.noise.n_star == 0) throw std::domain_error("run_coupled: coupling needs n_star >= 1");
  if (!(u0_1.space() == setup.space) || !(u0_2.space() == setup.space)) {
    throw std::invalid_argument("run_coupled: initial data live in a different space");
  }
  const auto& p = setup.params;
  const std::size_t n_star = setup.noise.n_star;
  FieldEvaluator ev(setup.space);
  CouplingState state(u0_1.vector(), u0_2.vector(), setup.solver.alpha);
  double H1 = ev.hamiltonian(state.u1, setup.consts), H2 = ev.hamiltonian(state.u2, setup.consts);
  L0Record l0(low_modes_equal(state.u1, state.u2, n_star), H1 + H2, p.d0);
  if (l0.current() == 0) {
    state.e4_1.add(0.0, H1);
    state.e4_2.add(0.0, H2);
  }

  CoupledRun run;
  auto distance = [&] {
    double s = 0.0;
    for (std::size_t n = 0; n < state.u1.size(); ++n) s += std::norm(state.u1[n] - state.u2[n]);
    return std::sqrt(s);
  };
  run.l0.push_back(l0.current());
  run.distance.push_back(distance());
  if (observer) observer(0, state.u1, state.u2);
  for (std::size_t k = 0; k < n_epochs; ++k) {
    const std::size_t current = l0.current();
    EpochRecord rec;
    bool identity = false;
    if (current == kL0Infinity && H1 + H2 <= p.R0) {
      rec = couple_case_a(state, setup, seed, trajectory);
    } else if (current != kL0Infinity) {
      rec = couple_case_b(state, current, setup, seed, trajectory);
      identity = rec.accepted && rec.truncation == Truncation::kNone;
    } else {
      rec = couple_trivial(state, setup, seed, trajectory);
    }
    H1 = rec.H1;
    H2 = rec.H2;
    l0.advance(identity, low_modes_equal(state.u1, state.u2, n_star), H1 + H2, p.d0);
    rec.l0 = l0.current();
    rec.met = rec.l0 != kL0Infinity;
    if (rec.l0 == k + 1) {
      // A fresh coupling starts at (k+1)T: restart the envelopes there.
      state.e4_1.reset();
      state.e4_2.reset();
      const double t = static_cast<double>(k + 1) * p.T;
      state.e4_1.add(t, H1);
      state.e4_2.add(t, H2);
    } else if (rec.l0 == kL0Infinity) {
      state.e4_1.reset();
      state.e4_2.reset();
    }
    run.epochs.push_back(rec);
    run.l0.push_back(rec.l0);
    run.distance.push_back(distance());
    if (observer) observer(k + 1, state.u1, state.u2);
  }
  // Coupling epoch: start of the final run of finite l0 values sharing one l.
  if (run.l0.back() != kL0Infinity) run.coupling_epoch = run.l0.back();
  run.u1 = state.u1;
  run.u2 = state.u2;
  return run;
}

// ---------------------------------------------------------------------------
// Pilot fits

SpectralField random_field_with_energy(const SpectralSpace& space, double target, double decay,
                                       const FunctionalConstants& consts, SequentialRng& rng) {
  SpectralField v(space);
  for (std::size_t k = 1; k <= space.n_modes(); ++k) {
    v[k] = std::pow(static_cast<double>(k), -decay) * Complex(rng.normal(), rng.normal());
  }
  return scale_to_hamiltonian(v, target, consts);
}

namespace {

double percentile99(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = 0.99 * static_cast<double>(v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i);
  return i + 1 < v.size() ? v[i] * (1 - frac) + v[i + 1] * frac : v[i];
}

double growth_slope(const CouplingSetup& setup, const SpectralField& u0, int power, double horizon,
                    const CounterStream& stream) {
  Stepper stepper(setup.space, setup.solver);
  FieldEvaluator ev(setup.space);
  const std::size_t n = steps_for(horizon, setup.solver.dt);
  const double scale = std::sqrt(0.5 * setup.solver.dt);
  CVector u = u0.vector(), f(u.size());
  EnergyAccumulator acc(power, setup.solver.alpha);
  const double H0 = ev.hamiltonian(u, setup.consts);
  acc.add(0.0, H0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t m = 0; m < u.size(); ++m) {
      const auto [x, y] = stream.normal_pair(j, static_cast<std::uint32_t>(m));
      f[m] = setup.noise.b[m] * Complex(scale * x, scale * y);
    }
    stepper.step(u, f, static_cast<std::ptrdiff_t>(j));
    const double t = static_cast<double>(j + 1) * setup.solver.dt;
    acc.add(t, ev.hamiltonian(u, setup.consts));
  }
  // Mean growth rate over the horizon; short-time jitter is left to the
  // envelope offsets.
  return (acc.value() - std::pow(H0, power)) / horizon;
}

}  // namespace

CouplingFit fit_coupling_constants(const CouplingSetup& setup, std::size_t n_paths, std::uint64_t seed) {
  if (n_paths == 0) throw std::domain_error("fit_coupling_constants: need at least one pilot path");
  const auto& p = setup.params;
  const std::size_t n_star = setup.noise.n_star;
  std::vector<double> c4, c6, cstar;
  // Pilot randomness lives in the calibration lane, disjoint from every run.
  SequentialRng rng(StreamId{seed, static_cast<std::uint64_t>(Lane::kCalibration), 7});
  FieldEvaluator ev(setup.space);
  for (std::size_t i = 0; i < n_paths; ++i) {
    const auto traj = static_cast<std::uint32_t>(i);
    const CounterStream stream(StreamId{seed, static_cast<std::uint64_t>(Lane::kCalibration) + 100, traj});
    const auto u4 = random_field_with_energy(setup.space, 0.5 * p.d0, 1.5, setup.consts, rng);
    c4.push_back(growth_slope(setup, u4, 4, 4.0 * p.T, stream));
    const auto u6 = random_field_with_energy(setup.space, 0.5 * p.R1, 1.5, setup.consts, rng);
    c6.push_back(growth_slope(setup, u6, 6, p.T1, stream));

    // Synchronized pair from the d0 ball with equal low modes.
    const auto a = random_field_with_energy(setup.space, 0.25 * p.d0, 1.5, setup.consts, rng);
    auto b = random_field_with_energy(setup.space, 0.25 * p.d0, 1.5, setup.consts, rng);
    for (std::size_t k = 0; k < n_star; ++k) b.coeffs()[k] = a.coeffs()[k];
    const std::size_t n = steps_for(p.T, setup.solver.dt);
    const double scale = std::sqrt(0.5 * setup.solver.dt);
    Stepper sa(setup.space, setup.solver), sb(setup.space, setup.solver);
    CVector ua = a.vector(), ub = b.vector(), f(ua.size()), r(ua.size());
    auto weighted = [&] {
      for (std::size_t m = 0; m < r.size(); ++m) r[m] = ua[m] - ub[m];
      return l_weight(ev.hamiltonian(ua, setup.consts), ev.hamiltonian(ub, setup.consts)) *
             sobolev_norm_squared(setup.space, r, 1.0);
    };
    double prev = weighted(), integral = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t m = 0; m < ua.size(); ++m) {
        const auto [x, y] = stream.normal_pair(j + (1ull << 32), static_cast<std::uint32_t>(m));
        f[m] = setup.noise.b[m] * Complex(scale * x, scale * y);
      }
      sa.step(ua, f, static_cast<std::ptrdiff_t>(j));
      sb.step(ub, f, static_cast<std::ptrdiff_t>(j));
      std::copy_n(ua.begin(), n_star, ub.begin());
      const double w = weighted();
      integral += 0.5 * (w + prev) * setup.solver.dt;
      prev = w;
    }
    cstar.push_back(integral);
  }
  CouplingFit fit;
  fit.n_paths = n_paths;
  fit.C4_prime = percentile99(c4);
  fit.C6_prime = percentile99(c6);
  fit.C_star = percentile99(cstar);
  return fit;
}

}  // namespace cnls
