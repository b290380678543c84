#include <algorithm>
#include <cmath>
#include <sstream>

#include "cnls/coupling.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cnls;

namespace {

CouplingSetup small_setup() {
  const SpectralSpace space(8);
  CouplingSetup s{space, {}, make_noise_spec(8, 2, 1.0, 4.0), {}, {}};
  s.solver.alpha = 1.0;
  s.solver.dt = 1e-2;
  s.consts = {0.7333, 0.07, 1.0};
  s.params.T = 0.5;
  s.params.T1 = 0.1;
  s.params.C4_prime = 1.0;
  s.params.C6_prime = 1.0;
  s.params.C_star = 1.0;
  return s;
}

}  // namespace

TEST_CASE("total variation of two coins") {
  const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
  CHECK(total_variation(p, q) == doctest::Approx(0.25));
  CHECK_THROWS_AS(total_variation(p, std::vector<double>{0.5, 0.6}), std::domain_error);
  CHECK_THROWS_AS(total_variation(p, std::vector<double>{1.0}), std::domain_error);
}

TEST_CASE("maximal coupling meets with probability 1 - TV") {
  const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
  SequentialRng rng(StreamId{3, 0, 0});
  const int n = 40000;
  int met = 0, first0 = 0, second0 = 0;
  for (int i = 0; i < n; ++i) {
    const auto d = maximal_coupling_discrete(p, q, rng);
    met += d.first == d.second;
    first0 += d.first == 0;
    second0 += d.second == 0;
  }
  const double se = std::sqrt(0.75 * 0.25 / n);
  CHECK(std::abs(met / double(n) - 0.75) < 4 * se);
  CHECK(std::abs(first0 / double(n) - 0.5) < 4 * std::sqrt(0.25 / n));
  CHECK(std::abs(second0 / double(n) - 0.25) < 4 * std::sqrt(0.1875 / n));
}

TEST_CASE("identical distributions always meet") {
  const std::vector<double> p{0.2, 0.3, 0.5};
  SequentialRng rng(StreamId{5, 0, 0});
  for (int i = 0; i < 1000; ++i) {
    const auto d = maximal_coupling_discrete(p, p, rng);
    CHECK(d.first == d.second);
  }
}

TEST_CASE("girsanov weight of a constant drift") {
  // One complex mode, one step: log w = 2 Re(conj(d) dW) - |d|^2 dt.
  const double dt = 0.1;
  const std::vector<CVector> d{{Complex(0.3, -0.2)}}, w{{Complex(0.05, 0.1)}};
  const double expected = 2.0 * (0.3 * 0.05 - 0.2 * 0.1) - (0.09 + 0.04) * dt;
  CHECK(girsanov_log_weight(d, w, dt) == doctest::Approx(expected));
  // Real noise has unit component variance.
  const double expected_real = (0.3 * 0.05 - 0.2 * 0.1) - 0.5 * (0.09 + 0.04) * dt;
  CHECK(girsanov_log_weight(d, w, dt, NoiseKind::kReal) == doctest::Approx(expected_real));
  const std::vector<CVector> zero{{Complex{}}};
  CHECK(girsanov_log_weight(zero, w, dt) == 0.0);
}

TEST_CASE("stopped accumulator ignores later steps") {
  GirsanovAccumulator acc;
  const CVector d{Complex(1, 0)}, w{Complex(0.1, 0)};
  acc.add(d, w, 0.01);
  const double before = acc.log_density();
  acc.stop();
  acc.add(d, w, 0.01);
  CHECK(acc.log_density() == before);
  CHECK(acc.drift_energy() == doctest::Approx(0.01));
}

TEST_CASE("l0 record follows its update rule") {
  L0Record r(false, 10.0, 0.5);
  CHECK(r.current() == kL0Infinity);
  r.advance(false, true, 0.3, 0.5);  // lands in the small ball with equal low modes
  CHECK(r.current() == 1);
  r.advance(true, true, 2.0, 0.5);  // identity held: l0 kept
  CHECK(r.current() == 1);
  r.advance(false, true, 0.2, 0.5);  // identity lost, fresh start
  CHECK(r.current() == 3);
  r.advance(false, false, 0.2, 0.5);
  CHECK(r.current() == kL0Infinity);
  CHECK(r.history().size() == 5);

  L0Record start(true, 0.1, 0.5);
  CHECK(start.current() == 0);
}

TEST_CASE("l0 record rejects inconsistent states") {
  L0Record r(true, 0.1, 0.5);
  const auto before = L0Record::violations();
  // Kept l0 but low modes differ.
  CHECK_THROWS_AS(r.advance(true, false, 0.1, 0.5), std::logic_error);
  CHECK(L0Record::violations() == before + 1);
}

TEST_CASE("parameters are validated") {
  CouplingParams p;
  CHECK_NOTHROW(p.validate());
  p.T1 = 2.0;
  CHECK_THROWS_AS(p.validate(), std::domain_error);
  p = {};
  p.R0 = 0.1;
  CHECK_THROWS_AS(p.validate(), std::domain_error);
  CHECK(bridge_from_string(to_string(Bridge::kPropagated)) == Bridge::kPropagated);
  CHECK_THROWS_AS(bridge_from_string("spline"), std::invalid_argument);
}

TEST_CASE("epoch records serialize as one json line") {
  EpochRecord r;
  r.k = 3;
  r.branch = Branch::kB;
  r.l0 = 2;
  r.met = true;
  std::ostringstream os;
  write_jsonl(os, r);
  const auto j = nlohmann::json::parse(os.str());
  CHECK(j["k"] == 3);
  CHECK(j["branch"] == "b");
  CHECK(j["l0"] == 2);
  for (const char* key : {"H1", "H2", "log_weight", "drift_energy", "met"}) CHECK(j.contains(key));
  r.l0 = kL0Infinity;
  std::ostringstream os2;
  write_jsonl(os2, r);
  CHECK(nlohmann::json::parse(os2.str())["l0"] == "inf");
}

TEST_CASE("identical small data stay coupled from the start") {
  const auto setup = small_setup();
  SequentialRng rng(StreamId{1, 3, 0});
  const auto u0 = random_field_with_energy(setup.space, 0.1, 2.0, setup.consts, rng);
  const auto run = run_coupled(u0, u0, 6, setup, 11, 0);
  CHECK(run.l0.front() == 0);
  for (const auto& e : run.epochs) {
    CHECK(e.drift_energy < 1e-20);
    CHECK(std::abs(e.log_weight) < 1e-12);
  }
  for (std::size_t n = 0; n < run.u1.size(); ++n) CHECK(run.u1[n] == run.u2[n]);
}

TEST_CASE("first system replays the plain run bit for bit") {
  const auto setup = small_setup();
  SequentialRng rng(StreamId{2, 3, 0});
  const auto a = random_field_with_energy(setup.space, 0.4, 1.5, setup.consts, rng);
  const auto b = random_field_with_energy(setup.space, 1.0, 1.5, setup.consts, rng);
  const std::size_t epochs = 4;
  const auto run = run_coupled(a, b, epochs, setup, 21, 5);

  Stepper stepper(setup.space, setup.solver);
  NoiseGenerator gen(setup.noise, setup.solver.dt, StreamId{21, 0, 5});
  CVector u = a.vector();
  evolve(stepper, gen, u, 0, epochs * steps_for(setup.params.T, setup.solver.dt));
  for (std::size_t n = 0; n < u.size(); ++n) CHECK(run.u1[n] == u[n]);
}

TEST_CASE("case b keeps the drift within its budget") {
  auto setup = small_setup();
  setup.params.C_star = 1e-4;  // tight enough to truncate
  SequentialRng rng(StreamId{4, 3, 0});
  const auto a = random_field_with_energy(setup.space, 0.1, 1.5, setup.consts, rng);
  auto b = random_field_with_energy(setup.space, 0.1, 1.5, setup.consts, rng);
  for (std::size_t k = 1; k <= setup.noise.n_star; ++k) b[k] = a[k];
  for (std::uint32_t traj = 0; traj < 8; ++traj) {
    CouplingState st(a.vector(), b.vector(), setup.solver.alpha);
    st.e4_1.add(0.0, hamiltonian(a, setup.consts));
    st.e4_2.add(0.0, hamiltonian(b, setup.consts));
    const auto rec = couple_case_b(st, 0, setup, 9, traj);
    CHECK(rec.drift_energy <= rec.drift_budget);
    CHECK(rec.drift_budget == doctest::Approx(1e-4 / (setup.noise.sigma_0 * setup.noise.sigma_0)));
  }
}

TEST_CASE("case b refuses unequal low modes") {
  const auto setup = small_setup();
  SpectralField a(setup.space), b(setup.space);
  a[1] = 0.1;
  b[1] = 0.2;
  CouplingState st(a.vector(), b.vector(), 1.0);
  CHECK_THROWS_AS(couple_case_b(st, 0, setup, 1, 0), std::logic_error);
}

TEST_CASE("coupled second marginal matches a plain run in mean energy") {
  // The second system must be a solution in law; compare mean H after a few
  // epochs against plain runs from the same start.
  const auto setup = small_setup();
  SequentialRng rng(StreamId{6, 3, 0});
  const auto a = random_field_with_energy(setup.space, 0.3, 1.5, setup.consts, rng);
  const auto b = random_field_with_energy(setup.space, 0.3, 1.5, setup.consts, rng);
  const std::size_t epochs = 3, M = 300;
  FieldEvaluator ev(setup.space);
  std::vector<double> coupled, plain;
  Stepper stepper(setup.space, setup.solver);
  for (std::uint32_t i = 0; i < M; ++i) {
    const auto run = run_coupled(a, b, epochs, setup, 31, i);
    coupled.push_back(ev.hamiltonian(run.u2, setup.consts));
    NoiseGenerator gen(setup.noise, setup.solver.dt, StreamId{77, 0, i});
    CVector u = b.vector();
    evolve(stepper, gen, u, 0, epochs * steps_for(setup.params.T, setup.solver.dt));
    plain.push_back(ev.hamiltonian(u, setup.consts));
  }
  auto mean_var = [](const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double x : v) m += x;
    m /= v.size();
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, s / (v.size() - 1)};
  };
  const auto [mc, vc] = mean_var(coupled);
  const auto [mp, vp] = mean_var(plain);
  CHECK(std::abs(mc - mp) < 4.0 * std::sqrt((vc + vp) / M));
}
