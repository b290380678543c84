#include <atomic>
#include <filesystem>
#include <stdexcept>

#include "cnls/experiments.hpp"
#include "doctest.h"

using namespace cnls;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cnls_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

RunConfig tiny_config(const std::filesystem::path& dir) {
  auto c = parse_config(
      "solver:\n  n_modes: 8\n  dt: 0.01\n  snapshot_stride: 5\n"
      "noise:\n  n_star: 2\n  amplitude: 0.3\n"
      "functionals:\n  corpus_size: 200\n"
      "coupling:\n  T: 0.5\n  T1: 0.1\n  pilot_paths: 6\n"
      "experiment:\n  paths: 6\n  horizon: 1\n  H0: 0.5\n  N: 4\n  N_scan: [2, 4]\n  write_trajectory: false\n");
  c.cache_dir = dir / "cache";
  return c;
}

}  // namespace

TEST_CASE("parallel_for covers every index once") {
  for (std::size_t jobs : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h == 1);
  }
  parallel_for(0, 4, [](std::size_t) { throw std::logic_error("never called"); });
}

TEST_CASE("parallel_for rethrows the smallest failing index") {
  for (std::size_t jobs : {1, 4}) {
    try {
      parallel_for(50, jobs, [](std::size_t i) {
        if (i == 17 || i == 31) throw std::runtime_error(std::to_string(i));
      });
      FAIL("no exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "17");
    }
  }
}

TEST_CASE("binary trajectory round trip") {
  const auto dir = scratch("traj");
  std::filesystem::create_directories(dir);
  const std::vector<double> t{0.0, 0.5};
  const std::vector<CVector> s{{Complex(1, 2), Complex(-3, 0.25)}, {Complex(1e-300, -0.0), Complex(7, 8)}};
  write_trajectory_binary(dir / "t.bin", t, s);
  const auto [t2, s2] = read_trajectory_binary(dir / "t.bin");
  CHECK(t2 == t);
  CHECK(s2 == s);
  std::filesystem::resize_file(dir / "t.bin", std::filesystem::file_size(dir / "t.bin") - 3);
  CHECK_THROWS(read_trajectory_binary(dir / "t.bin"));
}

TEST_CASE("initial data kinds") {
  const SpectralSpace space(8);
  const FunctionalConstants c{0.7333, 0.07, 0};
  SequentialRng rng(StreamId{1, 3, 0});
  FieldEvaluator ev(space);
  CHECK(ev.norms(initial_field(space, "zero", 3.0, 1.0, 1.5, c, rng).coeffs()).mass == 0.0);
  CHECK(initial_field(space, "e1", 0.0, 2.0, 1.5, c, rng)[1] == Complex(2.0, 0.0));
  CHECK(ev.hamiltonian(initial_field(space, "random", 2.0, 1.0, 1.5, c, rng).coeffs(), c) ==
        doctest::Approx(2.0).epsilon(1e-8));
  CHECK_THROWS_AS(initial_field(space, "gauss", 1.0, 1.0, 1.5, c, rng), std::invalid_argument);
}

TEST_CASE("calibration is cached by its inputs") {
  const auto dir = scratch("cache");
  const auto cfg = tiny_config(dir);
  const auto first = calibrate(cfg);
  CHECK_FALSE(first.from_cache);
  CHECK(first.coupling_fitted);
  CHECK(std::filesystem::exists(first.cache_file));
  const auto second = calibrate(cfg);
  CHECK(second.from_cache);
  CHECK(second.consts.c0 == first.consts.c0);
  CHECK(second.fit.C_star == first.fit.C_star);
  auto other = cfg;
  other.noise.amplitude = 0.2;
  CHECK_FALSE(calibrate(other).from_cache);
  // Output-only settings share the entry.
  auto renamed = cfg;
  renamed.output_dir = dir / "elsewhere";
  renamed.experiment.paths = 9;
  CHECK(calibrate(renamed).from_cache);
}

TEST_CASE("reports do not depend on the thread count") {
  const auto dir = scratch("jobs");
  ExperimentContext ctx;
  ctx.cfg = tiny_config(dir);
  ctx.cal = calibrate(ctx.cfg);
  ctx.out = dir / "a";
  for (const char* name : {"lyapunov", "couple"}) {
    ctx.jobs = 1;
    auto a = to_json(run_experiment(name, ctx));
    ctx.jobs = 3;
    auto b = to_json(run_experiment(name, ctx));
    a.erase("wall_clock_s");
    b.erase("wall_clock_s");
    CHECK_MESSAGE(a == b, name);
  }
}

TEST_CASE("noise-free simulate contracts and conserves") {
  const auto dir = scratch("sim");
  ExperimentContext ctx;
  ctx.cfg = parse_config(
      "solver:\n  n_modes: 16\n  alpha: 0\n  dt: 0.001\nnoise:\n  n_star: 0\n  amplitude: 0\n"
      "experiment:\n  horizon: 1\n  initial: e1\n  amplitude: 1\n  write_trajectory: true\n");
  ctx.cfg.cache_dir = dir / "cache";
  ctx.cal = calibrate(ctx.cfg);
  CHECK_FALSE(ctx.cal.coupling_fitted);
  ctx.out = dir;
  const auto r = experiment_simulate(ctx);
  CHECK(r.passed());
  CHECK(r.verdicts.size() == 2);
  CHECK(std::filesystem::exists(dir / "trajectory.csv"));
  const auto [t, s] = read_trajectory_binary(dir / "trajectory.bin");
  CHECK(t.size() == r.counts.at("snapshots"));
  CHECK(s.front()[0] == Complex(1.0, 0.0));
}

TEST_CASE("unknown experiments are rejected") {
  ExperimentContext ctx;
  CHECK_THROWS_AS(run_experiment("bogus", ctx), std::invalid_argument);
  CHECK(experiment_names().size() == 8);
}
