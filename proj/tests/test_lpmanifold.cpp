#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "semiq/lpmanifold.hpp"

using namespace semiq;
using namespace semiq::testing;

namespace {

LocalSolution solve_local(const SystemSpec& s, const std::vector<double>& candidates) {
  const Linearization l = linearize(s);
  const Eigen::MatrixXd p = solve_riccati(l);
  return choose_delta(s, p, local_gain(l, p), candidates);
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("seed_momentum on SYS-A") {
  SystemSpec s = sys_a();
  const LocalSolution local = solve_local(s, {0.04});
  const Eigen::VectorXd p_pos = seed_momentum(s, local, Eigen::VectorXd::Constant(1, 0.2));
  CHECK(p_pos[0] == doctest::Approx(0.4).epsilon(1e-12));  // lambda_+ = 1, q = 0.4
  const Eigen::VectorXd p_neg = seed_momentum(s, local, Eigen::VectorXd::Constant(1, -0.2));
  CHECK(p_neg[0] == doctest::Approx(-0.4).epsilon(1e-12));  // odd symmetry
  CHECK_THROWS(seed_momentum(s, local, Eigen::VectorXd::Constant(1, 0.5)));  // off level set
}

TEST_CASE("seed_momentum lands on H=0 for random SYS-C level points") {
  auto s = std::make_shared<SystemSpec>(sys_c());
  const LocalSolution local = solve_local(*s, {0.1});
  const SeedChart chart(2, local.P, local.delta, {64});
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> uni(0.0, 2 * std::numbers::pi);
  for (int k = 0; k < 64; ++k) {
    const Eigen::VectorXd xi = Eigen::VectorXd::Constant(1, uni(rng));
    const Eigen::VectorXd x0 = chart.seed_point(xi);
    CHECK(std::abs(x0.dot(local.P * x0) - local.delta) < 1e-12);
    const Eigen::VectorXd p0 = seed_momentum(*s, local, x0);
    CHECK(std::abs(hamiltonian(*s, x0, p0)) < 1e-12);
    // outward reverse-time flow
    const Eigen::VectorXd q = 2.0 * (local.P * x0);
    const auto [xd, pd] = ham_rhs(*s, x0, p0);
    CHECK(q.dot(xd) > 0.0);
  }
}

TEST_CASE("seed tangents match finite differences across xi") {
  auto s = std::make_shared<SystemSpec>(sys_c());
  const LocalSolution local = solve_local(*s, {0.1});
  const SeedChart chart(2, local.P, local.delta, {64});
  const double h = 1e-6;
  for (double xi0 : {0.3, 1.7, 3.9, 5.6}) {
    const SeedData d = seed_with_tangents(*s, local, chart, Eigen::VectorXd::Constant(1, xi0));
    const SeedData dp = seed_with_tangents(*s, local, chart, Eigen::VectorXd::Constant(1, xi0 + h));
    const SeedData dm = seed_with_tangents(*s, local, chart, Eigen::VectorXd::Constant(1, xi0 - h));
    const Eigen::VectorXd fd_x = (dp.x0 - dm.x0) / (2 * h);
    const Eigen::VectorXd fd_p = (dp.p0 - dm.p0) / (2 * h);
    CHECK((d.dx0_dxi.col(0) - fd_x).norm() < 1e-8 * (1 + fd_x.norm()));
    CHECK((d.dp0_dxi.col(0) - fd_p).norm() < 1e-7 * (1 + fd_p.norm()));
  }
}

TEST_CASE("SYS-A atlas matches the closed-form rays") {
  auto s = std::make_shared<SystemSpec>(sys_a());
  const LocalSolution local = solve_local(*s, {0.04});
  AtlasBuildParams params;
  params.tau_max = std::log(5.0);
  params.tau_samples = 1201;
  const Atlas atlas = build_atlas(s, local, params);
  REQUIRE(atlas.ray_count() == 2);
  REQUIRE(atlas.sample_count() == 1201);

  for (int r = 0; r < 2; ++r) {
    const double sign = r == 0 ? 1.0 : -1.0;
    CHECK(atlas.ray_errors()[static_cast<std::size_t>(r)].empty());
    for (int sidx = 0; sidx < atlas.sample_count(); sidx += 97) {
      REQUIRE(atlas.valid(r, sidx));
      const double e = std::exp(atlas.tau(sidx));
      CHECK(atlas.x(r, sidx)[0] == doctest::Approx(sign * 0.2 * e).epsilon(1e-9));
      CHECK(atlas.S(r, sidx) == doctest::Approx(0.04 * (e * e - 1.0)).epsilon(1e-8));
      // detX = dx/dtau = 0.2 e^tau, never vanishing: no caustics in n=1
      CHECK(atlas.detX(r, sidx) * sign > 0.0);
      CHECK(std::abs(atlas.detX(r, sidx)) == doctest::Approx(0.2 * e).epsilon(1e-8));
    }
  }
  // seed consistency
  CHECK(std::abs(atlas.x(0, 0).dot(local.P * atlas.x(0, 0)) - local.delta) < 1e-10);
}

TEST_CASE("SYS-C atlas: conservation, action positivity, monotonicity") {
  auto s = std::make_shared<SystemSpec>(sys_c());
  const LocalSolution local = solve_local(*s, {0.1});
  AtlasBuildParams params;
  params.xi_counts = {128};
  params.tau_max = 1.5;
  params.tau_samples = 301;
  const Atlas atlas = build_atlas(s, local, params);

  double max_h = 0.0;
  int checked = 0;
  for (int r = 0; r < atlas.ray_count(); r += 7) {
    REQUIRE(atlas.ray_errors()[static_cast<std::size_t>(r)].empty());
    double prev_s = -1.0;
    for (int k = 0; k < atlas.sample_count(); k += 10) {
      REQUIRE(atlas.valid(r, k));
      max_h = std::max(max_h, std::abs(hamiltonian(*s, atlas.x(r, k), atlas.p(r, k))));
      CHECK(atlas.S(r, k) >= 0.0);
      CHECK(atlas.S(r, k) > prev_s);
      prev_s = atlas.S(r, k);
      ++checked;
    }
    CHECK(std::abs(atlas.x(r, 0).dot(local.P * atlas.x(r, 0)) - local.delta) < 1e-10);
  }
  CHECK(checked > 100);
  CHECK(max_h <= 1e-8);
}

TEST_CASE("loop integrals: degenerate in 1-D, zero for constant p, 3rd-order in grid") {
  {
    auto s = std::make_shared<SystemSpec>(sys_a());
    const LocalSolution local = solve_local(*s, {0.04});
    AtlasBuildParams params;
    params.tau_max = 1.0;
    params.tau_samples = 11;
    const Atlas atlas = build_atlas(s, local, params);
    CHECK(atlas.loop_integral(0, 3) == 0.0);
  }
  {
    // Constant-p artificial atlas on a dyadic lattice: circulation is 0 exactly.
    Eigen::VectorXd pa = Eigen::VectorXd::Ones(2);
    Eigen::VectorXd xs[4];
    xs[0] = Eigen::VectorXd(2);
    xs[0] << 0.25, 0.5;
    xs[1] = Eigen::VectorXd(2);
    xs[1] << 0.75, 0.5;
    xs[2] = Eigen::VectorXd(2);
    xs[2] << 0.75, 1.25;
    xs[3] = Eigen::VectorXd(2);
    xs[3] << 0.125, 1.0;
    auto edge = [&](int u, int v) { return 0.5 * (pa + pa).dot(xs[v] - xs[u]); };
    CHECK(edge(0, 1) + edge(1, 2) + edge(2, 3) + edge(3, 0) == 0.0);
  }
  {
    // SYS-C circulations shrink at third order under xi-halving.
    auto s = std::make_shared<SystemSpec>(sys_c());
    const LocalSolution local = solve_local(*s, {0.1});
    double prev = 0.0;
    std::vector<double> maxima;
    for (int count : {24, 48, 96}) {
      AtlasBuildParams params;
      params.xi_counts = {count};
      params.tau_max = 1.2;
      params.tau_samples = 241;
      const Atlas atlas = build_atlas(s, local, params);
      double worst = 0.0;
      for (int r = 0; r < atlas.ray_count(); ++r)
        for (int k = 0; k + 1 < atlas.sample_count(); k += 8)
          worst = std::max(worst, std::abs(atlas.loop_integral(r, k)));
      maxima.push_back(worst);
      if (prev > 0.0) CHECK(worst * 4.0 <= prev);
      prev = worst;
    }
    CHECK(maxima.back() < maxima.front());
  }
}

TEST_CASE("atlas file round-trip is byte-identical and loads equivalently") {
  auto s = std::make_shared<SystemSpec>(sys_c());
  const LocalSolution local = solve_local(*s, {0.1});
  AtlasBuildParams params;
  params.xi_counts = {16};
  params.tau_max = 0.8;
  params.tau_samples = 41;
  const Atlas atlas = build_atlas(s, local, params);

  const std::string p1 = tmp_path("semiq_atlas_rt1.txt");
  const std::string p2 = tmp_path("semiq_atlas_rt2.txt");
  atlas.save(p1);
  const Atlas loaded = Atlas::load(p1);
  loaded.save(p2);
  CHECK(read_file(p1) == read_file(p2));  // write -> read -> write, byte-identical

  REQUIRE(loaded.ray_count() == atlas.ray_count());
  REQUIRE(loaded.sample_count() == atlas.sample_count());
  for (int r = 0; r < atlas.ray_count(); r += 3)
    for (int k = 0; k < atlas.sample_count(); k += 7) {
      CHECK(loaded.S(r, k) == atlas.S(r, k));
      CHECK((loaded.x(r, k) - atlas.x(r, k)).norm() == 0.0);
      CHECK((loaded.frame(r, k) - atlas.frame(r, k)).norm() == 0.0);
    }
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("build_atlas flags bad rays but still returns the atlas") {
  auto s = std::make_shared<SystemSpec>(sys_b());
  const LocalSolution local = solve_local(*s, {0.01});
  AtlasBuildParams params;
  params.tau_max = 4.0;
  params.tau_samples = 201;
  params.escape_radius = 1.0;  // rays escape before tau_max
  const Atlas atlas = build_atlas(s, local, params);
  CHECK_FALSE(atlas.ray_errors()[0].empty());
  CHECK(atlas.valid(0, 0));
  CHECK_FALSE(atlas.valid(0, atlas.sample_count() - 1));
}
