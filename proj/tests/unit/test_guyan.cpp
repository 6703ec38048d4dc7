#include "support.hpp"
#include "vibefuse/errors.hpp"
#include "vibefuse/guyan.hpp"

#include <doctest.h>

#include <numeric>
#include <random>

using namespace vibefuse;
using namespace vibefuse::guyan;

namespace {

struct Chain {
  Eigen::MatrixXd k, m;
};

Chain spring_chain(double k, double m) {
  Chain c;
  c.k.resize(4, 4);
  c.k << 2, -1, 0, 0, -1, 2, -1, 0, 0, -1, 2, -1, 0, 0, -1, 1;
  c.k *= k;
  c.m = m * Eigen::MatrixXd::Identity(4, 4);
  return c;
}

struct Strip {
  fem::MeshModel mesh;
  fem::SegmentedSystem segmented;
  fem::SystemMatrices system;
};

Strip strip_system() {
  auto mesh = fem::build_mesh(testing::small_strip());
  auto segmented = fem::assemble_segments(mesh, fem::MaterialSpec{});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  Eigen::VectorXd theta(fem::kParameterCount);
  for (auto& x : theta) x = u(rng);
  auto system = fem::realize_system(segmented, fem::UncertainInput(theta));
  return {std::move(mesh), std::move(segmented), std::move(system)};
}

}  // namespace

TEST_CASE("spring chain condenses to the hand-derived matrices") {
  const double k = 500.0, m = 2.0;
  const auto chain = spring_chain(k, m);
  const auto sys = fem::make_system(chain.m, chain.k, 0.0, 0.0);
  const auto red = condense(sys, DofPartition::from_masters({3, 0}, 4));
  REQUIRE(red.partition.masters == std::vector<int>{0, 3});
  REQUIRE(red.partition.slaves == std::vector<int>{1, 2});

  Eigen::MatrixXd t(4, 2);
  t << 1, 0, 2.0 / 3, 1.0 / 3, 1.0 / 3, 2.0 / 3, 0, 1;
  CHECK((red.transformation() - t).norm() < 1e-14);

  Eigen::MatrixXd kr(2, 2), mr(2, 2);
  kr << 4.0 / 3, -1.0 / 3, -1.0 / 3, 1.0 / 3;
  mr << 14.0 / 9, 4.0 / 9, 4.0 / 9, 14.0 / 9;
  CHECK((red.stiffness - k * kr).norm() < 1e-12 * k);
  CHECK((red.mass - m * mr).norm() < 1e-13 * m);
}

TEST_CASE("all-master reduction reproduces the full response exactly") {
  const auto s = strip_system();
  std::vector<int> all(s.system.stiffness.rows());
  std::iota(all.begin(), all.end(), 0);
  const auto part = DofPartition::from_masters(all, static_cast<int>(all.size()));
  fem::FrfRequest req;
  req.forces = {{10, 1.0}, {50, -0.5}};
  req.outputs = {3, 177};
  req.frequencies_hz = {100.0, 250.0, 700.0};
  const Eigen::VectorXd low = reduced_frf(s.system, part, req);
  const Eigen::VectorXd high = fem::solve_full_frf(s.system, req);
  REQUIRE(low.size() == high.size());
  for (Eigen::Index i = 0; i < low.size(); ++i) CHECK(low[i] == high[i]);
}

TEST_CASE("static condensation is exact for loads on masters") {
  const auto s = strip_system();
  const std::vector<int> required{5, 60, 121, 179};
  const auto part = select_masters(s.system, 30, required);
  const auto red = condense(s.system, part);
  Eigen::VectorXd fm = Eigen::VectorXd::Zero(part.master_count());
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  for (auto& x : fm) x = n01(rng);
  const Eigen::VectorXd um = red.stiffness.ldlt().solve(fm);
  const Eigen::VectorXd expanded = red.transformation() * um;

  Eigen::VectorXd f = Eigen::VectorXd::Zero(part.dof_count());
  for (int j = 0; j < part.master_count(); ++j) f[part.masters[j]] = fm[j];
  const Eigen::VectorXd exact = fem::solve_static(s.system.stiffness, f);
  CHECK((expanded - exact).norm() <= 1e-9 * exact.norm());
}

TEST_CASE("condensed frequencies bound the full ones from above") {
  const auto s = strip_system();
  const auto coarse = select_masters(s.system, 36, {});
  const auto fine = select_masters(s.system, 90, {});
  // halving selection yields nested master sets
  for (int dof : coarse.masters) REQUIRE(fine.master_position(dof) >= 0);
  const auto full = fem::natural_frequencies(s.system, 5);
  const auto f36 = natural_frequencies(condense(s.system, coarse), 5);
  const auto f90 = natural_frequencies(condense(s.system, fine), 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(f90[i] >= full[i] * (1.0 - 1e-12));
    CHECK(f36[i] >= f90[i] * (1.0 - 1e-12));
  }
}

TEST_CASE("master selection keeps required DOFs") {
  const auto s = strip_system();
  const std::vector<int> required{0, 1, 2, 99, 178};
  const auto part = select_masters(s.system, 20, required);
  CHECK(part.master_count() == 20);
  CHECK(part.dof_count() == 180);
  for (int dof : required) CHECK(part.master_position(dof) >= 0);
  CHECK(std::is_sorted(part.masters.begin(), part.masters.end()));
  CHECK_THROWS_AS(select_masters(s.system, 3, required), DomainError);
  CHECK_THROWS_AS(select_masters(s.system, 181, {}), DomainError);
}

TEST_CASE("forcing a slave DOF violates the reduction contract") {
  const auto chain = spring_chain(1.0, 1.0);
  const auto sys = fem::make_system(chain.m, chain.k, 0.01, 0.0);
  const auto part = DofPartition::from_masters({0, 3}, 4);
  fem::FrfRequest req;
  req.forces = {{1, 1.0}};
  req.outputs = {3};
  req.frequencies_hz = {0.1};
  CHECK_THROWS_AS(reduced_frf(sys, part, req), ContractError);
  req.forces = {{3, 1.0}};
  req.outputs = {1};
  CHECK(reduced_frf(sys, part, req).size() == 1);
}

TEST_CASE("default master count") {
  CHECK(default_master_count(3690, 7) == 240);
  CHECK(default_master_count(100, 7) == 14);
  CHECK(default_master_count(10, 7) == 10);
}

TEST_CASE("partition bookkeeping") {
  const auto part = DofPartition::from_masters({4, 1}, 6);
  CHECK(part.masters == std::vector<int>{1, 4});
  CHECK(part.slaves == std::vector<int>{0, 2, 3, 5});
  CHECK(part.master_position(4) == 1);
  CHECK(part.master_position(3) == -1);
  CHECK_THROWS_AS(DofPartition::from_masters({1, 1}, 6), DomainError);
  CHECK_THROWS_AS(DofPartition::from_masters({6}, 6), DomainError);
  CHECK_THROWS_AS(DofPartition::from_masters({}, 6), DomainError);
}
