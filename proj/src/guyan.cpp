#include "vibefuse/guyan.hpp"

#include "vibefuse/errors.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace vibefuse::guyan {

namespace {

constexpr const char* kModule = "guyan-rom";

// Rows/cols of `m` restricted to index lists (both ascending).
SparseMatrix extract(const SparseMatrix& m, const std::vector<int>& rows, const std::vector<int>& cols) {
  std::vector<int> row_map(m.rows(), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) row_map[rows[i]] = static_cast<int>(i);
  std::vector<Eigen::Triplet<double, int>> triplets;
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (SparseMatrix::InnerIterator it(m, cols[j]); it; ++it)
      if (const int r = row_map[it.row()]; r >= 0) triplets.emplace_back(r, static_cast<int>(j), it.value());
  SparseMatrix out(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> factor_slaves(const SparseMatrix& kss) {
  auto ldlt = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(kss);
  if (ldlt->info() != Eigen::Success || (ldlt->vectorD().array() <= 0.0).any())
    throw SolverError(kModule, "slave stiffness block K_ss is not positive definite");
  return ldlt;
}

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

// diag(T_G^T K T_G) and diag(T_G^T M T_G) for the current master set.
void condensed_diagonals(const fem::SystemMatrices& system, const DofPartition& part, Eigen::VectorXd& kdiag,
                         Eigen::VectorXd& mdiag) {
  const int nm = part.master_count();
  kdiag.resize(nm);
  mdiag.resize(nm);
  if (part.slaves.empty()) {
    for (int j = 0; j < nm; ++j) {
      kdiag[j] = system.stiffness.coeff(part.masters[j], part.masters[j]);
      mdiag[j] = system.mass.coeff(part.masters[j], part.masters[j]);
    }
    return;
  }
  const SparseMatrix kss = extract(system.stiffness, part.slaves, part.slaves);
  const SparseMatrix ksm = extract(system.stiffness, part.slaves, part.masters);
  const auto ldlt = factor_slaves(kss);
  const int n = part.dof_count();
  constexpr int kChunk = 64;
  Eigen::VectorXd v(n);
  for (int j0 = 0; j0 < nm; j0 += kChunk) {
    const int width = std::min(kChunk, nm - j0);
    const Eigen::MatrixXd rhs = Eigen::MatrixXd(ksm.middleCols(j0, width));
    const Eigen::MatrixXd t = -ldlt->solve(rhs);
    for (int c = 0; c < width; ++c) {
      v.setZero();
      v[part.masters[j0 + c]] = 1.0;
      for (std::size_t s = 0; s < part.slaves.size(); ++s) v[part.slaves[s]] = t(static_cast<Eigen::Index>(s), c);
      kdiag[j0 + c] = v.dot(system.stiffness * v);
      mdiag[j0 + c] = v.dot(system.mass * v);
    }
  }
}

}  // namespace

int DofPartition::master_position(int dof) const {
  const auto it = std::lower_bound(masters.begin(), masters.end(), dof);
  if (it == masters.end() || *it != dof) return -1;
  return static_cast<int>(it - masters.begin());
}

DofPartition DofPartition::from_masters(std::vector<int> masters, int dof_count) {
  std::sort(masters.begin(), masters.end());
  if (std::adjacent_find(masters.begin(), masters.end()) != masters.end())
    throw DomainError(kModule, "duplicate master DOF");
  if (!masters.empty() && (masters.front() < 0 || masters.back() >= dof_count))
    throw DomainError(kModule, "master DOF out of range");
  if (masters.empty()) throw DomainError(kModule, "partition needs at least one master DOF");
  DofPartition part;
  part.masters = std::move(masters);
  part.slaves.reserve(dof_count - part.masters.size());
  std::size_t m = 0;
  for (int dof = 0; dof < dof_count; ++dof) {
    if (m < part.masters.size() && part.masters[m] == dof) {
      ++m;
      continue;
    }
    part.slaves.push_back(dof);
  }
  return part;
}

int default_master_count(int dof_count, int required_count) {
  const int by_ratio = static_cast<int>(std::lround(0.065 * dof_count));
  return std::min(dof_count, std::max(by_ratio, 2 * required_count));
}

DofPartition select_masters(const fem::SystemMatrices& system, int target_count,
                            const std::vector<int>& required) {
  const int n = static_cast<int>(system.stiffness.rows());
  std::vector<int> req = required;
  std::sort(req.begin(), req.end());
  req.erase(std::unique(req.begin(), req.end()), req.end());
  for (int dof : req)
    if (dof < 0 || dof >= n) throw DomainError(kModule, "required DOF out of range");
  if (target_count < static_cast<int>(req.size()))
    throw DomainError(kModule, "master count is smaller than the number of required DOFs");
  if (target_count > n) throw DomainError(kModule, "master count exceeds the number of DOFs");
  if (target_count < 1) throw DomainError(kModule, "master count must be positive");

  std::vector<int> current(n);
  std::iota(current.begin(), current.end(), 0);
  while (static_cast<int>(current.size()) > target_count) {
    const auto part = DofPartition::from_masters(current, n);
    Eigen::VectorXd kdiag, mdiag;
    condensed_diagonals(system, part, kdiag, mdiag);

    std::vector<int> candidates;
    for (int j = 0; j < part.master_count(); ++j)
      if (!std::binary_search(req.begin(), req.end(), part.masters[j])) candidates.push_back(j);
    const int keep = std::max(target_count, static_cast<int>(current.size()) / 2);
    const int drop = static_cast<int>(current.size()) - keep;
    auto ratio = [&](int j) { return mdiag[j] > 0.0 ? kdiag[j] / mdiag[j] : std::numeric_limits<double>::infinity(); };
    std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) { return ratio(a) > ratio(b); });

    std::vector<char> dropped(part.master_count(), 0);
    for (int i = 0; i < drop; ++i) dropped[candidates[i]] = 1;
    std::vector<int> next;
    next.reserve(keep);
    for (int j = 0; j < part.master_count(); ++j)
      if (!dropped[j]) next.push_back(part.masters[j]);
    current = std::move(next);
  }
  return DofPartition::from_masters(std::move(current), n);
}

Eigen::MatrixXd ReducedSystem::transformation() const {
  const int n = partition.dof_count();
  const int nm = partition.master_count();
  Eigen::MatrixXd tg = Eigen::MatrixXd::Zero(n, nm);
  for (int j = 0; j < nm; ++j) tg(partition.masters[j], j) = 1.0;
  if (!partition.slaves.empty()) {
    const Eigen::MatrixXd t = -slave_stiffness->solve(Eigen::MatrixXd(slave_master_stiffness));
    for (std::size_t s = 0; s < partition.slaves.size(); ++s) tg.row(partition.slaves[s]) = t.row(s);
  }
  return tg;
}

Eigen::MatrixXcd ReducedSystem::recover_slaves(const Eigen::MatrixXcd& master_amplitudes) const {
  if (master_amplitudes.rows() != partition.master_count())
    throw DomainError(kModule, "master amplitude vector has the wrong length");
  if (partition.slaves.empty()) return Eigen::MatrixXcd(0, master_amplitudes.cols());
  const Eigen::MatrixXd re = slave_master_stiffness * master_amplitudes.real();
  const Eigen::MatrixXd im = slave_master_stiffness * master_amplitudes.imag();
  Eigen::MatrixXcd out(partition.slaves.size(), master_amplitudes.cols());
  out.real() = -slave_stiffness->solve(re);
  out.imag() = -slave_stiffness->solve(im);
  return out;
}

ReducedSystem condense(const fem::SystemMatrices& system, const DofPartition& partition) {
  const int n = static_cast<int>(system.stiffness.rows());
  if (partition.dof_count() != n) throw DomainError(kModule, "partition does not cover the system");

  ReducedSystem red;
  red.partition = partition;
  red.theta = system.theta;
  if (partition.slaves.empty()) {
    red.mass = Eigen::MatrixXd(system.mass);
    red.damping = Eigen::MatrixXd(system.damping);
    red.stiffness = Eigen::MatrixXd(system.stiffness);
    return red;
  }
  red.slave_stiffness = factor_slaves(extract(system.stiffness, partition.slaves, partition.slaves));
  red.slave_master_stiffness = extract(system.stiffness, partition.slaves, partition.masters);

  const Eigen::MatrixXd tg = red.transformation();
  red.mass = symmetrized(tg.transpose() * (system.mass * tg));
  red.damping = symmetrized(tg.transpose() * (system.damping * tg));
  red.stiffness = symmetrized(tg.transpose() * (system.stiffness * tg));
  return red;
}

Eigen::MatrixXcd solve_reduced_frf(const ReducedSystem& reduced, const fem::FrfRequest& request) {
  const int nm = reduced.partition.master_count();
  request.validate(reduced.partition.dof_count());
  Eigen::VectorXcd load = Eigen::VectorXcd::Zero(nm);
  for (const auto& [dof, amplitude] : request.forces) {
    const int pos = reduced.partition.master_position(dof);
    if (pos < 0) throw ContractError(kModule, "forced DOF " + std::to_string(dof) + " is not a master");
    load[pos] += amplitude;
  }
  const double load_norm = load.norm();
  if (load_norm == 0.0) throw DomainError(kModule, "reduced load vector is identically zero");

  const Eigen::MatrixXcd mass = reduced.mass.cast<std::complex<double>>();
  const Eigen::MatrixXcd damping = reduced.damping.cast<std::complex<double>>();
  const Eigen::MatrixXcd stiffness = reduced.stiffness.cast<std::complex<double>>();
  Eigen::MatrixXcd out(nm, request.frequency_count());
  for (int r = 0; r < request.frequency_count(); ++r) {
    const double omega = 2.0 * std::numbers::pi * request.frequencies_hz[r];
    const Eigen::MatrixXcd a = stiffness - (omega * omega) * mass + std::complex<double>(0.0, omega) * damping;
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(a);
    Eigen::VectorXcd z = lu.solve(load);
    double residual = (a * z - load).norm() / load_norm;
    for (int refine = 0; refine < 3 && residual >= 1e-12; ++refine) {
      const Eigen::VectorXcd correction = load - a * z;
      z += lu.solve(correction);
      residual = (a * z - load).norm() / load_norm;
    }
    if (!std::isfinite(residual) || residual >= 1e-10) {
      std::ostringstream msg;
      msg << "reduced harmonic solve residual " << residual << " at frequency index " << r;
      throw SolverError(kModule, msg.str());
    }
    out.col(r) = z;
  }
  return out;
}

Eigen::VectorXcd expand_full(const ReducedSystem& reduced, const Eigen::VectorXcd& master_amplitudes) {
  const auto& part = reduced.partition;
  Eigen::VectorXcd full(part.dof_count());
  const Eigen::MatrixXcd slaves = reduced.recover_slaves(master_amplitudes);
  for (int j = 0; j < part.master_count(); ++j) full[part.masters[j]] = master_amplitudes[j];
  for (std::size_t s = 0; s < part.slaves.size(); ++s) full[part.slaves[s]] = slaves(static_cast<Eigen::Index>(s), 0);
  return full;
}

Eigen::VectorXd expand_response(const ReducedSystem& reduced, const Eigen::MatrixXcd& master_amplitudes,
                                const std::vector<int>& outputs) {
  const auto& part = reduced.partition;
  if (master_amplitudes.rows() != part.master_count())
    throw DomainError(kModule, "master amplitude matrix has the wrong number of rows");
  const bool need_slaves = std::any_of(outputs.begin(), outputs.end(),
                                       [&](int dof) { return part.master_position(dof) < 0; });
  Eigen::MatrixXcd slaves;
  if (need_slaves) slaves = reduced.recover_slaves(master_amplitudes);

  const int n_out = static_cast<int>(outputs.size());
  const auto p = master_amplitudes.cols();
  Eigen::VectorXd out(n_out * p);
  for (Eigen::Index r = 0; r < p; ++r)
    for (int k = 0; k < n_out; ++k) {
      const int dof = outputs[k];
      if (dof < 0 || dof >= part.dof_count()) throw DomainError(kModule, "output DOF out of range");
      if (const int pos = part.master_position(dof); pos >= 0) {
        out[k + n_out * r] = std::abs(master_amplitudes(pos, r));
      } else {
        const auto s = std::lower_bound(part.slaves.begin(), part.slaves.end(), dof) - part.slaves.begin();
        out[k + n_out * r] = std::abs(slaves(s, r));
      }
    }
  return out;
}

Eigen::VectorXd reduced_frf(const fem::SystemMatrices& system, const DofPartition& partition,
                            const fem::FrfRequest& request) {
  // Without slaves the reduced problem is the full one; share its solver so
  // both levels agree to the last bit.
  if (partition.slaves.empty()) {
    if (partition.dof_count() != system.stiffness.rows()) throw DomainError(kModule, "partition does not cover the system");
    return fem::solve_full_frf(system, request);
  }
  const auto reduced = condense(system, partition);
  return expand_response(reduced, solve_reduced_frf(reduced, request), request.outputs);
}

std::vector<double> natural_frequencies(const ReducedSystem& reduced, int count) {
  const auto modal = fem::modal_analysis(reduced.stiffness, reduced.mass, count);
  return {modal.frequencies_hz.data(), modal.frequencies_hz.data() + modal.frequencies_hz.size()};
}

}  // namespace vibefuse::guyan
