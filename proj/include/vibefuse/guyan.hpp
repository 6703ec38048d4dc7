#pragma once

// Guyan (static) condensation onto a fixed set of master DOFs and the
// low-fidelity frequency response built on it.

#include "vibefuse/fem.hpp"

#include <Eigen/SparseCholesky>

#include <memory>
#include <vector>

namespace vibefuse::guyan {

using fem::SparseMatrix;

struct DofPartition {
  std::vector<int> masters;  // ascending
  std::vector<int> slaves;   // ascending

  int dof_count() const { return static_cast<int>(masters.size() + slaves.size()); }
  int master_count() const { return static_cast<int>(masters.size()); }
  /// Position of `dof` within `masters`, or -1.
  int master_position(int dof) const;

  static DofPartition from_masters(std::vector<int> masters, int dof_count);
};

/// Default master count: 6.5% of N, at least twice the number of forced and
/// output DOFs, never more than N.
int default_master_count(int dof_count, int required_count);

/// Iteratively discards the DOFs with the largest K_ii / M_ii ratio of the
/// current condensed system (halving the candidate set per round) until
/// `target_count` remain. `required` DOFs are never discarded.
DofPartition select_masters(const fem::SystemMatrices& system, int target_count,
                            const std::vector<int>& required);

struct ReducedSystem {
  DofPartition partition;
  std::shared_ptr<const Eigen::SimplicialLDLT<SparseMatrix>> slave_stiffness;  // K_ss
  SparseMatrix slave_master_stiffness;                                          // K_sm
  Eigen::MatrixXd mass;       // M_r
  Eigen::MatrixXd damping;    // C_r
  Eigen::MatrixXd stiffness;  // K_r
  Eigen::VectorXd theta;

  /// T_G in original DOF order (N x N_m).
  Eigen::MatrixXd transformation() const;
  /// -K_ss^{-1} K_sm z_m
  Eigen::MatrixXcd recover_slaves(const Eigen::MatrixXcd& master_amplitudes) const;
};

ReducedSystem condense(const fem::SystemMatrices& system, const DofPartition& partition);

/// Complex master amplitudes, one column per frequency (N_m x p).
Eigen::MatrixXcd solve_reduced_frf(const ReducedSystem& reduced, const fem::FrfRequest& request);

/// Magnitudes at `outputs` from master amplitudes, ordered like the full
/// response (outputs fastest within each frequency).
Eigen::VectorXd expand_response(const ReducedSystem& reduced, const Eigen::MatrixXcd& master_amplitudes,
                                const std::vector<int>& outputs);

/// Full-length complex response T_G z_m for a single frequency column.
Eigen::VectorXcd expand_full(const ReducedSystem& reduced, const Eigen::VectorXcd& master_amplitudes);

/// Condense, solve and expand in one call.
Eigen::VectorXd reduced_frf(const fem::SystemMatrices& system, const DofPartition& partition,
                            const fem::FrfRequest& request);

std::vector<double> natural_frequencies(const ReducedSystem& reduced, int count);

}  // namespace vibefuse::guyan
