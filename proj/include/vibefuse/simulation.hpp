#pragma once

// A fully resolved structural model: mesh, segmented matrices, excitation,
// output DOFs and the frozen Guyan master set. Both fidelity levels of the
// frequency response are evaluated through it.

#include "vibefuse/fem.hpp"
#include "vibefuse/guyan.hpp"

#include <optional>
#include <string>
#include <vector>

namespace vibefuse::sim {

/// Selects a DOF either directly or as the nearest free node to a point.
struct DofSelector {
  std::optional<fem::Vec3> point;
  std::optional<int> dof;
  int direction = 2;  // 0 = x, 1 = y, 2 = z
  double amplitude = 1.0;
};

struct ModelSpec {
  fem::GeometryConfig geometry;
  fem::MaterialSpec material;
  std::vector<DofSelector> forces;
  std::vector<DofSelector> outputs;
  double freq_start_hz = 120.0;
  double freq_stop_hz = 170.0;
  int freq_count = 10;
  int mode_count = 5;
};

struct ReductionSpec {
  std::optional<int> master_count;
  /// If non-empty, used verbatim instead of the selection heuristic.
  std::vector<int> explicit_masters;
  /// Every DOF is a master; the low-fidelity model then equals the full one.
  bool all_masters = false;
};

struct ModeComparison {
  std::vector<double> full_hz;
  std::vector<double> guyan_hz;
  double full_residual = 0.0;
};

class StructuralModel {
 public:
  StructuralModel(const ModelSpec& model, const ReductionSpec& reduction);

  const fem::MeshModel& mesh() const { return mesh_; }
  const fem::SegmentedSystem& system() const { return system_; }
  const fem::FrfRequest& request() const { return request_; }
  const guyan::DofPartition& partition() const { return partition_; }
  int dof_count() const { return system_.dof_count(); }
  int parameter_count() const { return 2 * system_.segment_count(); }
  int response_length() const { return request_.output_count() * request_.frequency_count(); }

  /// Full-model FRF magnitudes for one parameter sample.
  Eigen::VectorXd high_fidelity(const Eigen::VectorXd& theta) const;
  /// Guyan-reduced FRF magnitudes on the frozen partition.
  Eigen::VectorXd low_fidelity(const Eigen::VectorXd& theta) const;

  /// Natural frequencies of the nominal system, full vs reduced.
  ModeComparison compare_modes(int count) const;

 private:
  fem::MeshModel mesh_;
  fem::SegmentedSystem system_;
  fem::FrfRequest request_;
  guyan::DofPartition partition_;
};

int resolve_dof(const fem::MeshModel& mesh, const DofSelector& selector);

}  // namespace vibefuse::sim
