#include "vibefuse/simulation.hpp"

#include "vibefuse/errors.hpp"

#include <algorithm>

namespace vibefuse::sim {

namespace {
constexpr const char* kModule = "dataset-io";

fem::FrfRequest build_request(const fem::MeshModel& mesh, const ModelSpec& spec) {
  if (spec.forces.empty()) throw ConfigError(kModule, "model needs at least one force");
  if (spec.outputs.empty()) throw ConfigError(kModule, "model needs at least one output DOF");
  fem::FrfRequest req;
  for (const auto& f : spec.forces) req.forces.emplace_back(resolve_dof(mesh, f), f.amplitude);
  for (const auto& o : spec.outputs) req.outputs.push_back(resolve_dof(mesh, o));
  req.frequencies_hz = fem::linear_grid(spec.freq_start_hz, spec.freq_stop_hz, spec.freq_count);
  req.validate(mesh.dof_count);
  return req;
}

guyan::DofPartition build_partition(const fem::SegmentedSystem& system, const fem::FrfRequest& req,
                                    const ReductionSpec& spec) {
  const int n = system.dof_count();
  if (spec.all_masters) {
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    return guyan::DofPartition::from_masters(all, n);
  }
  std::vector<int> required;
  for (const auto& [dof, amp] : req.forces) required.push_back(dof);
  required.insert(required.end(), req.outputs.begin(), req.outputs.end());
  std::sort(required.begin(), required.end());
  required.erase(std::unique(required.begin(), required.end()), required.end());

  if (!spec.explicit_masters.empty()) {
    auto part = guyan::DofPartition::from_masters(spec.explicit_masters, n);
    for (int dof : required)
      if (part.master_position(dof) < 0)
        throw ConfigError(kModule, "explicit master list must contain every forced and output DOF");
    return part;
  }
  const int target = spec.master_count ? *spec.master_count
                                       : guyan::default_master_count(n, static_cast<int>(required.size()));
  const auto nominal = fem::realize_system(system, fem::UncertainInput());
  return guyan::select_masters(nominal, target, required);
}
}  // namespace

int resolve_dof(const fem::MeshModel& mesh, const DofSelector& selector) {
  if (selector.direction < 0 || selector.direction > 2) throw ConfigError(kModule, "direction must be x, y or z");
  if (selector.dof) {
    if (*selector.dof < 0 || *selector.dof >= mesh.dof_count)
      throw ConfigError(kModule, "DOF " + std::to_string(*selector.dof) + " out of range");
    return *selector.dof;
  }
  if (!selector.point) throw ConfigError(kModule, "DOF selector needs either a point or a dof");
  const int node = mesh.nearest_free_node(*selector.point);
  return mesh.node_dofs[node][selector.direction];
}

StructuralModel::StructuralModel(const ModelSpec& model, const ReductionSpec& reduction)
    : mesh_(fem::build_mesh(model.geometry)),
      system_(fem::assemble_segments(mesh_, model.material)),
      request_(build_request(mesh_, model)),
      partition_(build_partition(system_, request_, reduction)) {}

Eigen::VectorXd StructuralModel::high_fidelity(const Eigen::VectorXd& theta) const {
  const auto realized = fem::realize_system(system_, fem::UncertainInput(theta));
  return fem::solve_full_frf(realized, request_);
}

Eigen::VectorXd StructuralModel::low_fidelity(const Eigen::VectorXd& theta) const {
  const auto realized = fem::realize_system(system_, fem::UncertainInput(theta));
  return guyan::reduced_frf(realized, partition_, request_);
}

ModeComparison StructuralModel::compare_modes(int count) const {
  const auto nominal = fem::realize_system(system_, fem::UncertainInput());
  const auto modal = fem::modal_analysis(nominal.stiffness, nominal.mass, count);
  ModeComparison out;
  out.full_hz.assign(modal.frequencies_hz.data(), modal.frequencies_hz.data() + modal.frequencies_hz.size());
  out.full_residual = modal.max_residual;
  out.guyan_hz = guyan::natural_frequencies(guyan::condense(nominal, partition_), count);
  return out;
}

}  // namespace vibefuse::sim
