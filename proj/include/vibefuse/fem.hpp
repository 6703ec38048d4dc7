#pragma once

// Segmented solid-element plate model: mesh generation, per-segment
// assembly, parameter realization, harmonic response and modal analysis.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <complex>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace vibefuse::fem {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using ComplexSparseMatrix = Eigen::SparseMatrix<std::complex<double>, Eigen::ColMajor, int>;
using Vec3 = Eigen::Vector3d;

inline constexpr int kSegmentCount = 6;
inline constexpr int kParameterCount = 2 * kSegmentCount;

/// Intersection of axis-aligned half-spaces. An unset bound is unbounded.
struct Region {
  std::array<std::optional<double>, 3> lower;
  std::array<std::optional<double>, 3> upper;

  bool contains(const Vec3& p, double tolerance) const;
};

struct PanelSpec {
  Vec3 origin = Vec3::Zero();
  Vec3 extents = Vec3::Ones();
  std::array<int, 3> divisions{1, 1, 1};
};

struct GeometryConfig {
  std::vector<PanelSpec> panels;
  double merge_tolerance = 1e-9;
  /// Nodes inside any of these regions are clamped (all three DOFs).
  std::vector<Region> fixed_nodes;
  /// Element centroids are assigned to the unique segment region containing them.
  std::vector<Region> segment_regions;
  /// Must be set to build a model without any clamped node.
  bool free_free = false;

  void validate() const;
};

struct MaterialSpec {
  double density = 7.85e3;
  double youngs_modulus = 206e9;
  double poisson_ratio = 0.3;
  double mass_damping = 0.01;        // a_M [1/s]
  double stiffness_damping = 1e-4;   // a_K [s]

  void validate() const;
};

struct MeshModel {
  std::vector<Vec3> nodes;
  std::vector<std::array<int, 8>> elements;
  std::vector<int> element_segment;
  /// Global equation number per node and direction, -1 when clamped.
  std::vector<std::array<int, 3>> node_dofs;
  int dof_count = 0;
  bool free_free = false;

  int free_node_count() const;
  /// Free node closest to `point` (ties broken by lowest index).
  int nearest_free_node(const Vec3& point) const;
};

MeshModel build_mesh(const GeometryConfig& config);

/// Trilinear hexahedron, 2x2x2 Gauss quadrature, consistent mass, isotropic
/// elasticity. Node order follows the usual (-,-,-), (+,-,-), (+,+,-), (-,+,-),
/// then the same on the +zeta face. DOFs are node-major (x, y, z).
struct ElementMatrices {
  Eigen::Matrix<double, 24, 24> stiffness;
  Eigen::Matrix<double, 24, 24> mass;
};
ElementMatrices hex8_matrices(const std::array<Vec3, 8>& coords, double youngs_modulus,
                              double poisson_ratio, double density);

/// Relative deviations (delta_rho_s, delta_E_s) for each segment s, stored
/// interleaved: [rho_0, E_0, rho_1, E_1, ...].
class UncertainInput {
 public:
  UncertainInput() : values_(Eigen::VectorXd::Zero(kParameterCount)) {}
  explicit UncertainInput(Eigen::VectorXd values);

  double density_deviation(int segment) const { return values_[2 * segment]; }
  double modulus_deviation(int segment) const { return values_[2 * segment + 1]; }
  const Eigen::VectorXd& values() const { return values_; }

  static UncertainInput uniform(double density_deviation, double modulus_deviation);

 private:
  Eigen::VectorXd values_;
};

struct SystemMatrices {
  SparseMatrix mass;
  SparseMatrix damping;
  SparseMatrix stiffness;
  Eigen::VectorXd theta;
};

/// Per-segment nominal mass and stiffness blocks. All blocks share the sparsity
/// pattern of the full model, so realizing a parameter sample is a linear
/// combination of value arrays. Immutable after assembly.
class SegmentedSystem {
 public:
  SegmentedSystem(SparseMatrix pattern, std::vector<Eigen::VectorXd> mass_values,
                  std::vector<Eigen::VectorXd> stiffness_values, MaterialSpec material);

  int dof_count() const { return static_cast<int>(pattern_.rows()); }
  int segment_count() const { return static_cast<int>(mass_values_.size()); }
  const MaterialSpec& material() const { return material_; }

  SparseMatrix mass_block(int segment) const;
  SparseMatrix stiffness_block(int segment) const;
  const SparseMatrix& nominal_mass() const { return nominal_mass_; }
  const SparseMatrix& nominal_stiffness() const { return nominal_stiffness_; }

  SystemMatrices realize(const UncertainInput& theta) const;

 private:
  SparseMatrix with_values(const Eigen::VectorXd& values) const;

  SparseMatrix pattern_;
  std::vector<Eigen::VectorXd> mass_values_;
  std::vector<Eigen::VectorXd> stiffness_values_;
  MaterialSpec material_;
  SparseMatrix nominal_mass_;
  SparseMatrix nominal_stiffness_;
};

SegmentedSystem assemble_segments(const MeshModel& mesh, const MaterialSpec& material);

/// Wraps SegmentedSystem::realize with domain checks on 1 + delta > 0.
SystemMatrices realize_system(const SegmentedSystem& system, const UncertainInput& theta);

/// Builds SystemMatrices directly from dense M, K (small hand-made systems).
SystemMatrices make_system(const Eigen::MatrixXd& mass, const Eigen::MatrixXd& stiffness,
                           double mass_damping, double stiffness_damping);
SystemMatrices make_system(const Eigen::MatrixXd& mass, const Eigen::MatrixXd& damping,
                           const Eigen::MatrixXd& stiffness);

struct FrfRequest {
  std::vector<std::pair<int, double>> forces;  // (dof, amplitude [N])
  std::vector<double> frequencies_hz;          // strictly increasing
  std::vector<int> outputs;                    // response dofs

  void validate(int dof_count) const;
  Eigen::VectorXd force_vector(int dof_count) const;
  int output_count() const { return static_cast<int>(outputs.size()); }
  int frequency_count() const { return static_cast<int>(frequencies_hz.size()); }
};

/// Uniform grid of `count` points from start to stop inclusive.
std::vector<double> linear_grid(double start, double stop, int count);

/// Complex amplitudes at the requested outputs. Layout: entry (k + n * r) is
/// output k at frequency r, i.e. outputs vary fastest within each frequency.
Eigen::VectorXcd solve_full_frf_complex(const SystemMatrices& system, const FrfRequest& request);

/// |Z| at the requested outputs, same layout as solve_full_frf_complex.
Eigen::VectorXd solve_full_frf(const SystemMatrices& system, const FrfRequest& request);

/// Direct sparse solve of K u = f.
Eigen::VectorXd solve_static(const SparseMatrix& stiffness, const Eigen::VectorXd& load);

struct ModalResult {
  Eigen::VectorXd eigenvalues;   // rad^2/s^2, ascending
  Eigen::MatrixXd modes;         // mass-normalized columns
  Eigen::VectorXd frequencies_hz;
  /// max_i |K phi_i - lambda_i M phi_i| / |K phi_i|
  double max_residual = 0.0;
};

/// Lowest `count` eigenpairs of K phi = lambda M phi.
ModalResult modal_analysis(const SparseMatrix& stiffness, const SparseMatrix& mass, int count);
/// Dense variant for small systems.
ModalResult modal_analysis(const Eigen::MatrixXd& stiffness, const Eigen::MatrixXd& mass, int count);

std::vector<double> natural_frequencies(const SystemMatrices& system, int count);

}  // namespace vibefuse::fem
