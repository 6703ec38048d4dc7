#include "vibefuse/fem.hpp"

#include "vibefuse/errors.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace vibefuse::fem {

namespace {

constexpr const char* kModule = "fem-plate";

using Triplet = Eigen::Triplet<double, int>;

struct GridKey {
  long long x, y, z;
  bool operator==(const GridKey&) const = default;
};

struct GridKeyHash {
  std::size_t operator()(const GridKey& k) const noexcept {
    std::size_t h = static_cast<std::size_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::size_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::size_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return h;
  }
};

// Node registry merging coincident points within a tolerance.
class NodeMerger {
 public:
  explicit NodeMerger(double tolerance) : tolerance_(tolerance) {}

  int insert(const Vec3& p) {
    const GridKey key = key_of(p);
    for (long long dx = -1; dx <= 1; ++dx)
      for (long long dy = -1; dy <= 1; ++dy)
        for (long long dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find({key.x + dx, key.y + dy, key.z + dz});
          if (it == cells_.end()) continue;
          for (int id : it->second)
            if ((nodes_[id] - p).norm() <= tolerance_) return id;
        }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(p);
    cells_[key].push_back(id);
    return id;
  }

  std::vector<Vec3> release() { return std::move(nodes_); }

 private:
  GridKey key_of(const Vec3& p) const {
    const double cell = 2.0 * tolerance_;
    return {static_cast<long long>(std::floor(p.x() / cell)),
            static_cast<long long>(std::floor(p.y() / cell)),
            static_cast<long long>(std::floor(p.z() / cell))};
  }

  double tolerance_;
  std::vector<Vec3> nodes_;
  std::unordered_map<GridKey, std::vector<int>, GridKeyHash> cells_;
};

int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

Eigen::Matrix<double, 6, 6> isotropic_elasticity(double e, double nu) {
  const double lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
  const double mu = e / (2.0 * (1.0 + nu));
  Eigen::Matrix<double, 6, 6> d = Eigen::Matrix<double, 6, 6>::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) d(i, j) = lambda;
    d(i, i) = lambda + 2.0 * mu;
    d(i + 3, i + 3) = mu;
  }
  return d;
}

// Copies the values of `block` into an array aligned with `pattern`. The
// pattern of `block` must be a subset of `pattern`.
Eigen::VectorXd scatter_to_pattern(const SparseMatrix& pattern, const SparseMatrix& block) {
  Eigen::VectorXd values = Eigen::VectorXd::Zero(pattern.nonZeros());
  for (int col = 0; col < pattern.outerSize(); ++col) {
    int p = pattern.outerIndexPtr()[col];
    const int p_end = pattern.outerIndexPtr()[col + 1];
    for (SparseMatrix::InnerIterator it(block, col); it; ++it) {
      while (p < p_end && pattern.innerIndexPtr()[p] < it.row()) ++p;
      if (p == p_end || pattern.innerIndexPtr()[p] != it.row())
        throw Error(kModule, "segment block entry outside the global pattern");
      values[p] = it.value();
    }
  }
  return values;
}

// Harmonic solver for A(w) = K - w^2 M + i w C. The symbolic analysis is
// computed once per pattern and reused for every frequency.
class HarmonicSolver {
 public:
  explicit HarmonicSolver(const SystemMatrices& system) {
    const auto& k = system.stiffness;
    if (k.rows() != k.cols() || system.mass.rows() != k.rows() ||
        system.damping.rows() != k.rows())
      throw Error(kModule, "system matrices have inconsistent shapes");
    const ComplexSparseMatrix cm = system.mass.cast<std::complex<double>>();
    const ComplexSparseMatrix cc = system.damping.cast<std::complex<double>>();
    const ComplexSparseMatrix ck = system.stiffness.cast<std::complex<double>>();
    // Union pattern with all three value arrays aligned to it.
    operator_ = ck + cm + cc;
    operator_.makeCompressed();
    auto align = [&](const ComplexSparseMatrix& m) {
      Eigen::VectorXcd out = Eigen::VectorXcd::Zero(operator_.nonZeros());
      for (int col = 0; col < operator_.outerSize(); ++col) {
        int p = operator_.outerIndexPtr()[col];
        for (ComplexSparseMatrix::InnerIterator it(m, col); it; ++it) {
          while (operator_.innerIndexPtr()[p] < it.row()) ++p;
          out[p] = it.value();
        }
      }
      return out;
    };
    mass_values_ = align(cm);
    damping_values_ = align(cc);
    stiffness_values_ = align(ck);
    solver_.analyzePattern(operator_);
  }

  Eigen::VectorXcd solve(double omega, const Eigen::VectorXd& load, int frequency_index) {
    Eigen::Map<Eigen::VectorXcd> values(operator_.valuePtr(), operator_.nonZeros());
    values = stiffness_values_ - (omega * omega) * mass_values_ +
             std::complex<double>(0.0, omega) * damping_values_;
    solver_.factorize(operator_);
    if (solver_.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "singular dynamic stiffness at frequency index " << frequency_index;
      throw SolverError(kModule, msg.str());
    }
    const Eigen::VectorXcd rhs = load.cast<std::complex<double>>();
    Eigen::VectorXcd z = solver_.solve(rhs);
    Eigen::VectorXcd r(rhs.size());
    const double load_norm = load.norm();
    double residual = residual_into(z, load, r) / load_norm;
    for (int refine = 0; refine < 4 && residual >= 1e-13; ++refine) {
      z += solver_.solve(r);
      const double next = residual_into(z, load, r) / load_norm;
      if (!(next < residual)) {
        residual = next;
        break;
      }
      residual = next;
    }
    if (!std::isfinite(residual) || residual >= 1e-10) {
      std::ostringstream msg;
      msg << "harmonic solve residual " << residual << " at frequency index " << frequency_index;
      throw SolverError(kModule, msg.str());
    }
    return z;
  }

 private:
  // r = F - A z accumulated in extended precision; returns |r|.
  double residual_into(const Eigen::VectorXcd& z, const Eigen::VectorXd& load, Eigen::VectorXcd& r) const {
    using Wide = std::complex<long double>;
    std::vector<Wide> acc(load.size());
    for (Eigen::Index i = 0; i < load.size(); ++i) acc[i] = Wide(load[i], 0.0L);
    for (int col = 0; col < operator_.outerSize(); ++col) {
      const Wide zc(z[col].real(), z[col].imag());
      for (ComplexSparseMatrix::InnerIterator it(operator_, col); it; ++it)
        acc[it.row()] -= Wide(it.value().real(), it.value().imag()) * zc;
    }
    long double norm2 = 0.0L;
    for (Eigen::Index i = 0; i < load.size(); ++i) {
      r[i] = std::complex<double>(static_cast<double>(acc[i].real()), static_cast<double>(acc[i].imag()));
      norm2 += std::norm(acc[i]);
    }
    return static_cast<double>(std::sqrt(norm2));
  }

  ComplexSparseMatrix operator_;
  Eigen::VectorXcd mass_values_, damping_values_, stiffness_values_;
  Eigen::SparseLU<ComplexSparseMatrix, Eigen::COLAMDOrdering<int>> solver_;
};

SparseMatrix sparse_from_dense(const Eigen::MatrixXd& dense, const Eigen::MatrixXd& mask) {
  std::vector<Triplet> triplets;
  for (int j = 0; j < dense.cols(); ++j)
    for (int i = 0; i < dense.rows(); ++i)
      if (mask(i, j) != 0.0) triplets.emplace_back(i, j, dense(i, j));
  SparseMatrix out(dense.rows(), dense.cols());
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

void check_square(const Eigen::MatrixXd& m, Eigen::Index n, const char* what) {
  if (m.rows() != n || m.cols() != n)
    throw DomainError(kModule, std::string(what) + " has the wrong shape");
}

ModalResult finish_modal(Eigen::VectorXd eigenvalues, Eigen::MatrixXd modes, double residual) {
  ModalResult result;
  result.max_residual = residual;
  result.frequencies_hz.resize(eigenvalues.size());
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    result.frequencies_hz[i] = std::sqrt(std::max(eigenvalues[i], 0.0)) / (2.0 * std::numbers::pi);
  result.eigenvalues = std::move(eigenvalues);
  result.modes = std::move(modes);
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// Geometry

bool Region::contains(const Vec3& p, double tolerance) const {
  for (int a = 0; a < 3; ++a) {
    if (lower[a] && p[a] < *lower[a] - tolerance) return false;
    if (upper[a] && p[a] > *upper[a] + tolerance) return false;
  }
  return true;
}

void GeometryConfig::validate() const {
  if (panels.empty()) throw GeometryError(kModule, "geometry has no panels");
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const auto& panel = panels[i];
    for (int a = 0; a < 3; ++a) {
      if (panel.divisions[a] < 1)
        throw GeometryError(kModule, "panel " + std::to_string(i) + " has fewer than 1 element on an axis");
      if (!(panel.extents[a] > 0.0))
        throw GeometryError(kModule, "panel " + std::to_string(i) + " has a non-positive extent");
    }
  }
  if (!(merge_tolerance > 0.0)) throw GeometryError(kModule, "merge tolerance must be positive");
  if (static_cast<int>(segment_regions.size()) != kSegmentCount)
    throw GeometryError(kModule, "exactly " + std::to_string(kSegmentCount) + " segment regions required");
  if (fixed_nodes.empty() && !free_free)
    throw GeometryError(kModule, "no clamped nodes; set free_free to analyze an unconstrained model");
}

void MaterialSpec::validate() const {
  if (!(density > 0.0)) throw DomainError(kModule, "density must be positive");
  if (!(youngs_modulus > 0.0)) throw DomainError(kModule, "Young's modulus must be positive");
  if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5))
    throw DomainError(kModule, "Poisson ratio must lie in [0, 0.5)");
  if (!(mass_damping >= 0.0) || !(stiffness_damping >= 0.0))
    throw DomainError(kModule, "damping coefficients must be non-negative");
}

int MeshModel::free_node_count() const {
  return static_cast<int>(std::count_if(node_dofs.begin(), node_dofs.end(),
                                        [](const auto& d) { return d[0] >= 0; }));
}

int MeshModel::nearest_free_node(const Vec3& point) const {
  int best = -1;
  double best_distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (node_dofs[i][0] < 0) continue;
    const double d = (nodes[i] - point).squaredNorm();
    if (d < best_distance) {
      best_distance = d;
      best = static_cast<int>(i);
    }
  }
  if (best < 0) throw GeometryError(kModule, "model has no free nodes");
  return best;
}

MeshModel build_mesh(const GeometryConfig& config) {
  config.validate();

  NodeMerger merger(config.merge_tolerance);
  MeshModel mesh;
  mesh.free_free = config.free_free;
  for (const auto& panel : config.panels) {
    const auto [nx, ny, nz] = panel.divisions;
    std::vector<int> ids(static_cast<std::size_t>(nx + 1) * (ny + 1) * (nz + 1));
    auto at = [&](int i, int j, int k) -> int& {
      return ids[(static_cast<std::size_t>(k) * (ny + 1) + j) * (nx + 1) + i];
    };
    for (int k = 0; k <= nz; ++k)
      for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i) {
          const Vec3 p = panel.origin + Vec3(panel.extents.x() * i / nx, panel.extents.y() * j / ny,
                                             panel.extents.z() * k / nz);
          at(i, j, k) = merger.insert(p);
        }
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
          mesh.elements.push_back({at(i, j, k), at(i + 1, j, k), at(i + 1, j + 1, k), at(i, j + 1, k),
                                   at(i, j, k + 1), at(i + 1, j, k + 1), at(i + 1, j + 1, k + 1),
                                   at(i, j + 1, k + 1)});
  }
  mesh.nodes = merger.release();

  for (const auto& element : mesh.elements) {
    auto sorted = element;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw GeometryError(kModule, "element with repeated nodes (merge tolerance too large?)");
  }

  std::vector<int> parent(mesh.nodes.size());
  std::iota(parent.begin(), parent.end(), 0);
  for (const auto& element : mesh.elements)
    for (int a = 1; a < 8; ++a) {
      const int r0 = find_root(parent, element[0]);
      const int ra = find_root(parent, element[a]);
      if (r0 != ra) parent[ra] = r0;
    }
  const int root = find_root(parent, 0);
  for (std::size_t i = 0; i < mesh.nodes.size(); ++i)
    if (find_root(parent, static_cast<int>(i)) != root)
      throw GeometryError(kModule, "panels do not form a connected mesh");

  mesh.element_segment.reserve(mesh.elements.size());
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    Vec3 centroid = Vec3::Zero();
    for (int node : mesh.elements[e]) centroid += mesh.nodes[node];
    centroid /= 8.0;
    int segment = -1;
    for (int s = 0; s < kSegmentCount; ++s) {
      if (!config.segment_regions[s].contains(centroid, 0.0)) continue;
      if (segment >= 0)
        throw GeometryError(kModule, "element " + std::to_string(e) + " lies in more than one segment");
      segment = s;
    }
    if (segment < 0) throw GeometryError(kModule, "element " + std::to_string(e) + " lies in no segment");
    mesh.element_segment.push_back(segment);
  }

  mesh.node_dofs.assign(mesh.nodes.size(), {-1, -1, -1});
  int next = 0;
  for (std::size_t i = 0; i < mesh.nodes.size(); ++i) {
    const bool fixed = std::any_of(config.fixed_nodes.begin(), config.fixed_nodes.end(),
                                   [&](const Region& r) { return r.contains(mesh.nodes[i], config.merge_tolerance); });
    if (fixed) continue;
    mesh.node_dofs[i] = {next, next + 1, next + 2};
    next += 3;
  }
  if (next == 0) throw GeometryError(kModule, "every node is clamped");
  mesh.dof_count = next;
  return mesh;
}

// ---------------------------------------------------------------------------
// Element

ElementMatrices hex8_matrices(const std::array<Vec3, 8>& coords, double youngs_modulus,
                              double poisson_ratio, double density) {
  static constexpr double kSign[8][3] = {{-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
                                         {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1}};
  const double g = 1.0 / std::sqrt(3.0);
  const auto d = isotropic_elasticity(youngs_modulus, poisson_ratio);

  ElementMatrices out;
  out.stiffness.setZero();
  out.mass.setZero();
  for (int gz = 0; gz < 2; ++gz)
    for (int gy = 0; gy < 2; ++gy)
      for (int gx = 0; gx < 2; ++gx) {
        const double xi = gx ? g : -g, eta = gy ? g : -g, zeta = gz ? g : -g;
        Eigen::Matrix<double, 8, 1> shape;
        Eigen::Matrix<double, 3, 8> dnat;
        for (int a = 0; a < 8; ++a) {
          const double sx = kSign[a][0], sy = kSign[a][1], sz = kSign[a][2];
          shape[a] = 0.125 * (1 + sx * xi) * (1 + sy * eta) * (1 + sz * zeta);
          dnat(0, a) = 0.125 * sx * (1 + sy * eta) * (1 + sz * zeta);
          dnat(1, a) = 0.125 * sy * (1 + sx * xi) * (1 + sz * zeta);
          dnat(2, a) = 0.125 * sz * (1 + sx * xi) * (1 + sy * eta);
        }
        Eigen::Matrix3d jac = Eigen::Matrix3d::Zero();
        for (int a = 0; a < 8; ++a) jac += dnat.col(a) * coords[a].transpose();
        const double det = jac.determinant();
        if (!(det > 0.0)) throw GeometryError(kModule, "non-positive element Jacobian");
        const Eigen::Matrix<double, 3, 8> dx = jac.inverse() * dnat;

        Eigen::Matrix<double, 6, 24> b = Eigen::Matrix<double, 6, 24>::Zero();
        for (int a = 0; a < 8; ++a) {
          const int c = 3 * a;
          b(0, c) = dx(0, a);
          b(1, c + 1) = dx(1, a);
          b(2, c + 2) = dx(2, a);
          b(3, c) = dx(1, a);
          b(3, c + 1) = dx(0, a);
          b(4, c + 1) = dx(2, a);
          b(4, c + 2) = dx(1, a);
          b(5, c) = dx(2, a);
          b(5, c + 2) = dx(0, a);
        }
        out.stiffness.noalias() += b.transpose() * d * b * det;

        const Eigen::Matrix<double, 8, 8> nn = shape * shape.transpose() * (density * det);
        for (int a = 0; a < 8; ++a)
          for (int c = 0; c < 8; ++c)
            for (int k = 0; k < 3; ++k) out.mass(3 * a + k, 3 * c + k) += nn(a, c);
      }
  // Symmetric by construction up to rounding; make it exact.
  out.stiffness = 0.5 * (out.stiffness + out.stiffness.transpose()).eval();
  return out;
}

// ---------------------------------------------------------------------------
// Segmented system

UncertainInput::UncertainInput(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() != kParameterCount)
    throw DomainError(kModule, "uncertain input must have " + std::to_string(kParameterCount) + " entries");
}

UncertainInput UncertainInput::uniform(double density_deviation, double modulus_deviation) {
  Eigen::VectorXd v(kParameterCount);
  for (int s = 0; s < kSegmentCount; ++s) {
    v[2 * s] = density_deviation;
    v[2 * s + 1] = modulus_deviation;
  }
  return UncertainInput(std::move(v));
}

SegmentedSystem::SegmentedSystem(SparseMatrix pattern, std::vector<Eigen::VectorXd> mass_values,
                                 std::vector<Eigen::VectorXd> stiffness_values, MaterialSpec material)
    : pattern_(std::move(pattern)),
      mass_values_(std::move(mass_values)),
      stiffness_values_(std::move(stiffness_values)),
      material_(material) {
  pattern_.makeCompressed();
  if (mass_values_.size() != stiffness_values_.size())
    throw Error(kModule, "mass and stiffness block counts differ");
  for (std::size_t s = 0; s < mass_values_.size(); ++s)
    if (mass_values_[s].size() != pattern_.nonZeros() || stiffness_values_[s].size() != pattern_.nonZeros())
      throw Error(kModule, "segment block does not match the shared pattern");
  const auto nominal = realize(UncertainInput());
  nominal_mass_ = nominal.mass;
  nominal_stiffness_ = nominal.stiffness;
}

SparseMatrix SegmentedSystem::with_values(const Eigen::VectorXd& values) const {
  SparseMatrix out = pattern_;
  Eigen::Map<Eigen::VectorXd>(out.valuePtr(), out.nonZeros()) = values;
  return out;
}

SparseMatrix SegmentedSystem::mass_block(int segment) const { return with_values(mass_values_.at(segment)); }

SparseMatrix SegmentedSystem::stiffness_block(int segment) const {
  return with_values(stiffness_values_.at(segment));
}

SystemMatrices SegmentedSystem::realize(const UncertainInput& theta) const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(pattern_.nonZeros());
  Eigen::VectorXd k = Eigen::VectorXd::Zero(pattern_.nonZeros());
  for (int s = 0; s < segment_count(); ++s) {
    m += (1.0 + theta.density_deviation(s)) * mass_values_[s];
    k += (1.0 + theta.modulus_deviation(s)) * stiffness_values_[s];
  }
  SystemMatrices out;
  out.mass = with_values(m);
  out.stiffness = with_values(k);
  out.damping = with_values(material_.mass_damping * m + material_.stiffness_damping * k);
  out.theta = theta.values();
  return out;
}

SegmentedSystem assemble_segments(const MeshModel& mesh, const MaterialSpec& material) {
  material.validate();
  const int n = mesh.dof_count;
  std::vector<std::vector<Triplet>> mass_triplets(kSegmentCount), stiffness_triplets(kSegmentCount);
  std::vector<Triplet> pattern_triplets;

  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    std::array<Vec3, 8> coords;
    std::array<int, 24> dofs;
    for (int a = 0; a < 8; ++a) {
      const int node = mesh.elements[e][a];
      coords[a] = mesh.nodes[node];
      for (int k = 0; k < 3; ++k) dofs[3 * a + k] = mesh.node_dofs[node][k];
    }
    const auto em = hex8_matrices(coords, material.youngs_modulus, material.poisson_ratio, material.density);
    const int s = mesh.element_segment[e];
    for (int j = 0; j < 24; ++j) {
      if (dofs[j] < 0) continue;
      for (int i = 0; i < 24; ++i) {
        if (dofs[i] < 0) continue;
        stiffness_triplets[s].emplace_back(dofs[i], dofs[j], em.stiffness(i, j));
        mass_triplets[s].emplace_back(dofs[i], dofs[j], em.mass(i, j));
        pattern_triplets.emplace_back(dofs[i], dofs[j], 1.0);
      }
    }
  }

  SparseMatrix pattern(n, n);
  pattern.setFromTriplets(pattern_triplets.begin(), pattern_triplets.end());
  pattern.makeCompressed();

  std::vector<Eigen::VectorXd> mass_values, stiffness_values;
  for (int s = 0; s < kSegmentCount; ++s) {
    SparseMatrix block(n, n);
    block.setFromTriplets(mass_triplets[s].begin(), mass_triplets[s].end());
    mass_values.push_back(scatter_to_pattern(pattern, block));
    block.setFromTriplets(stiffness_triplets[s].begin(), stiffness_triplets[s].end());
    stiffness_values.push_back(scatter_to_pattern(pattern, block));
  }
  return SegmentedSystem(std::move(pattern), std::move(mass_values), std::move(stiffness_values), material);
}

SystemMatrices realize_system(const SegmentedSystem& system, const UncertainInput& theta) {
  for (int s = 0; s < system.segment_count(); ++s) {
    if (!(1.0 + theta.density_deviation(s) > 0.0))
      throw DomainError(kModule, "non-positive realized density in segment " + std::to_string(s));
    if (!(1.0 + theta.modulus_deviation(s) > 0.0))
      throw DomainError(kModule, "non-positive realized modulus in segment " + std::to_string(s));
  }
  return system.realize(theta);
}

SystemMatrices make_system(const Eigen::MatrixXd& mass, const Eigen::MatrixXd& damping,
                           const Eigen::MatrixXd& stiffness) {
  const auto n = stiffness.rows();
  check_square(stiffness, n, "stiffness");
  check_square(mass, n, "mass");
  check_square(damping, n, "damping");
  const Eigen::MatrixXd mask = (mass.cwiseAbs() + damping.cwiseAbs() + stiffness.cwiseAbs()).eval();
  SystemMatrices out;
  out.mass = sparse_from_dense(mass, mask);
  out.damping = sparse_from_dense(damping, mask);
  out.stiffness = sparse_from_dense(stiffness, mask);
  return out;
}

SystemMatrices make_system(const Eigen::MatrixXd& mass, const Eigen::MatrixXd& stiffness,
                           double mass_damping, double stiffness_damping) {
  return make_system(mass, (mass_damping * mass + stiffness_damping * stiffness).eval(), stiffness);
}

// ---------------------------------------------------------------------------
// Harmonic response

void FrfRequest::validate(int dof_count) const {
  if (forces.empty()) throw DomainError(kModule, "frequency response request has no forces");
  if (frequencies_hz.empty()) throw DomainError(kModule, "frequency grid is empty");
  if (outputs.empty()) throw DomainError(kModule, "no output DOFs requested");
  for (const auto& [dof, amplitude] : forces)
    if (dof < 0 || dof >= dof_count)
      throw DomainError(kModule, "force DOF " + std::to_string(dof) + " out of range");
  for (int dof : outputs)
    if (dof < 0 || dof >= dof_count)
      throw DomainError(kModule, "output DOF " + std::to_string(dof) + " out of range");
  for (std::size_t i = 0; i < frequencies_hz.size(); ++i) {
    if (!std::isfinite(frequencies_hz[i]) || frequencies_hz[i] < 0.0)
      throw DomainError(kModule, "frequencies must be finite and non-negative");
    if (i > 0 && !(frequencies_hz[i] > frequencies_hz[i - 1]))
      throw DomainError(kModule, "frequencies must be strictly increasing");
  }
}

Eigen::VectorXd FrfRequest::force_vector(int dof_count) const {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(dof_count);
  for (const auto& [dof, amplitude] : forces) f[dof] += amplitude;
  if (f.norm() == 0.0) throw DomainError(kModule, "force vector is identically zero");
  return f;
}

std::vector<double> linear_grid(double start, double stop, int count) {
  if (count < 1) throw DomainError(kModule, "grid needs at least one point");
  std::vector<double> grid(count);
  if (count == 1) {
    grid[0] = start;
    return grid;
  }
  for (int i = 0; i < count; ++i) grid[i] = start + (stop - start) * i / (count - 1);
  grid.back() = stop;
  return grid;
}

Eigen::VectorXcd solve_full_frf_complex(const SystemMatrices& system, const FrfRequest& request) {
  const int n = static_cast<int>(system.stiffness.rows());
  request.validate(n);
  const Eigen::VectorXd load = request.force_vector(n);
  HarmonicSolver solver(system);
  const int outputs = request.output_count();
  Eigen::VectorXcd result(outputs * request.frequency_count());
  for (int r = 0; r < request.frequency_count(); ++r) {
    const double omega = 2.0 * std::numbers::pi * request.frequencies_hz[r];
    const Eigen::VectorXcd z = solver.solve(omega, load, r);
    for (int k = 0; k < outputs; ++k) result[k + outputs * r] = z[request.outputs[k]];
  }
  return result;
}

Eigen::VectorXd solve_full_frf(const SystemMatrices& system, const FrfRequest& request) {
  return solve_full_frf_complex(system, request).cwiseAbs();
}

Eigen::VectorXd solve_static(const SparseMatrix& stiffness, const Eigen::VectorXd& load) {
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(stiffness);
  if (ldlt.info() != Eigen::Success) throw SolverError(kModule, "stiffness factorization failed");
  Eigen::VectorXd u = ldlt.solve(load);
  const Eigen::VectorXd correction = load - stiffness * u;
  u += ldlt.solve(correction);
  return u;
}

// ---------------------------------------------------------------------------
// Modal analysis

ModalResult modal_analysis(const Eigen::MatrixXd& stiffness, const Eigen::MatrixXd& mass, int count) {
  const auto n = stiffness.rows();
  check_square(stiffness, n, "stiffness");
  check_square(mass, n, "mass");
  if (count < 1) throw DomainError(kModule, "mode count must be at least 1");
  if (count > n) throw DomainError(kModule, "mode count exceeds the number of DOFs");
  const Eigen::MatrixXd ks = 0.5 * (stiffness + stiffness.transpose());
  const Eigen::MatrixXd ms = 0.5 * (mass + mass.transpose());
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> eig(ks, ms);
  if (eig.info() != Eigen::Success) throw SolverError(kModule, "dense generalized eigensolver failed");
  Eigen::VectorXd lambda = eig.eigenvalues().head(count);
  Eigen::MatrixXd modes = eig.eigenvectors().leftCols(count);
  double worst = 0.0;
  for (int i = 0; i < count; ++i) {
    const Eigen::VectorXd kphi = ks * modes.col(i);
    const double scale = kphi.norm();
    if (scale > 0.0) worst = std::max(worst, (kphi - lambda[i] * (ms * modes.col(i))).norm() / scale);
  }
  return finish_modal(std::move(lambda), std::move(modes), worst);
}

ModalResult modal_analysis(const SparseMatrix& stiffness, const SparseMatrix& mass, int count) {
  const int n = static_cast<int>(stiffness.rows());
  if (count < 1) throw DomainError(kModule, "mode count must be at least 1");
  if (count > n) throw DomainError(kModule, "mode count exceeds the number of DOFs");
  if (n <= 400) return modal_analysis(Eigen::MatrixXd(stiffness), Eigen::MatrixXd(mass), count);

  // Shift-free subspace iteration with Rayleigh-Ritz projection.
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(stiffness);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
    throw SolverError(kModule, "stiffness is not positive definite (unconstrained model?)");

  const int q = std::min(n, std::max(2 * count, count + 8));
  std::mt19937_64 rng(0x5eed);
  Eigen::MatrixXd x(n, q);
  for (int j = 0; j < q; ++j)
    for (int i = 0; i < n; ++i) x(i, j) = static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;

  // Iterate until the residual reaches 1e-10 or stops improving once the
  // eigenvalues have settled (the attainable floor is about eps * cond(K)).
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(count);
  Eigen::MatrixXd modes;
  double best = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int iter = 0; iter < 2000; ++iter) {
    const Eigen::MatrixXd y = mass * x;
    const Eigen::MatrixXd xbar = ldlt.solve(y);
    Eigen::MatrixXd kp = xbar.transpose() * y;
    Eigen::MatrixXd mp = xbar.transpose() * (mass * xbar);
    kp = 0.5 * (kp + kp.transpose()).eval();
    mp = 0.5 * (mp + mp.transpose()).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> eig(kp, mp);
    if (eig.info() != Eigen::Success) throw SolverError(kModule, "projected eigenproblem failed");
    x = xbar * eig.eigenvectors();
    const Eigen::VectorXd previous = lambda;
    lambda = eig.eigenvalues().head(count);
    modes = x.leftCols(count);

    double worst = 0.0;
    for (int i = 0; i < count; ++i) {
      const Eigen::VectorXd kphi = stiffness * modes.col(i);
      worst = std::max(worst, (kphi - lambda[i] * (mass * modes.col(i))).norm() / kphi.norm());
    }
    if (worst < 1e-10) return finish_modal(lambda, modes, worst);
    const bool settled = ((lambda - previous).cwiseAbs().array() <= 1e-14 * lambda.cwiseAbs().array()).all();
    if (worst < 0.5 * best) {
      best = worst;
      stalled = 0;
    } else if (settled && ++stalled >= 10) {
      return finish_modal(lambda, modes, worst);
    }
  }
  throw SolverError(kModule, "subspace iteration did not converge");
}

std::vector<double> natural_frequencies(const SystemMatrices& system, int count) {
  const auto modal = modal_analysis(system.stiffness, system.mass, count);
  return {modal.frequencies_hz.data(), modal.frequencies_hz.data() + modal.frequencies_hz.size()};
}

}  // namespace vibefuse::fem
