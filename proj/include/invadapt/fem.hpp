#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "invadapt/mesh.hpp"
#include "invadapt/model.hpp"
#include "invadapt/quadrature.hpp"
#include "invadapt/sparse.hpp"
#include "invadapt/state.hpp"

namespace invadapt {

// Runs f(begin, end) over [0, n) in chunks on up to `threads` threads.
void parallel_for(Index n, int threads, const std::function<void(Index, Index)>& f);

// P1 Lagrange space on a mesh: geometry, node graph and element scatter tables.
class P1Space {
 public:
  explicit P1Space(MeshPtr mesh, int threads = 1);

  const SimplicialMesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }
  const GeometryTables& geometry() const { return geometry_; }
  Index num_nodes() const { return static_cast<Index>(mesh_->num_vertices()); }
  int threads() const { return threads_; }

  // Node graph with zero values.
  SparseOperator scalar_pattern() const;
  // Field-major 3×3 block pattern of the node graph.
  SparseOperator block_pattern() const;

  // Position of local entry (i, j) of tet t inside the scalar pattern.
  Index scalar_position(Index t, int i, int j) const { return scatter_[16 * t + 4 * i + j]; }
  // Position of ((a, local i), (b, local j)) of tet t inside the block pattern.
  Index block_position(Index t, int a, int i, int b, int j) const;

  // Physical coordinates of a barycentric point of tet t.
  Vec3 point(Index t, const std::array<double, 4>& bary) const;

 private:
  MeshPtr mesh_;
  int threads_;
  GeometryTables geometry_;
  std::vector<Index> row_ptr_, cols_;
  std::vector<Index> scatter_;
  std::vector<Index> block_row_ptr_;
};

using SpacePtr = std::shared_ptr<const P1Space>;

// Coefficient evaluated at a quadrature point: (tet, physical point).
using PointCoefficient = std::function<double(Index, const Vec3&)>;

SparseOperator assemble_mass(const P1Space& space);
// Σ_K c ∫ ∇φ_j·∇φ_i with constant c.
SparseOperator assemble_diffusion(const P1Space& space, double c = 1.0);
// ∫ c(x) ∇φ_j·∇φ_i with a degree-2 rule; throws ElementError on a non-finite value.
SparseOperator assemble_diffusion(const P1Space& space, const PointCoefficient& c);
// Entry (i, j) = ∫ χ(v_h) φ_j ∇v_h·∇φ_i.
SparseOperator assemble_haptotaxis(const P1Space& space, const StateFields& state,
                                   const ModelParams& params);

enum class JacobianMode {
  analytic,        // coefficient hooks must declare their partials
  coefficient_fd,  // missing hook partials are replaced by central differences
};

// Inputs of one backward Euler step; `source` is evaluated at `time`.
struct StepProblem {
  const ModelParams* params = nullptr;
  double tau = 0.0;
  SourceFn source;
  double time = 0.0;
  JacobianMode mode = JacobianMode::analytic;
};

// Nodal residuals of the fully discrete system.
struct Residuals {
  std::vector<double> u, v, w;
  std::vector<double> pack() const;
};

Residuals assemble_reaction_residuals(const P1Space& space, const StateFields& state,
                                      const StateFields& prev, const StepProblem& problem);

SparseOperator assemble_jacobian(const P1Space& space, const StateFields& state,
                                 const StateFields& prev, const StepProblem& problem);

struct AssembledSystem {
  std::vector<double> residual;  // packed [F_u; F_v; F_w]
  SparseOperator jacobian;
};

// Residual and Jacobian in one element pass.
AssembledSystem assemble_system(const P1Space& space, const StateFields& state,
                                const StateFields& prev, const StepProblem& problem,
                                bool with_jacobian = true);

// L² projection of a pointwise function, or of an element-wise function f(tet, x).
std::vector<double> l2_project(const P1Space& space, const std::function<double(const Vec3&)>& f);
std::vector<double> l2_project(const P1Space& space, const PointCoefficient& f);

std::vector<double> interpolate(const SimplicialMesh& mesh,
                                const std::function<double(const Vec3&)>& f);

struct Norms {
  double l2 = 0.0;
  double h1_semi = 0.0;
  double h1 = 0.0;
};

// Exact norms of a P1 field.
Norms norms(const P1Space& space, std::span<const double> field);

// Norms of f_h - f for a closed-form f with gradient, by the degree-5 rule.
Norms error_norms(const P1Space& space, std::span<const double> field,
                  const std::function<double(const Vec3&)>& f,
                  const std::function<Vec3(const Vec3&)>& grad_f);

// Gradient of a P1 field on tet t.
Vec3 element_gradient(const P1Space& space, Index t, std::span<const double> field);

}  // namespace invadapt
