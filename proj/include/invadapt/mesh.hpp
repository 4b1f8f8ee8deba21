#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "invadapt/common.hpp"

namespace invadapt {

// Default lower bound on element diameters produced by refinement.
inline constexpr double kDefaultMinElementSize = 0.0108253;

// A tetrahedron in bisection order. The refinement edge is (v[0], v[tag]).
struct Tet {
  std::array<Index, 4> v{};
  int tag = 3;
  int level = 0;
  Index parent = kNoIndex;  // index into SimplicialMesh::history()

  Index refinement_edge_first() const { return v[0]; }
  Index refinement_edge_second() const { return v[tag]; }
  friend bool operator==(const Tet&, const Tet&) = default;
};

// A triangular face. `left` < `right` for interior faces; `right` is kNoIndex on ∂Ω.
struct Face {
  std::array<Index, 3> v{};
  Index left = kNoIndex;
  Index right = kNoIndex;

  bool on_boundary() const { return right == kNoIndex; }
};

// Conforming tetrahedral mesh of the unit cube with its refinement genealogy.
//
// Meshes are immutable; refine() and coarsen() build new meshes. Every mesh carries a
// process-unique id so that nodal fields can be checked against the mesh they live on.
// The history holds every ancestor of the current leaf tets; Tet::parent indexes into it.
class SimplicialMesh {
 public:
  SimplicialMesh(std::vector<Vec3> vertices, std::vector<Tet> tets, std::vector<Tet> history = {});

  std::uint64_t id() const { return id_; }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Tet>& tets() const { return tets_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<Tet>& history() const { return history_; }

  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_tets() const { return tets_.size(); }
  std::size_t num_faces() const { return faces_.size(); }

  std::array<Vec3, 4> tet_points(Index t) const;
  double tet_volume(Index t) const;
  double tet_diameter(Index t) const;
  double min_diameter() const;
  double max_diameter() const;

  // Same vertices, tets and genealogy; ids are ignored.
  bool same_content(const SimplicialMesh& other) const;

 private:
  void build_faces();

  std::uint64_t id_;
  std::vector<Vec3> vertices_;
  std::vector<Tet> tets_;
  std::vector<Tet> history_;
  std::vector<Face> faces_;
};

using MeshPtr = std::shared_ptr<const SimplicialMesh>;

// Kuhn split of an n×n×n grid of sub-cubes, mirrored by index parity: (n+1)³ vertices,
// 6n³ tets. Three uniform bisections of the n-mesh give the 2n-mesh.
SimplicialMesh build_structured_cube(int n);

struct RefineOptions {
  double h_min = kDefaultMinElementSize;
};

// Bisects every marked tet at its refinement edge and closes the mesh to conformity.
// Marked tets whose children would have diameter below options.h_min are skipped.
SimplicialMesh refine(const SimplicialMesh& mesh, std::span<const Index> marked,
                      const RefineOptions& options = {});

struct CoarsenResult {
  SimplicialMesh mesh;
  std::size_t skipped = 0;  // marked tets that could not be merged
};

// Merges marked sibling pairs back into their parent. A bisection vertex is removed only
// when every tet around it is a marked child of that bisection, so the result stays
// conforming. Level-0 tets are never removed.
CoarsenResult coarsen(const SimplicialMesh& mesh, std::span<const Index> marked);

struct TetGeometry {
  double volume = 0.0;
  double diameter = 0.0;
  std::array<Vec3, 4> grad_lambda{};  // gradients of the barycentric coordinates
};

struct FaceGeometry {
  double area = 0.0;
  double diameter = 0.0;
  Vec3 normal;  // unit; left → right on interior faces, outward on ∂Ω
};

struct GeometryTables {
  std::vector<TetGeometry> tets;
  std::vector<FaceGeometry> faces;
};

// Throws ElementError for a zero-volume tet.
GeometryTables geometry_tables(const SimplicialMesh& mesh);

struct MeshAudit {
  bool conforming = true;          // every face shared by two tets or lying on ∂Ω
  bool positive_volumes = true;
  double total_volume = 0.0;
  double boundary_area = 0.0;
  double max_shape_ratio = 0.0;    // diameter / inscribed-sphere diameter
  std::size_t bad_faces = 0;

  bool ok(double tol = 1e-12) const;
};

MeshAudit audit(const SimplicialMesh& mesh);

// Diameter over inscribed-sphere diameter of one tet.
double shape_ratio(const SimplicialMesh& mesh, Index t);

// Bucket grid for locating points in a mesh.
class PointLocator {
 public:
  explicit PointLocator(const SimplicialMesh& mesh);

  struct Hit {
    Index tet = kNoIndex;
    std::array<double, 4> bary{};
  };
  // Returns the tet whose smallest barycentric coordinate is largest; tet is kNoIndex if
  // the point lies outside the mesh by more than tol.
  Hit locate(const Vec3& p, double tol = 1e-10) const;

 private:
  const SimplicialMesh* mesh_;
  Vec3 lo_, hi_;
  int cells_ = 1;
  std::vector<std::vector<Index>> buckets_;
};

std::array<double, 4> barycentric(const std::array<Vec3, 4>& pts, const Vec3& p);

// Evaluates a nodal P1 field at an arbitrary point.
double evaluate_p1(const SimplicialMesh& mesh, const PointLocator& locator,
                   std::span<const double> field, const Vec3& p);

// Nodal interpolation stencils from a source mesh onto the vertices of a target mesh.
class TransferMap {
 public:
  struct Stencil {
    std::array<Index, 4> source{kNoIndex, kNoIndex, kNoIndex, kNoIndex};
    std::array<double, 4> weight{};
    int size = 0;
  };

  TransferMap(std::uint64_t source_id, std::uint64_t target_id, std::size_t source_size,
              std::vector<Stencil> stencils);

  std::uint64_t source_id() const { return source_id_; }
  std::uint64_t target_id() const { return target_id_; }
  const std::vector<Stencil>& stencils() const { return stencils_; }
  bool is_identity() const;

  std::vector<double> apply(std::span<const double> source) const;

 private:
  std::uint64_t source_id_, target_id_;
  std::size_t source_size_;
  std::vector<Stencil> stencils_;
};

class NotNestedError : public InputError {
 public:
  using InputError::InputError;
};

// Transfer between nested meshes: target a refinement of source (barycentric stencils),
// or target a coarsening of source (injection). Throws NotNestedError otherwise.
TransferMap build_transfer(const SimplicialMesh& source, const SimplicialMesh& target);

}  // namespace invadapt
