#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "invadapt/mesh.hpp"

namespace invadapt {

// Nodal coefficients of (u, v, w) at one time level on one mesh.
struct StateFields {
  std::uint64_t mesh_id = 0;
  std::vector<double> u, v, w;

  static StateFields zeros(const SimplicialMesh& mesh);
  static StateFields constant(const SimplicialMesh& mesh, double u, double v, double w);

  std::size_t size() const { return u.size(); }
  const std::vector<double>& field(int i) const { return i == 0 ? u : (i == 1 ? v : w); }
  std::vector<double>& field(int i) { return i == 0 ? u : (i == 1 ? v : w); }

  bool finite() const;
  // Throws InputError unless the state lives on `mesh` and is finite.
  void check(const SimplicialMesh& mesh) const;

  // Field-major [u; v; w].
  std::vector<double> pack() const;
  static StateFields unpack(std::uint64_t mesh_id, std::span<const double> x);
};

StateFields transfer(const TransferMap& map, const StateFields& state);

}  // namespace invadapt
