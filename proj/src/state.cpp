#include "invadapt/state.hpp"

#include <algorithm>
#include <cmath>

namespace invadapt {

StateFields StateFields::zeros(const SimplicialMesh& mesh) { return constant(mesh, 0.0, 0.0, 0.0); }

StateFields StateFields::constant(const SimplicialMesh& mesh, double u, double v, double w) {
  const std::size_t n = mesh.num_vertices();
  return {mesh.id(), std::vector<double>(n, u), std::vector<double>(n, v),
          std::vector<double>(n, w)};
}

bool StateFields::finite() const {
  auto ok = [](const std::vector<double>& f) {
    return std::all_of(f.begin(), f.end(), [](double x) { return std::isfinite(x); });
  };
  return ok(u) && ok(v) && ok(w);
}

void StateFields::check(const SimplicialMesh& mesh) const {
  if (mesh_id != mesh.id()) throw InputError("state belongs to a different mesh");
  const std::size_t n = mesh.num_vertices();
  if (u.size() != n || v.size() != n || w.size() != n)
    throw InputError("state length does not match the vertex count");
  if (!finite()) throw InputError("state contains non-finite values");
}

std::vector<double> StateFields::pack() const {
  std::vector<double> x;
  x.reserve(3 * u.size());
  x.insert(x.end(), u.begin(), u.end());
  x.insert(x.end(), v.begin(), v.end());
  x.insert(x.end(), w.begin(), w.end());
  return x;
}

StateFields StateFields::unpack(std::uint64_t mesh_id, std::span<const double> x) {
  if (x.size() % 3 != 0) throw InputError("StateFields::unpack: length not divisible by 3");
  const std::size_t n = x.size() / 3;
  StateFields s;
  s.mesh_id = mesh_id;
  s.u.assign(x.begin(), x.begin() + n);
  s.v.assign(x.begin() + n, x.begin() + 2 * n);
  s.w.assign(x.begin() + 2 * n, x.end());
  return s;
}

StateFields transfer(const TransferMap& map, const StateFields& state) {
  if (state.mesh_id != map.source_id()) throw InputError("transfer: state is not on the source mesh");
  return {map.target_id(), map.apply(state.u), map.apply(state.v), map.apply(state.w)};
}

}  // namespace invadapt
