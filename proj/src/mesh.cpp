#include "invadapt/mesh.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace invadapt {

namespace {

std::atomic<std::uint64_t> next_mesh_id{1};

std::uint64_t edge_key(Index a, Index b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

double signed_volume(const std::array<Vec3, 4>& p) {
  return dot(p[1] - p[0], cross(p[2] - p[0], p[3] - p[0])) / 6.0;
}

double points_diameter(std::span<const Vec3> p) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j) d = std::max(d, distance(p[i], p[j]));
  return d;
}

// Face opposite local vertex i of a tet, as a sorted triple.
std::array<Index, 3> sorted_face(const Tet& t, int i) {
  std::array<Index, 3> f{};
  int k = 0;
  for (int j = 0; j < 4; ++j)
    if (j != i) f[k++] = t.v[j];
  std::sort(f.begin(), f.end());
  return f;
}

struct FaceEntry {
  std::array<Index, 3> key;
  Index tet;
  bool operator<(const FaceEntry& o) const {
    return key != o.key ? key < o.key : tet < o.tet;
  }
};

std::vector<FaceEntry> collect_faces(const std::vector<Tet>& tets) {
  std::vector<FaceEntry> entries;
  entries.reserve(4 * tets.size());
  for (Index t = 0; t < static_cast<Index>(tets.size()); ++t)
    for (int i = 0; i < 4; ++i) entries.push_back({sorted_face(tets[t], i), t});
  std::sort(entries.begin(), entries.end());
  return entries;
}

// Maubach bisection: refinement edge (x0, x_k); children keep the bisection order.
std::pair<Tet, Tet> bisect_children(const Tet& t, Index z) {
  const int k = t.tag;
  Tet a, b;
  for (int i = 0; i < k; ++i) a.v[i] = t.v[i];
  a.v[k] = z;
  for (int i = k + 1; i < 4; ++i) a.v[i] = t.v[i];
  for (int i = 0; i < k; ++i) b.v[i] = t.v[i + 1];
  b.v[k] = z;
  for (int i = k + 1; i < 4; ++i) b.v[i] = t.v[i];
  a.tag = b.tag = (k > 1) ? k - 1 : 3;
  a.level = b.level = t.level + 1;
  return {a, b};
}

bool on_unit_cube_face(const Vec3& a, const Vec3& b, const Vec3& c) {
  constexpr double eps = 1e-12;
  for (int d = 0; d < 3; ++d) {
    for (double side : {0.0, 1.0}) {
      if (std::abs(a[d] - side) < eps && std::abs(b[d] - side) < eps &&
          std::abs(c[d] - side) < eps)
        return true;
    }
  }
  return false;
}

}  // namespace

SimplicialMesh::SimplicialMesh(std::vector<Vec3> vertices, std::vector<Tet> tets,
                               std::vector<Tet> history)
    : id_(next_mesh_id++),
      vertices_(std::move(vertices)),
      tets_(std::move(tets)),
      history_(std::move(history)) {
  const auto nv = static_cast<Index>(vertices_.size());
  for (const Tet& t : tets_)
    for (Index v : t.v)
      if (v < 0 || v >= nv) throw InputError("tet references a vertex out of range");
  build_faces();
}

void SimplicialMesh::build_faces() {
  const auto entries = collect_faces(tets_);
  faces_.clear();
  faces_.reserve(entries.size() / 2 + 1);
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i + 1;
    while (j < entries.size() && entries[j].key == entries[i].key) ++j;
    Face f;
    f.v = entries[i].key;
    f.left = entries[i].tet;
    if (j - i >= 2) f.right = entries[i + 1].tet;
    faces_.push_back(f);
    i = j;
  }
}

std::array<Vec3, 4> SimplicialMesh::tet_points(Index t) const {
  const Tet& tet = tets_[t];
  return {vertices_[tet.v[0]], vertices_[tet.v[1]], vertices_[tet.v[2]], vertices_[tet.v[3]]};
}

double SimplicialMesh::tet_volume(Index t) const { return std::abs(signed_volume(tet_points(t))); }

double SimplicialMesh::tet_diameter(Index t) const {
  const auto p = tet_points(t);
  return points_diameter(p);
}

double SimplicialMesh::min_diameter() const {
  double h = std::numeric_limits<double>::infinity();
  for (Index t = 0; t < static_cast<Index>(tets_.size()); ++t) h = std::min(h, tet_diameter(t));
  return h;
}

double SimplicialMesh::max_diameter() const {
  double h = 0.0;
  for (Index t = 0; t < static_cast<Index>(tets_.size()); ++t) h = std::max(h, tet_diameter(t));
  return h;
}

bool SimplicialMesh::same_content(const SimplicialMesh& other) const {
  return vertices_ == other.vertices_ && tets_ == other.tets_ && history_ == other.history_;
}

SimplicialMesh build_structured_cube(int n) {
  if (n < 1) throw InputError("build_structured_cube: need at least one subdivision per axis");
  const Index m = n + 1;
  std::vector<Vec3> vertices;
  vertices.reserve(static_cast<std::size_t>(m) * m * m);
  for (Index k = 0; k < m; ++k)
    for (Index j = 0; j < m; ++j)
      for (Index i = 0; i < m; ++i)
        vertices.push_back({static_cast<double>(i) / n, static_cast<double>(j) / n,
                            static_cast<double>(k) / n});

  auto vid = [m](Index i, Index j, Index k) { return i + m * (j + m * k); };
  static constexpr std::array<std::array<int, 3>, 6> perms{
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

  // Each sub-cube is mirrored by the parity of its index, so three uniform bisections
  // of the n-mesh reproduce the 2n-mesh exactly.
  std::vector<Tet> tets;
  tets.reserve(6 * static_cast<std::size_t>(n) * n * n);
  for (Index k = 0; k < n; ++k)
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) {
        const std::array<Index, 3> flip{i % 2, j % 2, k % 2};
        for (const auto& p : perms) {
          std::array<Index, 3> c{i + flip[0], j + flip[1], k + flip[2]};
          Tet t;
          t.v[0] = vid(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            c[p[s]] += flip[p[s]] ? -1 : 1;
            t.v[s + 1] = vid(c[0], c[1], c[2]);
          }
          t.tag = 3;
          tets.push_back(t);
        }
      }
  return SimplicialMesh(std::move(vertices), std::move(tets));
}

SimplicialMesh refine(const SimplicialMesh& mesh, std::span<const Index> marked,
                      const RefineOptions& options) {
  if (marked.empty()) return SimplicialMesh(mesh.vertices(), mesh.tets(), mesh.history());

  std::vector<Vec3> vertices = mesh.vertices();
  std::vector<Tet> all = mesh.tets();              // working tree; originals first
  std::vector<Index> node_parent(all.size(), kNoIndex);
  std::vector<std::array<Index, 2>> children(all.size(), {kNoIndex, kNoIndex});
  std::unordered_map<std::uint64_t, Index> midpoint;

  auto bisect = [&](Index idx) {
    if (children[idx][0] != kNoIndex) return;
    const Tet t = all[idx];
    const Index a = t.refinement_edge_first();
    const Index b = t.refinement_edge_second();
    auto [it, inserted] = midpoint.try_emplace(edge_key(a, b), static_cast<Index>(vertices.size()));
    if (inserted) vertices.push_back(0.5 * (vertices[a] + vertices[b]));
    auto [c0, c1] = bisect_children(t, it->second);
    const auto first = static_cast<Index>(all.size());
    all.push_back(c0);
    all.push_back(c1);
    node_parent.push_back(idx);
    node_parent.push_back(idx);
    children.push_back({kNoIndex, kNoIndex});
    children.push_back({kNoIndex, kNoIndex});
    children[idx] = {first, first + 1};
  };

  const auto n0 = static_cast<Index>(mesh.num_tets());
  for (Index t : marked) {
    if (t < 0 || t >= n0) throw InputError("refine: marked tet index out of range");
    const Tet& tet = all[t];
    const Vec3 z = 0.5 * (vertices[tet.refinement_edge_first()] +
                          vertices[tet.refinement_edge_second()]);
    auto [c0, c1] = bisect_children(tet, kNoIndex);
    double h_child = std::numeric_limits<double>::infinity();
    for (const Tet& c : {c0, c1}) {
      std::array<Vec3, 4> p;
      for (int i = 0; i < 4; ++i) p[i] = c.v[i] == kNoIndex ? z : vertices[c.v[i]];
      h_child = std::min(h_child, points_diameter(p));
    }
    if (h_child < options.h_min * (1.0 - 1e-9)) continue;
    bisect(t);
  }

  // Conformity closure: any leaf with a bisected edge is bisected in turn.
  bool changed = !midpoint.empty();
  while (changed) {
    changed = false;
    for (Index idx = 0; idx < static_cast<Index>(all.size()); ++idx) {
      if (children[idx][0] != kNoIndex) continue;
      const Tet& t = all[idx];
      bool hanging = false;
      for (int i = 0; i < 4 && !hanging; ++i)
        for (int j = i + 1; j < 4 && !hanging; ++j)
          hanging = midpoint.contains(edge_key(t.v[i], t.v[j]));
      if (hanging) {
        bisect(idx);
        changed = true;
      }
    }
  }

  // New history: old ancestors, then every node bisected here in creation order.
  std::vector<Tet> history = mesh.history();
  std::vector<Index> history_index(all.size(), kNoIndex);
  for (Index idx = 0; idx < static_cast<Index>(all.size()); ++idx) {
    if (children[idx][0] == kNoIndex) continue;
    history_index[idx] = static_cast<Index>(history.size());
    Tet h = all[idx];
    if (node_parent[idx] != kNoIndex) h.parent = history_index[node_parent[idx]];
    history.push_back(h);
  }

  std::vector<Tet> leaves;
  leaves.reserve(all.size());
  std::vector<Index> stack;
  for (Index root = 0; root < n0; ++root) {
    stack.push_back(root);
    while (!stack.empty()) {
      const Index idx = stack.back();
      stack.pop_back();
      if (children[idx][0] != kNoIndex) {
        stack.push_back(children[idx][1]);
        stack.push_back(children[idx][0]);
        continue;
      }
      Tet leaf = all[idx];
      if (node_parent[idx] != kNoIndex) leaf.parent = history_index[node_parent[idx]];
      leaves.push_back(leaf);
    }
  }
  return SimplicialMesh(std::move(vertices), std::move(leaves), std::move(history));
}

CoarsenResult coarsen(const SimplicialMesh& mesh, std::span<const Index> marked) {
  const auto& tets = mesh.tets();
  const auto& history = mesh.history();
  const auto nt = static_cast<Index>(tets.size());
  const auto nv = static_cast<Index>(mesh.num_vertices());

  std::vector<char> is_marked(nt, 0);
  std::size_t marked_count = 0;
  for (Index t : marked) {
    if (t < 0 || t >= nt) throw InputError("coarsen: marked tet index out of range");
    if (!is_marked[t]) ++marked_count;
    is_marked[t] = 1;
  }
  if (marked_count == 0) return {SimplicialMesh(mesh.vertices(), tets, history), 0};

  // Newest vertex of a child: the one vertex its parent lacks.
  auto newest_vertex = [&](const Tet& t) -> Index {
    if (t.parent == kNoIndex) return kNoIndex;
    const Tet& p = history[t.parent];
    for (Index v : t.v)
      if (std::find(p.v.begin(), p.v.end(), v) == p.v.end()) return v;
    return kNoIndex;
  };

  std::vector<std::vector<Index>> around(nv);
  for (Index t = 0; t < nt; ++t)
    for (Index v : tets[t].v) around[v].push_back(t);

  std::vector<int> leaf_children(history.size(), 0);
  for (const Tet& t : tets)
    if (t.parent != kNoIndex) ++leaf_children[t.parent];

  std::vector<char> removed(nt, 0);
  std::vector<char> vertex_removed(nv, 0);
  std::size_t merged = 0;
  for (Index z = 0; z < nv; ++z) {
    const auto& patch = around[z];
    if (patch.empty()) continue;
    bool eligible = true;
    for (Index t : patch) {
      const Tet& tet = tets[t];
      if (!is_marked[t] || removed[t] || newest_vertex(tet) != z ||
          leaf_children[tet.parent] != 2) {
        eligible = false;
        break;
      }
    }
    if (!eligible) continue;
    for (Index t : patch) removed[t] = 1;
    vertex_removed[z] = 1;
    merged += patch.size();
  }

  // Restored parents take the slot of their first child.
  std::vector<Tet> leaves;
  std::vector<char> restored(history.size(), 0);
  for (Index t = 0; t < nt; ++t) {
    if (!removed[t]) {
      leaves.push_back(tets[t]);
    } else if (!restored[tets[t].parent]) {
      restored[tets[t].parent] = 1;
      leaves.push_back(history[tets[t].parent]);
    }
  }

  // Compact vertices.
  std::vector<Index> vmap(nv, kNoIndex);
  std::vector<Vec3> vertices;
  vertices.reserve(nv);
  for (Index v = 0; v < nv; ++v) {
    if (vertex_removed[v]) continue;
    vmap[v] = static_cast<Index>(vertices.size());
    vertices.push_back(mesh.vertices()[v]);
  }

  // Compact history to the ancestors of the remaining leaves.
  std::vector<char> keep(history.size(), 0);
  for (const Tet& t : leaves)
    for (Index p = t.parent; p != kNoIndex && !keep[p]; p = history[p].parent) keep[p] = 1;
  std::vector<Index> hmap(history.size(), kNoIndex);
  std::vector<Tet> new_history;
  for (std::size_t h = 0; h < history.size(); ++h)
    if (keep[h]) {
      hmap[h] = static_cast<Index>(new_history.size());
      new_history.push_back(history[h]);
    }
  auto remap = [&](Tet& t) {
    for (Index& v : t.v) v = vmap[v];
    if (t.parent != kNoIndex) t.parent = hmap[t.parent];
  };
  for (Tet& t : new_history) remap(t);
  for (Tet& t : leaves) remap(t);

  return {SimplicialMesh(std::move(vertices), std::move(leaves), std::move(new_history)),
          marked_count - merged};
}

GeometryTables geometry_tables(const SimplicialMesh& mesh) {
  GeometryTables g;
  const auto nt = static_cast<Index>(mesh.num_tets());
  g.tets.resize(nt);
  for (Index t = 0; t < nt; ++t) {
    const auto p = mesh.tet_points(t);
    const Vec3 e1 = p[1] - p[0], e2 = p[2] - p[0], e3 = p[3] - p[0];
    const double det = dot(e1, cross(e2, e3));
    const double scale = points_diameter(p);
    if (!(std::abs(det) > 1e-14 * scale * scale * scale))
      throw ElementError("degenerate tetrahedron with zero volume", t);
    TetGeometry& tg = g.tets[t];
    tg.volume = std::abs(det) / 6.0;
    tg.diameter = scale;
    tg.grad_lambda[1] = (1.0 / det) * cross(e2, e3);
    tg.grad_lambda[2] = (1.0 / det) * cross(e3, e1);
    tg.grad_lambda[3] = (1.0 / det) * cross(e1, e2);
    tg.grad_lambda[0] = -(tg.grad_lambda[1] + tg.grad_lambda[2] + tg.grad_lambda[3]);
  }

  const auto& faces = mesh.faces();
  g.faces.resize(faces.size());
  auto centroid = [&](Index t) {
    const auto p = mesh.tet_points(t);
    return 0.25 * (p[0] + p[1] + p[2] + p[3]);
  };
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& face = faces[f];
    const Vec3& a = mesh.vertices()[face.v[0]];
    const Vec3& b = mesh.vertices()[face.v[1]];
    const Vec3& c = mesh.vertices()[face.v[2]];
    Vec3 n = cross(b - a, c - a);
    const double len = norm(n);
    FaceGeometry& fg = g.faces[f];
    fg.area = 0.5 * len;
    fg.diameter = std::max({distance(a, b), distance(b, c), distance(a, c)});
    n *= 1.0 / len;
    const Vec3 toward = face.on_boundary() ? (1.0 / 3.0) * (a + b + c) - centroid(face.left)
                                           : centroid(face.right) - centroid(face.left);
    if (dot(n, toward) < 0.0) n = -n;
    fg.normal = n;
  }
  return g;
}

double shape_ratio(const SimplicialMesh& mesh, Index t) {
  const auto p = mesh.tet_points(t);
  const double volume = std::abs(signed_volume(p));
  double area = 0.0;
  for (int i = 0; i < 4; ++i) {
    std::array<Vec3, 3> f;
    int k = 0;
    for (int j = 0; j < 4; ++j)
      if (j != i) f[k++] = p[j];
    area += 0.5 * norm(cross(f[1] - f[0], f[2] - f[0]));
  }
  const double inradius = 3.0 * volume / area;
  return points_diameter(p) / (2.0 * inradius);
}

bool MeshAudit::ok(double tol) const {
  return conforming && positive_volumes && std::abs(total_volume - 1.0) <= tol &&
         std::abs(boundary_area - 6.0) <= 1e3 * tol;
}

MeshAudit audit(const SimplicialMesh& mesh) {
  MeshAudit a;
  const auto& tets = mesh.tets();
  const auto& x = mesh.vertices();
  long double volume = 0.0L, area = 0.0L;
  for (Index t = 0; t < static_cast<Index>(tets.size()); ++t) {
    const double v = signed_volume(mesh.tet_points(t));
    if (!(std::abs(v) > 0.0)) a.positive_volumes = false;
    volume += std::abs(v);
    a.max_shape_ratio = std::max(a.max_shape_ratio, shape_ratio(mesh, t));
  }
  const auto entries = collect_faces(tets);
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i + 1;
    while (j < entries.size() && entries[j].key == entries[i].key) ++j;
    const auto& k = entries[i].key;
    if (j - i == 1) {
      if (on_unit_cube_face(x[k[0]], x[k[1]], x[k[2]])) {
        area += 0.5 * norm(cross(x[k[1]] - x[k[0]], x[k[2]] - x[k[0]]));
      } else {
        a.conforming = false;
        ++a.bad_faces;
      }
    } else if (j - i > 2) {
      a.conforming = false;
      ++a.bad_faces;
    }
    i = j;
  }
  a.total_volume = static_cast<double>(volume);
  a.boundary_area = static_cast<double>(area);
  return a;
}

std::array<double, 4> barycentric(const std::array<Vec3, 4>& p, const Vec3& q) {
  const Vec3 e1 = p[1] - p[0], e2 = p[2] - p[0], e3 = p[3] - p[0];
  const double det = dot(e1, cross(e2, e3));
  const Vec3 r = q - p[0];
  const double l1 = dot(r, cross(e2, e3)) / det;
  const double l2 = dot(e1, cross(r, e3)) / det;
  const double l3 = dot(e1, cross(e2, r)) / det;
  return {1.0 - l1 - l2 - l3, l1, l2, l3};
}

PointLocator::PointLocator(const SimplicialMesh& mesh) : mesh_(&mesh) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  lo_ = {inf, inf, inf};
  hi_ = {-inf, -inf, -inf};
  for (const Vec3& p : mesh.vertices())
    for (int d = 0; d < 3; ++d) {
      lo_[d] = std::min(lo_[d], p[d]);
      hi_[d] = std::max(hi_[d], p[d]);
    }
  cells_ = std::clamp(static_cast<int>(std::cbrt(mesh.num_tets() / 4.0)), 1, 96);
  buckets_.assign(static_cast<std::size_t>(cells_) * cells_ * cells_, {});
  auto cell_of = [this](double x, int d) {
    const double s = (x - lo_[d]) / (hi_[d] - lo_[d]) * cells_;
    return std::clamp(static_cast<int>(std::floor(s)), 0, cells_ - 1);
  };
  for (Index t = 0; t < static_cast<Index>(mesh.num_tets()); ++t) {
    const auto p = mesh.tet_points(t);
    std::array<int, 3> a{}, b{};
    for (int d = 0; d < 3; ++d) {
      double mn = p[0][d], mx = p[0][d];
      for (int i = 1; i < 4; ++i) {
        mn = std::min(mn, p[i][d]);
        mx = std::max(mx, p[i][d]);
      }
      const double pad = 1e-9 * (hi_[d] - lo_[d]);
      a[d] = cell_of(mn - pad, d);
      b[d] = cell_of(mx + pad, d);
    }
    for (int k = a[2]; k <= b[2]; ++k)
      for (int j = a[1]; j <= b[1]; ++j)
        for (int i = a[0]; i <= b[0]; ++i)
          buckets_[i + cells_ * (j + cells_ * k)].push_back(t);
  }
}

PointLocator::Hit PointLocator::locate(const Vec3& q, double tol) const {
  std::array<int, 3> c{};
  for (int d = 0; d < 3; ++d) {
    const double s = (q[d] - lo_[d]) / (hi_[d] - lo_[d]) * cells_;
    c[d] = std::clamp(static_cast<int>(std::floor(s)), 0, cells_ - 1);
  }
  Hit best;
  double best_min = -std::numeric_limits<double>::infinity();
  for (Index t : buckets_[c[0] + cells_ * (c[1] + cells_ * c[2])]) {
    const auto bary = barycentric(mesh_->tet_points(t), q);
    const double m = std::min({bary[0], bary[1], bary[2], bary[3]});
    if (m > best_min) {
      best_min = m;
      best.tet = t;
      best.bary = bary;
    }
  }
  if (best_min < -tol) best.tet = kNoIndex;
  return best;
}

double evaluate_p1(const SimplicialMesh& mesh, const PointLocator& locator,
                   std::span<const double> field, const Vec3& p) {
  const auto hit = locator.locate(p, 1e-8);
  if (hit.tet == kNoIndex) throw InputError("evaluate_p1: point outside the mesh");
  const Tet& t = mesh.tets()[hit.tet];
  double s = 0.0;
  for (int i = 0; i < 4; ++i) s += hit.bary[i] * field[t.v[i]];
  return s;
}

TransferMap::TransferMap(std::uint64_t source_id, std::uint64_t target_id,
                         std::size_t source_size, std::vector<Stencil> stencils)
    : source_id_(source_id), target_id_(target_id), source_size_(source_size),
      stencils_(std::move(stencils)) {}

bool TransferMap::is_identity() const {
  if (stencils_.size() != source_size_) return false;
  for (std::size_t i = 0; i < stencils_.size(); ++i) {
    const auto& s = stencils_[i];
    if (s.size != 1 || s.source[0] != static_cast<Index>(i) || s.weight[0] != 1.0) return false;
  }
  return true;
}

std::vector<double> TransferMap::apply(std::span<const double> source) const {
  if (source.size() != source_size_) throw InputError("TransferMap::apply: field size mismatch");
  std::vector<double> out(stencils_.size());
  for (std::size_t i = 0; i < stencils_.size(); ++i) {
    const auto& s = stencils_[i];
    double v = 0.0;
    for (int k = 0; k < s.size; ++k) v += s.weight[k] * source[s.source[k]];
    out[i] = v;
  }
  return out;
}

namespace {

// Every tet of `fine` lies inside a single tet of `coarse`.
bool nested_in(const SimplicialMesh& fine, const SimplicialMesh& coarse,
               const PointLocator& coarse_locator) {
  for (Index t = 0; t < static_cast<Index>(fine.num_tets()); ++t) {
    const auto p = fine.tet_points(t);
    const Vec3 c = 0.25 * (p[0] + p[1] + p[2] + p[3]);
    const auto hit = coarse_locator.locate(c, 1e-10);
    if (hit.tet == kNoIndex) return false;
    const auto q = coarse.tet_points(hit.tet);
    for (const Vec3& x : p) {
      const auto b = barycentric(q, x);
      if (std::min({b[0], b[1], b[2], b[3]}) < -1e-9) return false;
    }
  }
  return true;
}

TransferMap::Stencil stencil_at(const SimplicialMesh& source, const PointLocator& locator,
                                const Vec3& x) {
  const auto hit = locator.locate(x, 1e-9);
  if (hit.tet == kNoIndex) throw NotNestedError("build_transfer: target vertex outside source mesh");
  TransferMap::Stencil s;
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double w = std::max(0.0, hit.bary[i]);
    if (w < 1e-13) continue;
    s.source[s.size] = source.tets()[hit.tet].v[i];
    s.weight[s.size] = w;
    sum += w;
    ++s.size;
  }
  for (int k = 0; k < s.size; ++k) s.weight[k] /= sum;
  if (s.size == 1) s.weight[0] = 1.0;
  return s;
}

}  // namespace

TransferMap build_transfer(const SimplicialMesh& source, const SimplicialMesh& target) {
  std::vector<TransferMap::Stencil> stencils(target.num_vertices());
  if (source.id() == target.id() || source.same_content(target)) {
    for (std::size_t i = 0; i < stencils.size(); ++i) {
      stencils[i].size = 1;
      stencils[i].source[0] = static_cast<Index>(i);
      stencils[i].weight[0] = 1.0;
    }
    return TransferMap(source.id(), target.id(), source.num_vertices(), std::move(stencils));
  }

  const PointLocator source_locator(source);
  if (nested_in(target, source, source_locator)) {
    for (std::size_t i = 0; i < stencils.size(); ++i)
      stencils[i] = stencil_at(source, source_locator, target.vertices()[i]);
    return TransferMap(source.id(), target.id(), source.num_vertices(), std::move(stencils));
  }

  const PointLocator target_locator(target);
  if (nested_in(source, target, target_locator)) {
    for (std::size_t i = 0; i < stencils.size(); ++i) {
      stencils[i] = stencil_at(source, source_locator, target.vertices()[i]);
      if (stencils[i].size != 1)
        throw NotNestedError("build_transfer: coarse vertex is not a vertex of the fine mesh");
    }
    return TransferMap(source.id(), target.id(), source.num_vertices(), std::move(stencils));
  }
  throw NotNestedError("build_transfer: meshes are not nested");
}

}  // namespace invadapt
