#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "invadapt/mesh.hpp"

namespace invadapt {

using NamedField = std::pair<std::string, std::vector<double>>;

// ASCII VTK unstructured grid of tetrahedra with point and cell data.
void write_vtu(const std::string& path, const SimplicialMesh& mesh,
               const std::vector<NamedField>& point_data,
               const std::vector<NamedField>& cell_data = {});

struct VtuContent {
  std::vector<Vec3> points;
  std::vector<std::array<Index, 4>> cells;
  std::map<std::string, std::vector<double>> point_data;
  std::map<std::string, std::vector<double>> cell_data;
};

// Reads files produced by write_vtu. Throws InputError on malformed input.
VtuContent read_vtu(const std::string& path);

}  // namespace invadapt
