#include "invadapt/vtu.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace invadapt {

namespace {

void write_array(std::ostream& os, const std::string& name, const std::vector<double>& data,
                 int components = 1) {
  os << "        <DataArray type=\"Float64\" Name=\"" << name << "\"";
  if (components > 1) os << " NumberOfComponents=\"" << components << "\"";
  os << " format=\"ascii\">\n";
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", data[i]);
    os << (i % 6 == 0 ? "          " : " ") << buf;
    if (i % 6 == 5 || i + 1 == data.size()) os << '\n';
  }
  os << "        </DataArray>\n";
}

std::string attribute(const std::string& tag, const std::string& key) {
  const auto p = tag.find(key + "=\"");
  if (p == std::string::npos) return {};
  const auto b = p + key.size() + 2;
  return tag.substr(b, tag.find('"', b) - b);
}

}  // namespace

void write_vtu(const std::string& path, const SimplicialMesh& mesh,
               const std::vector<NamedField>& point_data, const std::vector<NamedField>& cell_data) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot open '" + path + "' for writing");
  const auto np = mesh.num_vertices();
  const auto nc = mesh.num_tets();
  for (const auto& [name, f] : point_data)
    if (f.size() != np) throw InputError("point field '" + name + "' has the wrong length");
  for (const auto& [name, f] : cell_data)
    if (f.size() != nc) throw InputError("cell field '" + name + "' has the wrong length");

  os << "<?xml version=\"1.0\"?>\n"
     << "<VTKFile type=\"UnstructuredGrid\" version=\"0.1\" byte_order=\"LittleEndian\">\n"
     << "  <UnstructuredGrid>\n"
     << "    <Piece NumberOfPoints=\"" << np << "\" NumberOfCells=\"" << nc << "\">\n";
  os << "      <PointData>\n";
  for (const auto& [name, f] : point_data) write_array(os, name, f);
  os << "      </PointData>\n      <CellData>\n";
  for (const auto& [name, f] : cell_data) write_array(os, name, f);
  os << "      </CellData>\n      <Points>\n";
  std::vector<double> xyz;
  xyz.reserve(3 * np);
  for (const Vec3& p : mesh.vertices()) xyz.insert(xyz.end(), {p.x, p.y, p.z});
  write_array(os, "Points", xyz, 3);
  os << "      </Points>\n      <Cells>\n";
  os << "        <DataArray type=\"Int64\" Name=\"connectivity\" format=\"ascii\">\n";
  for (const Tet& t : mesh.tets())
    os << "          " << t.v[0] << ' ' << t.v[1] << ' ' << t.v[2] << ' ' << t.v[3] << '\n';
  os << "        </DataArray>\n";
  os << "        <DataArray type=\"Int64\" Name=\"offsets\" format=\"ascii\">\n";
  for (std::size_t c = 0; c < nc; ++c) os << "          " << 4 * (c + 1) << '\n';
  os << "        </DataArray>\n";
  os << "        <DataArray type=\"UInt8\" Name=\"types\" format=\"ascii\">\n";
  for (std::size_t c = 0; c < nc; ++c) os << "          10\n";
  os << "        </DataArray>\n      </Cells>\n    </Piece>\n  </UnstructuredGrid>\n</VTKFile>\n";
  if (!os) throw InputError("write failed for '" + path + "'");
}

VtuContent read_vtu(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();

  VtuContent out;
  enum class Section { none, point, cell, points, cells } section = Section::none;
  std::size_t pos = 0;
  std::vector<double> connectivity;
  while ((pos = text.find('<', pos)) != std::string::npos) {
    const auto end = text.find('>', pos);
    if (end == std::string::npos) throw InputError("malformed VTU: unterminated tag");
    const std::string tag = text.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.rfind("PointData", 0) == 0) section = Section::point;
    else if (tag.rfind("CellData", 0) == 0) section = Section::cell;
    else if (tag.rfind("Points", 0) == 0) section = Section::points;
    else if (tag.rfind("Cells", 0) == 0) section = Section::cells;
    else if (tag.rfind("/PointData", 0) == 0 || tag.rfind("/CellData", 0) == 0 ||
             tag.rfind("/Points", 0) == 0 || tag.rfind("/Cells", 0) == 0)
      section = Section::none;
    else if (tag.rfind("DataArray", 0) == 0) {
      const auto close = text.find("</DataArray>", pos);
      if (close == std::string::npos) throw InputError("malformed VTU: unterminated DataArray");
      std::istringstream body(text.substr(pos, close - pos));
      std::vector<double> values;
      for (double x; body >> x;) values.push_back(x);
      const std::string name = attribute(tag, "Name");
      switch (section) {
        case Section::point: out.point_data[name] = std::move(values); break;
        case Section::cell: out.cell_data[name] = std::move(values); break;
        case Section::points:
          if (values.size() % 3 != 0) throw InputError("malformed VTU: point coordinates");
          for (std::size_t i = 0; i < values.size(); i += 3)
            out.points.push_back({values[i], values[i + 1], values[i + 2]});
          break;
        case Section::cells:
          if (name == "connectivity") connectivity = std::move(values);
          break;
        case Section::none: break;
      }
      pos = close + 12;
    }
  }
  if (connectivity.size() % 4 != 0) throw InputError("malformed VTU: non-tetrahedral cells");
  for (std::size_t i = 0; i < connectivity.size(); i += 4)
    out.cells.push_back({static_cast<Index>(connectivity[i]), static_cast<Index>(connectivity[i + 1]),
                         static_cast<Index>(connectivity[i + 2]),
                         static_cast<Index>(connectivity[i + 3])});
  return out;
}

}  // namespace invadapt
