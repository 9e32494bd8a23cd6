#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "edtrack/types.hpp"

namespace edtrack {

struct ObjMesh {
  std::vector<Vec3> positions;
  std::vector<std::array<int, 3>> triangles;  // zero-based
};

inline void write_obj(std::ostream& out, const ObjMesh& mesh) {
  if (mesh.positions.empty() || mesh.triangles.empty()) throw InvalidParameterError("cannot export an empty mesh");
  char buf[96];
  for (const auto& p : mesh.positions) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", p.x(), p.y(), p.z());
    out << buf;
  }
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

inline void write_obj(const std::string& path, const ObjMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_obj(out, mesh);
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// Reads vertices and faces; polygons are fan-triangulated and
/// "v/vt/vn" face tokens keep only the vertex index.
inline ObjMesh read_obj(std::istream& in, const std::string& name = "<stream>") {
  ObjMesh m;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& what) { throw IoError(name + ":" + std::to_string(lineno) + ": " + what); };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z()) || !p.allFinite()) fail("malformed vertex");
      m.positions.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        int k = 0;
        try {
          k = std::stoi(tok.substr(0, tok.find('/')));
        } catch (const std::exception&) {
          fail("malformed face index '" + tok + "'");
        }
        if (k < 0) k = int(m.positions.size()) + k + 1;
        if (k < 1 || k > int(m.positions.size())) fail("face index out of range");
        idx.push_back(k - 1);
      }
      if (idx.size() < 3) fail("face with fewer than 3 vertices");
      for (std::size_t a = 1; a + 1 < idx.size(); ++a) m.triangles.push_back({idx[0], idx[a], idx[a + 1]});
    }
  }
  return m;
}

inline ObjMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh '" + path + "'");
  return read_obj(in, path);
}

}  // namespace edtrack
