#include "recon/meshing.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "recon/rng.hpp"

namespace recon {

namespace {

// Cube corner c -> lattice offset (Bourke numbering: 0..3 bottom ring CCW,
// 4..7 top ring).
constexpr int kCornerOffset[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};

// Edge e -> its two corners.
constexpr int kEdgeCorner[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {0, 3}, {4, 5}, {5, 6},
    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

// Edge e -> (axis, lattice offset of the lower endpoint). Shared edges of
// neighboring cells map to the same key, which is what makes the vertex
// cache weld the mesh.
struct EdgeKeyInfo {
  int axis;
  int off[3];
};
constexpr EdgeKeyInfo kEdgeKey[12] = {
    {0, {0, 0, 0}}, {1, {1, 0, 0}}, {0, {0, 1, 0}}, {1, {0, 0, 0}},
    {0, {0, 0, 1}}, {1, {1, 0, 1}}, {0, {0, 1, 1}}, {1, {0, 0, 1}},
    {2, {0, 0, 0}}, {2, {1, 0, 0}}, {2, {1, 1, 0}}, {2, {0, 1, 0}},
};

uint64_t pack_edge_key(int axis, int gx, int gy, int gz) {
  return static_cast<uint64_t>(axis) | (static_cast<uint64_t>(gx) << 2) |
         (static_cast<uint64_t>(gy) << 22) | (static_cast<uint64_t>(gz) << 42);
}

TriangleMesh extract(const ScalarGrid& chi, const SurfaceMask* mask, double iso, CellRule rule) {
  int r = chi.res;
  if (r < 2) throw invalid_input("marching_cubes: resolution must be >= 2");
  for (double v : chi.data) {
    if (!std::isfinite(v)) throw invalid_input("marching_cubes: non-finite grid values");
  }
  if (mask && mask->res != r) throw invalid_input("marching_cubes: mask resolution mismatch");

  TriangleMesh mesh;
  std::unordered_map<uint64_t, uint32_t> edge_vertex;

  auto corner_pos = [&](int i, int j, int k) {
    return Vec3((i + 0.5) / r, (j + 0.5) / r, (k + 0.5) / r);
  };

  for (int k = 0; k + 1 < r; ++k) {
    for (int j = 0; j + 1 < r; ++j) {
      for (int i = 0; i + 1 < r; ++i) {
        if (mask) {
          int hits = 0;
          for (const auto& off : kCornerOffset) hits += mask->at(i + off[0], j + off[1], k + off[2]);
          if (rule == CellRule::all ? hits < 8 : hits == 0) continue;
        }

        double val[8];
        int cubeindex = 0;
        for (int c = 0; c < 8; ++c) {
          val[c] = chi.at(i + kCornerOffset[c][0], j + kCornerOffset[c][1], k + kCornerOffset[c][2]);
          if (val[c] < iso) cubeindex |= 1 << c;
        }
        int edges = kMcEdgeTable[cubeindex];
        if (edges == 0) continue;

        uint32_t vert_of_edge[12];
        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1 << e))) continue;
          const EdgeKeyInfo& key = kEdgeKey[e];
          uint64_t packed = pack_edge_key(key.axis, i + key.off[0], j + key.off[1], k + key.off[2]);
          auto it = edge_vertex.find(packed);
          if (it != edge_vertex.end()) {
            vert_of_edge[e] = it->second;
            continue;
          }
          // interpolate in the canonical lower->upper direction so both cells
          // sharing the edge compute bit-identical coordinates
          int ca = kEdgeCorner[e][0], cb = kEdgeCorner[e][1];
          if (kCornerOffset[ca][key.axis] > kCornerOffset[cb][key.axis]) std::swap(ca, cb);
          double t = (iso - val[ca]) / (val[cb] - val[ca]);
          Vec3 pa = corner_pos(i + kCornerOffset[ca][0], j + kCornerOffset[ca][1], k + kCornerOffset[ca][2]);
          Vec3 pb = corner_pos(i + kCornerOffset[cb][0], j + kCornerOffset[cb][1], k + kCornerOffset[cb][2]);
          uint32_t idx = static_cast<uint32_t>(mesh.vertices.size());
          mesh.vertices.push_back(pa + t * (pb - pa));
          edge_vertex.emplace(packed, idx);
          vert_of_edge[e] = idx;
        }

        const int* tri = kMcTriTable[cubeindex];
        for (int t = 0; tri[t] != -1; t += 3) {
          uint32_t a = vert_of_edge[tri[t]];
          uint32_t b = vert_of_edge[tri[t + 1]];
          uint32_t c = vert_of_edge[tri[t + 2]];
          if (a == b || b == c || a == c) continue;  // collapsed across a flat edge
          mesh.triangles.push_back({a, b, c});
        }
      }
    }
  }
  return mesh;
}

}  // namespace

TriangleMesh marching_cubes(const ScalarGrid& chi, double iso) {
  return extract(chi, nullptr, iso, CellRule::all);
}

TriangleMesh masked_marching_cubes(const ScalarGrid& chi, const SurfaceMask& mask, double iso,
                                   CellRule cell_rule) {
  return extract(chi, &mask, iso, cell_rule);
}

OrientedPointCloud sample_mesh_surface(const TriangleMesh& mesh, size_t n, uint64_t seed) {
  if (mesh.triangles.empty()) throw invalid_input("sample_mesh_surface: empty mesh");
  if (n < 1) throw invalid_input("sample_mesh_surface: need n >= 1");

  std::vector<double> cum(mesh.triangles.size());
  std::vector<Vec3> face_normal(mesh.triangles.size());
  double total = 0.0;
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    Vec3 a = mesh.vertices[tri[0]];
    Vec3 cross = (mesh.vertices[tri[1]] - a).cross(mesh.vertices[tri[2]] - a);
    double norm = cross.norm();
    total += 0.5 * norm;
    cum[t] = total;
    face_normal[t] = norm > 0.0 ? Vec3(cross / norm) : Vec3(0.0, 0.0, 0.0);
  }
  if (!(total > 0.0)) throw invalid_input("sample_mesh_surface: zero surface area");

  Rng rng(seed);
  OrientedPointCloud cloud;
  cloud.positions.reserve(n);
  cloud.normals.reserve(n);
  for (size_t s = 0; s < n; ++s) {
    double pick = rng.uniform() * total;
    size_t t = std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin();
    if (t >= cum.size()) t = cum.size() - 1;
    const auto& tri = mesh.triangles[t];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    Vec3 a = mesh.vertices[tri[0]];
    cloud.positions.push_back(a + u * (mesh.vertices[tri[1]] - a) + v * (mesh.vertices[tri[2]] - a));
    cloud.normals.push_back(face_normal[t]);
  }
  return cloud;
}

WatertightReport watertight_check(const TriangleMesh& mesh) {
  std::unordered_map<uint64_t, int> edge_count;
  edge_count.reserve(mesh.triangles.size() * 3);
  for (const auto& tri : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      uint32_t a = tri[e], b = tri[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      edge_count[(static_cast<uint64_t>(a) << 32) | b] += 1;
    }
  }
  WatertightReport report;
  report.is_watertight = !mesh.triangles.empty();
  for (const auto& [key, count] : edge_count) {
    if (count != 2) report.is_watertight = false;
    if (count == 1) report.boundary_edge_count += 1;
  }
  return report;
}

void save_mesh_obj(const std::string& path, const TriangleMesh& mesh) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw invalid_input("cannot open file: " + path);
  for (const Vec3& v : mesh.vertices) std::fprintf(f, "v %.17g %.17g %.17g\n", v[0], v[1], v[2]);
  for (const Vec3& n : mesh.normals) std::fprintf(f, "vn %.17g %.17g %.17g\n", n[0], n[1], n[2]);
  bool with_normals = mesh.normals.size() == mesh.vertices.size();
  for (const auto& t : mesh.triangles) {
    if (with_normals)
      std::fprintf(f, "f %u//%u %u//%u %u//%u\n", t[0] + 1, t[0] + 1, t[1] + 1, t[1] + 1, t[2] + 1, t[2] + 1);
    else
      std::fprintf(f, "f %u %u %u\n", t[0] + 1, t[1] + 1, t[2] + 1);
  }
  if (std::fclose(f) != 0) throw runtime_failure("mesh write failed: " + path);
}

namespace {

uint32_t parse_face_index(const std::string& token, size_t vertex_count, const std::string& path) {
  // accepts "i", "i/t", "i//n", "i/t/n"
  long raw = std::strtol(token.c_str(), nullptr, 10);
  if (raw < 0) raw = static_cast<long>(vertex_count) + raw + 1;  // negative indices count from the end
  if (raw < 1 || static_cast<size_t>(raw) > vertex_count)
    throw invalid_input("face index out of range in " + path);
  return static_cast<uint32_t>(raw - 1);
}

TriangleMesh load_obj(std::istream& in, const std::string& path) {
  TriangleMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag.empty() || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v[0] >> v[1] >> v[2])) throw invalid_input("malformed vertex line in " + path);
      mesh.vertices.push_back(v);
    } else if (tag == "vn") {
      Vec3 n;
      if (!(ls >> n[0] >> n[1] >> n[2])) throw invalid_input("malformed normal line in " + path);
      mesh.normals.push_back(n);
    } else if (tag == "f") {
      std::vector<uint32_t> poly;
      std::string token;
      while (ls >> token) poly.push_back(parse_face_index(token, mesh.vertices.size(), path));
      if (poly.size() < 3) throw invalid_input("face with fewer than 3 vertices in " + path);
      for (size_t i = 1; i + 1 < poly.size(); ++i)
        mesh.triangles.push_back({poly[0], poly[i], poly[i + 1]});
    }
  }
  if (!mesh.normals.empty() && mesh.normals.size() != mesh.vertices.size()) mesh.normals.clear();
  return mesh;
}

TriangleMesh load_off(std::istream& in, const std::string& path) {
  auto next_token = [&](std::string& out) {
    while (in >> out) {
      if (out[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return true;
    }
    return false;
  };

  std::string tok;
  size_t nv = 0, nf = 0, ne = 0;
  if (!next_token(tok)) throw invalid_input("empty OFF file: " + path);
  {
    std::istringstream hs(tok);
    if (!(hs >> nv)) {
      // token was the "OFF" keyword; counts follow
      if (!next_token(tok)) throw invalid_input("truncated OFF header: " + path);
      nv = std::stoul(tok);
    }
  }
  if (!next_token(tok)) throw invalid_input("truncated OFF header: " + path);
  nf = std::stoul(tok);
  if (!next_token(tok)) throw invalid_input("truncated OFF header: " + path);
  ne = std::stoul(tok);
  (void)ne;

  TriangleMesh mesh;
  mesh.vertices.resize(nv);
  for (size_t i = 0; i < nv; ++i) {
    for (int a = 0; a < 3; ++a) {
      if (!next_token(tok)) throw invalid_input("truncated OFF vertices: " + path);
      mesh.vertices[i][a] = std::stod(tok);
    }
  }
  for (size_t face = 0; face < nf; ++face) {
    if (!next_token(tok)) throw invalid_input("truncated OFF faces: " + path);
    size_t arity = std::stoul(tok);
    if (arity < 3) throw invalid_input("OFF face with fewer than 3 vertices: " + path);
    std::vector<uint32_t> poly(arity);
    for (size_t a = 0; a < arity; ++a) {
      if (!next_token(tok)) throw invalid_input("truncated OFF faces: " + path);
      unsigned long idx = std::stoul(tok);
      if (idx >= nv) throw invalid_input("OFF face index out of range: " + path);
      poly[a] = static_cast<uint32_t>(idx);
    }
    for (size_t a = 1; a + 1 < arity; ++a) mesh.triangles.push_back({poly[0], poly[a], poly[a + 1]});
  }
  return mesh;
}

}  // namespace

TriangleMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open file: " + path);

  std::string head;
  in >> head;
  in.seekg(0);
  TriangleMesh mesh;
  if (head == "OFF" || (path.size() > 4 && path.substr(path.size() - 4) == ".off")) {
    if (head == "OFF") {
      std::string kw;
      in >> kw;
    }
    mesh = load_off(in, path);
  } else {
    mesh = load_obj(in, path);
  }
  for (const auto& t : mesh.triangles) {
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
      throw invalid_input("degenerate triangle in " + path);
  }
  for (const Vec3& v : mesh.vertices) {
    if (!v.allFinite()) throw invalid_input("non-finite vertex in " + path);
  }
  return mesh;
}

}  // namespace recon
