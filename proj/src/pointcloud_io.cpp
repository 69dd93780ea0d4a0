#include "recon/pointcloud_io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace recon {

namespace {

bool has_suffix(const std::string& s, const char* suffix) {
  size_t n = std::strlen(suffix);
  return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
}

void check_cloud(const OrientedPointCloud& cloud) {
  if (cloud.has_normals() && cloud.normals.size() != cloud.positions.size())
    throw invalid_input("point cloud: positions/normals length mismatch");
  for (const Vec3& p : cloud.positions) {
    if (!p.allFinite()) throw invalid_input("point cloud: non-finite position");
  }
}

}  // namespace

void save_xyz(const std::string& path, const OrientedPointCloud& cloud) {
  check_cloud(cloud);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw invalid_input("cannot open file: " + path);
  bool with_normals = cloud.has_normals();
  for (size_t i = 0; i < cloud.positions.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    if (with_normals) {
      const Vec3& n = cloud.normals[i];
      std::fprintf(f, "%.17g %.17g %.17g %.17g %.17g %.17g\n", p[0], p[1], p[2], n[0], n[1], n[2]);
    } else {
      std::fprintf(f, "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
    }
  }
  if (std::fclose(f) != 0) throw runtime_failure("point cloud write failed: " + path);
}

OrientedPointCloud load_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open file: " + path);
  OrientedPointCloud cloud;
  std::string line;
  int fields = 0;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    if (vals.empty()) continue;
    if (fields == 0) {
      if (vals.size() != 3 && vals.size() != 6)
        throw invalid_input("xyz line must have 3 or 6 fields: " + path);
      fields = static_cast<int>(vals.size());
    }
    if (static_cast<int>(vals.size()) != fields)
      throw invalid_input("inconsistent field count at line " + std::to_string(lineno) + ": " + path);
    cloud.positions.emplace_back(vals[0], vals[1], vals[2]);
    if (fields == 6) cloud.normals.emplace_back(vals[3], vals[4], vals[5]);
  }
  check_cloud(cloud);
  return cloud;
}

void save_ply(const std::string& path, const OrientedPointCloud& cloud) {
  check_cloud(cloud);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw invalid_input("cannot open file: " + path);
  bool with_normals = cloud.has_normals();
  std::fprintf(f,
               "ply\n"
               "format binary_little_endian 1.0\n"
               "element vertex %zu\n"
               "property float x\nproperty float y\nproperty float z\n",
               cloud.positions.size());
  if (with_normals) std::fprintf(f, "property float nx\nproperty float ny\nproperty float nz\n");
  std::fprintf(f, "end_header\n");
  for (size_t i = 0; i < cloud.positions.size(); ++i) {
    float row[6];
    int count = with_normals ? 6 : 3;
    for (int a = 0; a < 3; ++a) row[a] = static_cast<float>(cloud.positions[i][a]);
    if (with_normals)
      for (int a = 0; a < 3; ++a) row[3 + a] = static_cast<float>(cloud.normals[i][a]);
    if (std::fwrite(row, sizeof(float), count, f) != static_cast<size_t>(count)) {
      std::fclose(f);
      throw runtime_failure("point cloud write failed: " + path);
    }
  }
  if (std::fclose(f) != 0) throw runtime_failure("point cloud write failed: " + path);
}

OrientedPointCloud load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_input("cannot open file: " + path);

  std::string line;
  if (!std::getline(in, line) || line != "ply") throw invalid_input("not a PLY file: " + path);
  size_t count = 0;
  std::vector<std::string> props;
  bool little_endian = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      little_endian = fmt == "binary_little_endian";
    } else if (tag == "element") {
      std::string what;
      ls >> what >> count;
      if (what != "vertex") throw invalid_input("unsupported PLY element '" + what + "': " + path);
    } else if (tag == "property") {
      std::string type, name;
      ls >> type >> name;
      if (type != "float") throw invalid_input("unsupported PLY property type: " + path);
      props.push_back(name);
    } else if (tag == "end_header") {
      break;
    } else if (tag == "comment" || tag == "obj_info") {
      continue;
    } else {
      throw invalid_input("unsupported PLY header line '" + line + "': " + path);
    }
  }
  if (!little_endian) throw invalid_input("PLY must be binary_little_endian: " + path);
  bool with_normals;
  if (props == std::vector<std::string>{"x", "y", "z"}) {
    with_normals = false;
  } else if (props == std::vector<std::string>{"x", "y", "z", "nx", "ny", "nz"}) {
    with_normals = true;
  } else {
    throw invalid_input("unsupported PLY vertex layout: " + path);
  }

  OrientedPointCloud cloud;
  cloud.positions.reserve(count);
  if (with_normals) cloud.normals.reserve(count);
  size_t fields = with_normals ? 6 : 3;
  std::vector<float> row(fields);
  for (size_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), fields * sizeof(float));
    if (!in) throw invalid_input("truncated PLY payload: " + path);
    cloud.positions.emplace_back(row[0], row[1], row[2]);
    if (with_normals) cloud.normals.emplace_back(row[3], row[4], row[5]);
  }
  check_cloud(cloud);
  return cloud;
}

void save_pointcloud(const std::string& path, const OrientedPointCloud& cloud) {
  if (has_suffix(path, ".ply"))
    save_ply(path, cloud);
  else
    save_xyz(path, cloud);
}

OrientedPointCloud load_pointcloud(const std::string& path) {
  if (has_suffix(path, ".ply")) return load_ply(path);
  return load_xyz(path);
}

}  // namespace recon
