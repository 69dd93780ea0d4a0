#include "recon/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <numeric>

namespace recon {

size_t SurfaceMask::count() const {
  size_t n = 0;
  for (uint8_t v : data) n += v != 0;
  return n;
}

TrilinearStencil trilinear_stencil(int res, const Vec3& p) {
  if (!p.allFinite()) throw invalid_input("trilinear: non-finite sample position");
  TrilinearStencil st;
  for (int a = 0; a < 3; ++a) {
    double g = p[a] * res - 0.5;
    double f = std::floor(g);
    int i0 = static_cast<int>(f);
    double t = g - f;
    int lo = std::clamp(i0, 0, res - 1);
    int hi = std::clamp(i0 + 1, 0, res - 1);
    switch (a) {
      case 0: st.ix = {lo, hi}; st.wx = {1.0 - t, t}; break;
      case 1: st.iy = {lo, hi}; st.wy = {1.0 - t, t}; break;
      default: st.iz = {lo, hi}; st.wz = {1.0 - t, t}; break;
    }
  }
  return st;
}

double trilinear_sample(const ScalarGrid& grid, const Vec3& p) {
  TrilinearStencil st = trilinear_stencil(grid.res, p);
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
    acc += st.wx[bx] * st.wy[by] * st.wz[bz] * grid.at(st.ix[bx], st.iy[by], st.iz[bz]);
  }
  return acc;
}

Vec3 trilinear_sample(const VectorGrid& grid, const Vec3& p) {
  TrilinearStencil st = trilinear_stencil(grid.res, p);
  Vec3 acc = Vec3::Zero();
  for (int c = 0; c < 8; ++c) {
    int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
    double w = st.wx[bx] * st.wy[by] * st.wz[bz];
    size_t base = grid.index(st.ix[bx], st.iy[by], st.iz[bz]);
    acc[0] += w * grid.data[base + 0];
    acc[1] += w * grid.data[base + 1];
    acc[2] += w * grid.data[base + 2];
  }
  return acc;
}

void trilinear_sample_grad(const ScalarGrid& grid, const Vec3& p, double* value, Vec3* dvalue_dp) {
  TrilinearStencil st = trilinear_stencil(grid.res, p);
  double v = 0.0;
  Vec3 g = Vec3::Zero();
  double r = static_cast<double>(grid.res);
  for (int c = 0; c < 8; ++c) {
    int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
    double cell = grid.at(st.ix[bx], st.iy[by], st.iz[bz]);
    v += st.wx[bx] * st.wy[by] * st.wz[bz] * cell;
    // d(weight)/dp: the axis factor t (or 1-t) has derivative +-r
    g[0] += (bx ? r : -r) * st.wy[by] * st.wz[bz] * cell;
    g[1] += st.wx[bx] * (by ? r : -r) * st.wz[bz] * cell;
    g[2] += st.wx[bx] * st.wy[by] * (bz ? r : -r) * cell;
  }
  if (value) *value = v;
  if (dvalue_dp) *dvalue_dp = g;
}

VectorGrid rasterize_point_normals(const OrientedPointCloud& cloud, int res) {
  if (!cloud.has_normals() && !cloud.positions.empty())
    throw invalid_input("rasterize_point_normals: cloud has no normals");
  if (res < 2) throw invalid_input("rasterize_point_normals: resolution must be >= 2");
  VectorGrid grid(res);
  for (size_t i = 0; i < cloud.positions.size(); ++i) {
    TrilinearStencil st = trilinear_stencil(res, cloud.positions[i]);
    const Vec3& n = cloud.normals[i];
    for (int c = 0; c < 8; ++c) {
      int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
      double w = st.wx[bx] * st.wy[by] * st.wz[bz];
      size_t base = grid.index(st.ix[bx], st.iy[by], st.iz[bz]);
      grid.data[base + 0] += w * n[0];
      grid.data[base + 1] += w * n[1];
      grid.data[base + 2] += w * n[2];
    }
  }
  return grid;
}

ScalarGrid rasterize_point_weights(const std::vector<Vec3>& positions, int res) {
  ScalarGrid grid(res);
  for (const Vec3& p : positions) {
    TrilinearStencil st = trilinear_stencil(res, p);
    for (int c = 0; c < 8; ++c) {
      int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
      grid.at(st.ix[bx], st.iy[by], st.iz[bz]) += st.wx[bx] * st.wy[by] * st.wz[bz];
    }
  }
  return grid;
}

void rasterize_vjp(const OrientedPointCloud& cloud, const VectorGrid& upstream,
                   std::vector<Vec3>* grad_positions, std::vector<Vec3>* grad_normals) {
  if (!cloud.has_normals() && !cloud.positions.empty())
    throw invalid_input("rasterize_vjp: cloud has no normals");
  if (upstream.res < 2) throw invalid_input("rasterize_vjp: bad upstream grid");
  grad_positions->assign(cloud.size(), Vec3::Zero());
  grad_normals->assign(cloud.size(), Vec3::Zero());
  double r = static_cast<double>(upstream.res);
  for (size_t i = 0; i < cloud.positions.size(); ++i) {
    TrilinearStencil st = trilinear_stencil(upstream.res, cloud.positions[i]);
    const Vec3& n = cloud.normals[i];
    Vec3 gn = Vec3::Zero();
    Vec3 gp = Vec3::Zero();
    for (int c = 0; c < 8; ++c) {
      int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
      size_t base = upstream.index(st.ix[bx], st.iy[by], st.iz[bz]);
      Vec3 up(upstream.data[base], upstream.data[base + 1], upstream.data[base + 2]);
      double w = st.wx[bx] * st.wy[by] * st.wz[bz];
      gn += w * up;
      double un = up.dot(n);
      gp[0] += (bx ? r : -r) * st.wy[by] * st.wz[bz] * un;
      gp[1] += st.wx[bx] * (by ? r : -r) * st.wz[bz] * un;
      gp[2] += st.wx[bx] * st.wy[by] * (bz ? r : -r) * un;
    }
    (*grad_normals)[i] = gn;
    (*grad_positions)[i] = gp;
  }
}

// ---------------------------------------------------------------------------
// binary grid files

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw invalid_input("cannot open file: " + path);
  return f;
}

void write_u32_le(std::FILE* f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  if (std::fwrite(b, 1, 4, f) != 4) throw runtime_failure("grid write failed");
}

uint32_t read_u32_le(std::FILE* f, const std::string& path) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw invalid_input("truncated grid file: " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32_payload(std::FILE* f, const std::vector<double>& data) {
  std::vector<float> buf(data.size());
  for (size_t i = 0; i < data.size(); ++i) buf[i] = static_cast<float>(data[i]);
  if (std::fwrite(buf.data(), sizeof(float), buf.size(), f) != buf.size())
    throw runtime_failure("grid write failed");
}

std::vector<double> read_f32_payload(std::FILE* f, size_t count, const std::string& path) {
  std::vector<float> buf(count);
  if (std::fread(buf.data(), sizeof(float), count, f) != count)
    throw invalid_input("truncated grid file: " + path);
  std::vector<double> out(count);
  for (size_t i = 0; i < count; ++i) out[i] = buf[i];
  return out;
}

void check_magic(std::FILE* f, const char* expect, const std::string& path) {
  char m[4];
  if (std::fread(m, 1, 4, f) != 4 || std::memcmp(m, expect, 4) != 0)
    throw invalid_input("bad magic in grid file (expected " + std::string(expect, 4) + "): " + path);
}

}  // namespace

void save_grid(const std::string& path, const ScalarGrid& grid) {
  FilePtr f = open_file(path, "wb");
  std::fwrite("VGRD", 1, 4, f.get());
  write_u32_le(f.get(), static_cast<uint32_t>(grid.res));
  write_f32_payload(f.get(), grid.data);
}

void save_grid(const std::string& path, const VectorGrid& grid) {
  FilePtr f = open_file(path, "wb");
  std::fwrite("VVEC", 1, 4, f.get());
  write_u32_le(f.get(), static_cast<uint32_t>(grid.res));
  write_f32_payload(f.get(), grid.data);
}

void save_grid(const std::string& path, const SurfaceMask& mask) {
  FilePtr f = open_file(path, "wb");
  std::fwrite("VMSK", 1, 4, f.get());
  write_u32_le(f.get(), static_cast<uint32_t>(mask.res));
  if (std::fwrite(mask.data.data(), 1, mask.data.size(), f.get()) != mask.data.size())
    throw runtime_failure("grid write failed");
}

ScalarGrid load_scalar_grid(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  check_magic(f.get(), "VGRD", path);
  uint32_t r = read_u32_le(f.get(), path);
  if (r < 2 || r > 4096) throw invalid_input("implausible grid resolution in " + path);
  ScalarGrid grid(static_cast<int>(r));
  grid.data = read_f32_payload(f.get(), grid.size(), path);
  return grid;
}

VectorGrid load_vector_grid(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  check_magic(f.get(), "VVEC", path);
  uint32_t r = read_u32_le(f.get(), path);
  if (r < 2 || r > 4096) throw invalid_input("implausible grid resolution in " + path);
  VectorGrid grid(static_cast<int>(r));
  grid.data = read_f32_payload(f.get(), grid.data.size(), path);
  return grid;
}

SurfaceMask load_surface_mask(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  check_magic(f.get(), "VMSK", path);
  uint32_t r = read_u32_le(f.get(), path);
  if (r < 2 || r > 4096) throw invalid_input("implausible grid resolution in " + path);
  SurfaceMask mask(static_cast<int>(r));
  if (std::fread(mask.data.data(), 1, mask.data.size(), f.get()) != mask.data.size())
    throw invalid_input("truncated grid file: " + path);
  for (uint8_t& v : mask.data) {
    if (v > 1) throw invalid_input("mask payload not in {0,1}: " + path);
  }
  return mask;
}

}  // namespace recon
