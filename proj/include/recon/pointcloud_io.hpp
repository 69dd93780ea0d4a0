#pragma once

#include <string>

#include "recon/grid.hpp"

namespace recon {

// ASCII XYZ: "x y z" or "x y z nx ny nz" per line, consistent across lines.
void save_xyz(const std::string& path, const OrientedPointCloud& cloud);
OrientedPointCloud load_xyz(const std::string& path);

// Binary little-endian PLY with float32 x,y,z[,nx,ny,nz] vertex properties.
void save_ply(const std::string& path, const OrientedPointCloud& cloud);
OrientedPointCloud load_ply(const std::string& path);

// Dispatches on extension (.xyz / .ply).
void save_pointcloud(const std::string& path, const OrientedPointCloud& cloud);
OrientedPointCloud load_pointcloud(const std::string& path);

}  // namespace recon
