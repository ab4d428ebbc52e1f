#pragma once

#include "facade_gp/geometry.hpp"

#include <filesystem>

namespace facade_gp {

enum class CloudFormat { xyz_ascii, ply_ascii };

/// Picks the format from the file extension (.ply -> PLY, anything else XYZ).
CloudFormat format_from_extension(const std::filesystem::path& path);

/// Reads an ASCII XYZ (3 or 6 columns, '#' comments) or ASCII PLY file.
/// Throws NotFoundError when the file is missing and ParseError (with the
/// offending line number) on malformed content.
PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format);
PointCloud read_cloud(const std::filesystem::path& path);

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace facade_gp
