#pragma once

#include <filesystem>

#include "tinyema/image.hpp"

namespace tinyema {

/// Binary PGM (P5). bit_depth 8 writes one byte per pixel, 16 writes
/// big-endian pairs. Intensities are scaled by the maximum value and rounded.
void write_pgm(const std::filesystem::path& path, const ImageBuffer& image, int bit_depth = 8);

/// Reads P5 with maxval up to 65535; intensities normalized to [0,1].
ImageBuffer read_pgm(const std::filesystem::path& path);

/// Grayscale PNG export, 8 or 16 bits.
void write_png(const std::filesystem::path& path, const ImageBuffer& image, int bit_depth = 8);

}  // namespace tinyema
