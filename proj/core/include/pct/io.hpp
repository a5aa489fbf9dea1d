#pragma once

// Low-level file formats: PNG bitmaps and raw little-endian grids.
//
// Raw grid header (16 bytes):
//   0..3   magic "PCTA"
//   4      format_version (1)
//   5      dtype code (1 = uint8, 2 = float32)
//   6      ndim (1..4)
//   7      reserved, 0
//   8..15  dims as four little-endian uint16, unused dims 0
// followed by the row-major payload (last dim fastest).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pct/image.hpp"

namespace pct::io {

inline constexpr uint8_t kGridFormatVersion = 1;
inline constexpr uint8_t kDtypeU8 = 1;
inline constexpr uint8_t kDtypeF32 = 2;

void write_png_rgb(const std::filesystem::path& path, const Image& image);
Image read_png_rgb(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_png_gray(const std::filesystem::path& path);

struct RawGrid {
  uint8_t dtype = kDtypeU8;
  std::vector<int> dims;
  std::vector<uint8_t> bytes;
};

void write_raw_grid(const std::filesystem::path& path, const RawGrid& grid);
RawGrid read_raw_grid(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see partial files.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pct::io
