#include "pct/io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace pct::io {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png(const fs::path& path, int width, int height, int color_type, int channels,
               const uint8_t* data) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng: cannot allocate writer");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng: failed writing '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r)
    png_write_row(png, const_cast<uint8_t*>(data + static_cast<size_t>(r) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_png(const fs::path& path, int expected_channels, int& width,
                              int& height) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw LoadError("cannot open '" + path.string() + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("libpng: cannot allocate reader");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  if (png_get_bit_depth(png, info) != 8 || channels != expected_channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("unexpected PNG layout in '" + path.string() + "'");
  }
  std::vector<uint8_t> data(static_cast<size_t>(width) * height * channels);
  for (int r = 0; r < height; ++r) png_read_row(png, data.data() + static_cast<size_t>(r) * width * channels, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return data;
}

}  // namespace

void write_png_rgb(const fs::path& path, const Image& image) {
  write_png(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 3, image.rgb.data());
}

Image read_png_rgb(const fs::path& path) {
  Image img;
  img.rgb = read_png(path, 3, img.width, img.height);
  return img;
}

void write_png_gray(const fs::path& path, const LabelMap& labels) {
  write_png(path, labels.w, labels.h, PNG_COLOR_TYPE_GRAY, 1, labels.data.data());
}

LabelMap read_png_gray(const fs::path& path) {
  LabelMap labels;
  labels.data = read_png(path, 1, labels.w, labels.h);
  return labels;
}

void write_raw_grid(const fs::path& path, const RawGrid& grid) {
  if (grid.dims.empty() || grid.dims.size() > 4) throw InvalidArgument("raw grid: 1..4 dims");
  size_t count = 1;
  for (int d : grid.dims) {
    if (d <= 0 || d > 0xFFFF) throw InvalidArgument("raw grid: dim out of range");
    count *= static_cast<size_t>(d);
  }
  const size_t elem = grid.dtype == kDtypeF32 ? 4 : 1;
  if (grid.bytes.size() != count * elem) throw InvalidArgument("raw grid: payload size mismatch");

  std::vector<uint8_t> header(16, 0);
  std::memcpy(header.data(), "PCTA", 4);
  header[4] = kGridFormatVersion;
  header[5] = grid.dtype;
  header[6] = static_cast<uint8_t>(grid.dims.size());
  for (size_t k = 0; k < grid.dims.size(); ++k) {
    header[8 + 2 * k] = static_cast<uint8_t>(grid.dims[k] & 0xFF);
    header[9 + 2 * k] = static_cast<uint8_t>((grid.dims[k] >> 8) & 0xFF);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(header.data()), 16);
  out.write(reinterpret_cast<const char*>(grid.bytes.data()), static_cast<std::streamsize>(grid.bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

RawGrid read_raw_grid(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  uint8_t header[16];
  in.read(reinterpret_cast<char*>(header), 16);
  if (!in || std::memcmp(header, "PCTA", 4) != 0)
    throw LoadError("bad grid header in '" + path.string() + "'");
  if (header[4] != kGridFormatVersion)
    throw LoadError("unsupported grid format_version in '" + path.string() + "'");
  RawGrid grid;
  grid.dtype = header[5];
  const int ndim = header[6];
  if ((grid.dtype != kDtypeU8 && grid.dtype != kDtypeF32) || ndim < 1 || ndim > 4)
    throw LoadError("bad grid dtype/ndim in '" + path.string() + "'");
  size_t count = 1;
  for (int k = 0; k < ndim; ++k) {
    const int d = header[8 + 2 * k] | (header[9 + 2 * k] << 8);
    grid.dims.push_back(d);
    count *= static_cast<size_t>(d);
  }
  grid.bytes.resize(count * (grid.dtype == kDtypeF32 ? 4 : 1));
  in.read(reinterpret_cast<char*>(grid.bytes.data()), static_cast<std::streamsize>(grid.bytes.size()));
  if (!in) throw LoadError("truncated grid payload in '" + path.string() + "'");
  return grid;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out << text;
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

}  // namespace pct::io
