#include "svnerf/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <vector>

#include <fmt/format.h>

namespace svnerf {

namespace fs = std::filesystem;

void write_atomically(const fs::path& path, const std::function<void(std::ostream&)>& writer) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::random_device rd;
  const fs::path tmp = path.string() + fmt::format(".tmp{:08x}", rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot open {} for writing", tmp.string()));
    writer(out);
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw DataError(fmt::format("write to {} failed", tmp.string()));
    }
  }
  fs::rename(tmp, path);
}

void write_text_atomically(const fs::path& path, const std::string& text) {
  write_atomically(path, [&](std::ostream& out) { out << text; });
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  *err = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

void png_write_fn(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::ostream*>(png_get_io_ptr(png));
  out->write(reinterpret_cast<const char*>(data), std::streamsize(len));
}

void png_flush_fn(png_structp) {}

}  // namespace

Image read_png(const fs::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError(fmt::format("cannot open image {}", path.string()));
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw DataError(fmt::format("{} is not a PNG file", path.string()));

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw DataError("libpng initialization failed");
  std::vector<png_bytep> rows;
  std::vector<unsigned char> pixels;
  Image img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(fmt::format("corrupt PNG {}: {}", path.string(), err));
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte bits = png_get_bit_depth(png, info);
  if (bits == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bits < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != std::size_t(w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(fmt::format("unsupported PNG layout in {}", path.string()));
  }
  pixels.resize(stride * h);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img = Image::image(h, w, 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = float(pixels[i]) / 255.0f;
  return img;
}

void write_png(const fs::path& path, const Image& image) {
  if (image.depth != 1 || (image.channels != 3 && image.channels != 1))
    throw DomainError("write_png expects an H x W x 3 or H x W x 1 image");
  const int w = image.width, h = image.height;
  std::vector<unsigned char> pixels(std::size_t(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = image(y, x, image.channels == 3 ? c : 0);
        const float q = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
        pixels[(std::size_t(y) * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(q * 255.0f));
      }
  write_atomically(path, [&](std::ostream& out) {
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) throw DataError("libpng initialization failed");
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = pixels.data() + std::size_t(y) * w * 3;
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw DataError(fmt::format("PNG encoding failed: {}", err));
    }
    png_set_write_fn(png, &out, png_write_fn, png_flush_fn);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  });
}

namespace {

constexpr char kGridMagic[8] = {'S', 'V', 'G', 'R', 'I', 'D', '0', '1'};

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const fs::path& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw DataError(fmt::format("truncated grid {}", path.string()));
  return v;
}

}  // namespace

Image read_grid(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open grid {}", path.string()));
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kGridMagic, 8) != 0)
    throw DataError(fmt::format("{} is not a grid file", path.string()));
  const auto h = get<std::int32_t>(in, path), w = get<std::int32_t>(in, path), c = get<std::int32_t>(in, path);
  const auto dtype = get<std::int32_t>(in, path);
  if (dtype != 1 || h < 0 || w < 0 || c <= 0 || std::int64_t(h) * w * c > (std::int64_t(1) << 31))
    throw DataError(fmt::format("unsupported grid header in {}", path.string()));
  Image g = Image::image(h, w, c);
  if (!in.read(reinterpret_cast<char*>(g.data.data()), std::streamsize(g.data.size() * sizeof(float))))
    throw DataError(fmt::format("truncated grid {}", path.string()));
  return g;
}

void write_grid(const fs::path& path, const Image& grid) {
  if (grid.depth != 1) throw DomainError("write_grid expects a 2D grid");
  write_atomically(path, [&](std::ostream& out) {
    out.write(kGridMagic, 8);
    put<std::int32_t>(out, grid.height);
    put<std::int32_t>(out, grid.width);
    put<std::int32_t>(out, grid.channels);
    put<std::int32_t>(out, 1);
    out.write(reinterpret_cast<const char*>(grid.data.data()), std::streamsize(grid.data.size() * sizeof(float)));
  });
}

}  // namespace svnerf
