#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>

#include "svnerf/tensor.hpp"

namespace svnerf {

// Writes through `writer` into a sibling temporary file, then renames it over `path`.
void write_atomically(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);
void write_text_atomically(const std::filesystem::path& path, const std::string& text);

// 8-bit RGB PNG <-> H x W x 3 image in [0, 1]. Grey and RGBA inputs are converted.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// Float grid file: "SVGRID01" magic, int32 height, width, channels, int32 dtype (1 = float32),
// then height * width * channels little-endian floats in row-major channels-last order.
Image read_grid(const std::filesystem::path& path);
void write_grid(const std::filesystem::path& path, const Image& grid);

}  // namespace svnerf
