#pragma once

#include <filesystem>
#include <span>

#include "svnerf/model.hpp"

namespace svnerf {

struct RenderedImage {
  Image color;    // H x W x 3
  Image depth;    // H x W x 1, camera-frame z-depth of the rendered (expected) ray distance
  Image opacity;  // H x W x 1
};

// Rays through every pixel center of `target`, row-major.
std::vector<Ray> image_rays(const Camera& target, double near, double far);

// Chunk sizes are rounded up to a multiple of this.
inline constexpr int kRayBlock = 64;

// Encodes the sources once, then renders the target in chunks of `chunk` rays.
template <typename T>
RenderedImage render_image(const Model<T>& model, const nn::ParameterStore<T>& p, std::span<const CameraView> sources,
                           const Camera& target, double near, double far, int chunk = 4096);

template <typename T>
RenderedImage render_image(const Model<T>& model, const nn::ParameterStore<T>& p, const Encoding<T>& enc,
                           const Camera& target, double near, double far, int chunk = 4096);

// color.png, depth.bin (grid file) and opacity.png in `dir`.
void write_rendering(const RenderedImage& r, const std::filesystem::path& dir);

}  // namespace svnerf
