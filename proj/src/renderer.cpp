#include "svnerf/renderer.hpp"

#include <algorithm>

#include "svnerf/io.hpp"

namespace svnerf {

std::vector<Ray> image_rays(const Camera& target, double near, double far) {
  const int W = target.intrinsics.width, H = target.intrinsics.height;
  std::vector<Eigen::Vector2d> pixels;
  pixels.reserve(std::size_t(W) * H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) pixels.emplace_back(x, y);
  return generate_rays(target, pixels, near, far);
}

template <typename T>
RenderedImage render_image(const Model<T>& model, const nn::ParameterStore<T>& p, const Encoding<T>& enc,
                           const Camera& target, double near, double far, int chunk) {
  if (chunk < 1) throw DomainError("chunk size must be positive");
  // Whole blocks only, so every ray sees the same row offsets whatever the chunk size.
  chunk = (chunk + kRayBlock - 1) / kRayBlock * kRayBlock;
  const int W = target.intrinsics.width, H = target.intrinsics.height;
  const std::vector<Ray> rays = image_rays(target, near, far);
  const Eigen::Vector3d axis = target.pose.R.row(2).transpose();
  RenderedImage out{Image::image(H, W, 3), Image::image(H, W, 1), Image::image(H, W, 1)};
  for (std::size_t begin = 0; begin < rays.size(); begin += std::size_t(chunk)) {
    const std::size_t end = std::min(rays.size(), begin + std::size_t(chunk));
    const RenderOutput<T> r = model.render(p, enc, std::span<const Ray>(rays).subspan(begin, end - begin));
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t k = i - begin;
      for (int c = 0; c < 3; ++c) out.color.data[i * 3 + c] = float(r.color(k, c));
      out.depth.data[i] = float(double(r.depth[k]) * rays[i].direction.dot(axis));
      out.opacity.data[i] = float(r.opacity[k]);
    }
  }
  return out;
}

template <typename T>
RenderedImage render_image(const Model<T>& model, const nn::ParameterStore<T>& p, std::span<const CameraView> sources,
                           const Camera& target, double near, double far, int chunk) {
  const Encoding<T> enc = model.encode(p, sources, false);
  return render_image(model, p, enc, target, near, far, chunk);
}

void write_rendering(const RenderedImage& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_png(dir / "color.png", r.color);
  write_grid(dir / "depth.bin", r.depth);
  write_png(dir / "opacity.png", r.opacity);
}

template RenderedImage render_image<float>(const Model<float>&, const nn::ParameterStore<float>&,
                                           std::span<const CameraView>, const Camera&, double, double, int);
template RenderedImage render_image<double>(const Model<double>&, const nn::ParameterStore<double>&,
                                            std::span<const CameraView>, const Camera&, double, double, int);
template RenderedImage render_image<float>(const Model<float>&, const nn::ParameterStore<float>&,
                                           const Encoding<float>&, const Camera&, double, double, int);
template RenderedImage render_image<double>(const Model<double>&, const nn::ParameterStore<double>&,
                                            const Encoding<double>&, const Camera&, double, double, int);

}  // namespace svnerf
