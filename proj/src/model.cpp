#include "svnerf/model.hpp"

#include <fmt/format.h>

namespace svnerf {

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.planes = 32;
  c.samples = 32;
  c.unet_base = 8;
  c.field.image_channels = 8;
  c.field.volume_channels = 8;
  c.field.radiance_channels = 32;
  c.field.attention_dim = 32;
  c.field.attention_heads = 4;
  c.field.hidden = 64;
  return c;
}

std::string ModelConfig::describe() const {
  const FieldConfig& f = field;
  return fmt::format(
      "planes={} unet_base={} downsample={} image_channels={} volume_channels={} radiance_channels={} "
      "attention_dim={} attention_heads={} hidden={} geometric={} appearance={} order={} query={} residual={} "
      "radiance_appearance={}",
      planes, unet_base, downsample, f.image_channels, f.volume_channels, f.radiance_channels, f.attention_dim,
      f.attention_heads, f.hidden, int(f.geometric_rectification), int(f.appearance_rectification),
      f.order == RectifyOrder::GeometryFirst ? "ga" : "ag", f.query == QueryComposition::DepthDirection ? "vd" : "v",
      int(f.attention_residual), int(f.radiance_appearance));
}

std::uint64_t ModelConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : describe()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
Model<T>::Model(nn::ParameterStore<T>& store, const ModelConfig& config, std::mt19937_64* rng) : cfg_(config) {
  if (cfg_.planes % nn::UNet3d<T>::kDownsample != 0)
    throw ConfigError(fmt::format("planes ({}) must be a multiple of {}", cfg_.planes, nn::UNet3d<T>::kDownsample));
  if (cfg_.samples < 2) throw ConfigError("samples must be at least 2");
  extractor_ = nn::FeatureExtractor<T>(store, "extractor", cfg_.field.image_channels, rng);
  unet_ = nn::UNet3d<T>(store, "unet", cfg_.field.image_channels, cfg_.unet_base, cfg_.field.volume_channels, rng);
  field_ = RadianceField<T>(store, cfg_.field, rng);
}

template <typename T>
Encoding<T> Model<T>::encode(const nn::ParameterStore<T>& p, std::span<const CameraView> sources,
                             bool keep_tape) const {
  if (sources.size() < 2) throw DomainError("encoding needs at least two source views");
  Encoding<T> enc;
  enc.taped = keep_tape;
  enc.sources.downsample = cfg_.downsample;
  if (keep_tape) enc.extractor_tapes.resize(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const CameraView& v = sources[i];
    enc.sources.cameras.push_back(v.camera);
    if constexpr (std::is_same_v<T, float>) {
      enc.sources.images.push_back(v.image);
    } else {
      enc.sources.images.push_back(v.image.template cast<T>());
    }
    enc.sources.features.push_back(
        extractor_.forward(p, enc.sources.images.back(), keep_tape ? &enc.extractor_tapes[i] : nullptr));
  }
  const CameraView& ref = sources.front();
  const Grid<T>& f0 = enc.sources.features.front();
  const SweepPlaneSet planes = SweepPlaneSet::uniform(0, ref.near, ref.far, cfg_.planes);
  enc.plan = make_sweep_plan(enc.sources.cameras, 0, planes, f0.height, f0.width, cfg_.downsample);
  enc.stack = build_plane_sweep<T>(enc.sources.features, enc.plan);
  enc.cost = variance_cost(enc.stack);
  enc.volume = encode_volume(enc.cost, unet_, p, ref.camera, ref.near, ref.far, cfg_.downsample,
                             keep_tape ? &enc.unet_tape : nullptr);
  if (!keep_tape) {
    enc.stack = {};
    enc.cost = {};
  }
  return enc;
}

template <typename T>
RenderOutput<T> Model<T>::render(const nn::ParameterStore<T>& p, const Encoding<T>& enc, std::span<const Ray> rays,
                                 std::mt19937_64* jitter, RayTape<T>* tape) const {
  RayTape<T> local;
  RayTape<T>& t = tape ? *tape : local;
  t.batch = RayBatch<T>::from_rays(rays, cfg_.samples, jitter);
  t.features = field_.forward(p, t.batch, enc.volume, enc.sources, tape ? &t.field : nullptr);
  t.output = composite(t.features.sigma, t.features.color, t.batch.z, cfg_.field.composite);
  return t.output;
}

template <typename T>
void Model<T>::backward(const nn::ParameterStore<T>& p, const Encoding<T>& enc, const RayTape<T>& tape,
                        const Mat<T>& dcolor, const Vec<T>& ddepth, nn::ParameterStore<T>& grads) const {
  if (!enc.taped) throw DomainError("backward needs an encoding built with keep_tape");
  const CompositeGrads<T> cg = composite_backward(tape.output, tape.features.sigma, tape.features.color,
                                                  tape.batch.z, dcolor, ddepth, cfg_.field.composite);
  typename RadianceField<T>::Grads fg = field_.backward(p, tape.batch, enc.volume, enc.sources, tape.features,
                                                         tape.field, cg.dcolor, cg.dsigma, grads);

  const Grid<T> dcost = unet_.backward(p, enc.unet_tape, fg.volume, grads);
  const WarpedFeatureStack<T> dstack = variance_cost_backward(enc.stack, dcost);
  const Grid<T>& f0 = enc.sources.features.front();
  std::vector<Grid<T>> dfeat = build_plane_sweep_backward(enc.plan, dstack, f0.height, f0.width);
  for (std::size_t i = 0; i < dfeat.size(); ++i) {
    if (i < fg.features.size())
      for (std::size_t j = 0; j < dfeat[i].data.size(); ++j) dfeat[i].data[j] += fg.features[i].data[j];
    extractor_.backward(p, enc.extractor_tapes[i], dfeat[i], grads);
  }
}

template class Model<float>;
template class Model<double>;

}  // namespace svnerf
