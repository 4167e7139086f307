#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "svnerf/compositing.hpp"
#include "svnerf/costvolume.hpp"
#include "svnerf/field.hpp"
#include "svnerf/nn/conv.hpp"

namespace svnerf {

struct ModelConfig {
  int planes = 128;   // D, sweep planes
  int samples = 128;  // N, samples per ray
  int unet_base = 8;
  int downsample = 4;
  FieldConfig field;

  // Full-scale constants.
  static ModelConfig full();
  // Small enough for CI and single-core experiments.
  static ModelConfig tiny();

  // FNV-1a over the architecture-defining keys (everything that changes parameter shapes or wiring).
  std::uint64_t hash() const;
  std::string describe() const;
};

// Everything computed once per (scene, source set): feature maps, sweep, cost and volume.
template <typename T>
struct Encoding {
  SourceSet<T> sources;
  GeometryVolume<T> volume;
  SweepPlan plan;
  WarpedFeatureStack<T> stack;
  Grid<T> cost;
  std::vector<typename nn::FeatureExtractor<T>::Tape> extractor_tapes;
  typename nn::UNet3d<T>::Tape unet_tape;
  bool taped = false;
};

template <typename T>
struct RayTape {
  RayBatch<T> batch;
  SampleFeatures<T> features;
  typename RadianceField<T>::Tape field;
  RenderOutput<T> output;
};

template <typename T>
class Model {
 public:
  Model() = default;
  Model(nn::ParameterStore<T>& store, const ModelConfig& config, std::mt19937_64* rng);

  const ModelConfig& config() const { return cfg_; }
  const RadianceField<T>& field() const { return field_; }

  // sources[0] is the reference view of the cost volume.
  Encoding<T> encode(const nn::ParameterStore<T>& p, std::span<const CameraView> sources, bool keep_tape) const;

  RenderOutput<T> render(const nn::ParameterStore<T>& p, const Encoding<T>& enc, std::span<const Ray> rays,
                         std::mt19937_64* jitter = nullptr, RayTape<T>* tape = nullptr) const;

  // Accumulates parameter gradients for dL/dcolor (rays x 3) and optional dL/ddepth (rays).
  void backward(const nn::ParameterStore<T>& p, const Encoding<T>& enc, const RayTape<T>& tape,
                const Mat<T>& dcolor, const Vec<T>& ddepth, nn::ParameterStore<T>& grads) const;

 private:
  ModelConfig cfg_;
  nn::FeatureExtractor<T> extractor_;
  nn::UNet3d<T> unet_;
  RadianceField<T> field_;
};

}  // namespace svnerf
