#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "svnerf/compositing.hpp"
#include "svnerf/costvolume.hpp"
#include "svnerf/nn/attention.hpp"
#include "svnerf/nn/layers.hpp"

namespace svnerf {

enum class RectifyOrder { GeometryFirst, AppearanceFirst };

// Attention query built from the direction embedding alone (V) or from the normalized
// rendered-depth embedding plus the direction embedding (VD).
enum class QueryComposition { Direction, DepthDirection };

struct FieldConfig {
  int image_channels = 32;     // C1, feature-map channels of the 2D extractor
  int volume_channels = 8;     // channels of the encoded geometry volume
  int radiance_channels = 64;  // C_r
  int attention_dim = 64;
  int attention_heads = 4;
  int hidden = 64;  // hidden width of M1, M3, M4
  nn::FrequencyEmbeddingSpec position = nn::FrequencyEmbeddingSpec::position();
  nn::FrequencyEmbeddingSpec direction = nn::FrequencyEmbeddingSpec::direction();
  nn::FrequencyEmbeddingSpec depth = nn::FrequencyEmbeddingSpec::depth();

  bool geometric_rectification = true;
  bool appearance_rectification = true;
  RectifyOrder order = RectifyOrder::GeometryFirst;
  QueryComposition query = QueryComposition::DepthDirection;

  // Each rectification stage adds its attention output to its input features.
  bool attention_residual = true;
  // The radiance head also receives the per-sample mean appearance feature.
  bool radiance_appearance = true;
  // Mean appearance over the views that see the sample instead of over all views.
  bool visibility_weighted_mean = false;
  CompositeOptions composite;

  int appearance_dim() const { return image_channels + 3; }
  int query_input_dim() const {
    return direction.output_dim() + (query == QueryComposition::DepthDirection ? depth.output_dim() : 0);
  }
  int radiance_input_dim() const {
    return radiance_channels + depth.output_dim() + direction.output_dim() +
           (radiance_appearance ? appearance_dim() : 0);
  }
  bool uses_query() const { return geometric_rectification || appearance_rectification; }
};

// Source views as seen by the field: full-resolution cameras and images plus feature maps.
template <typename T>
struct SourceSet {
  std::vector<Camera> cameras;
  std::vector<Grid<T>> images;    // H x W x 3
  std::vector<Grid<T>> features;  // H/4 x W/4 x C1
  int downsample = 4;
};

// Rays with their samples, ray-major: sample k of ray r is row r * samples + k.
template <typename T>
struct RayBatch {
  int rays = 0;
  int samples = 0;
  std::vector<Eigen::Vector3d> points;
  Mat<T> z;           // rays x samples, distance along the ray
  Mat<T> directions;  // rays x 3, unit
  Vec<T> near, far;   // rays

  static RayBatch from_rays(std::span<const Ray> rays, int samples, std::mt19937_64* jitter = nullptr);
};

template <typename T>
struct AppearanceFeature {
  std::vector<Mat<T>> per_view;                 // M of (samples x (C1 + 3))
  std::vector<std::vector<char>> in_bounds;     // M of samples
  std::vector<std::vector<Eigen::Vector2d>> pixels;  // M of samples, full-resolution pixel coords
  Mat<T> mean;                                  // samples x (C1 + 3)
  std::vector<T> normalizer;                    // per sample, 1 / (number of views averaged)
};

// Everything the field computes for a batch, per sample unless noted.
template <typename T>
struct SampleFeatures {
  Mat<T> ndc;              // samples x 3, reference NDC coordinates
  Mat<T> volume_features;  // s, samples x volume_channels
  Mat<T> radiance;         // F_r, samples x C_r
  Mat<T> sigma;            // rays x samples
  Vec<T> depth;            // D-hat per ray
  Vec<T> depth_normalized; // per ray
  Mat<T> query;            // per ray
  AppearanceFeature<T> appearance;
  Mat<T> corrected;        // F_c, samples x C_r
  Mat<T> final_features;   // F, samples x C_r
  Mat<T> color;            // c, samples x 3
};

template <typename T>
class RadianceField {
 public:
  struct StageTape {
    bool active = false;
    typename nn::MultiHeadAttention<T>::Tape attention;
  };

  struct Tape {
    std::vector<TrilinearTap> volume_taps;
    Mat<T> m1_input;
    typename nn::Mlp<T>::Tape m1, m2, m3, m4;
    Mat<T> sigma_raw;  // samples x 1
    RayWeights<T> depth_weights;
    Mat<T> delta;
    Mat<T> depth_embedding, direction_embedding;
    std::vector<char> depth_clamped;
    StageTape first, second;
    Mat<T> stage_input_first, stage_input_second;
    Mat<T> m4_input;
  };

  struct Grads {
    Grid<T> volume;                  // dL/dV
    std::vector<Grid<T>> features;   // dL/dF_i
  };

  RadianceField() = default;
  RadianceField(nn::ParameterStore<T>& store, const FieldConfig& config, std::mt19937_64* rng);

  const FieldConfig& config() const { return cfg_; }

  // F_r = M1(E(ndc(x)) ++ s(x)).
  Mat<T> radiance_features(const nn::ParameterStore<T>& p, const GeometryVolume<T>& V,
                           std::span<const Eigen::Vector3d> points, SampleFeatures<T>& out, Tape* tape) const;
  // Backward of radiance_features; returns dL/dx per point when `want_dx`.
  std::vector<Eigen::Vector3d> radiance_features_backward(const nn::ParameterStore<T>& p, const GeometryVolume<T>& V,
                                                          std::span<const Eigen::Vector3d> points,
                                                          const SampleFeatures<T>& f, const Tape& tape,
                                                          const Mat<T>& dradiance, nn::ParameterStore<T>& grads,
                                                          Grid<T>& dV, bool want_dx) const;

  // sigma = softplus(M2(F_r)), reshaped to rays x samples.
  Mat<T> density(const nn::ParameterStore<T>& p, const Mat<T>& radiance, int rays, Tape* tape) const;

  // Q = M3(E(normalized depth) ++ E(d)) or M3(E(d)) for the direction-only composition.
  Mat<T> build_query(const nn::ParameterStore<T>& p, const Vec<T>& depth, const Mat<T>& directions,
                     const Vec<T>& near, const Vec<T>& far, SampleFeatures<T>* out, Tape* tape) const;

  // One attention stage with per-ray query broadcast over the ray's samples:
  // keys are per-sample `keys`, values are `values`.
  Mat<T> geometric_rectify(const nn::ParameterStore<T>& p, const Mat<T>& radiance, const Mat<T>& volume_features,
                           const Mat<T>& query, int rays, StageTape* tape) const;
  Mat<T> appearance_rectify(const nn::ParameterStore<T>& p, const Mat<T>& corrected, const Mat<T>& appearance,
                            const Mat<T>& query, int rays, StageTape* tape) const;

  // c = sigmoid(M4(F ++ E(normalized depth) ++ E(d) [++ F_a])).
  Mat<T> radiance(const nn::ParameterStore<T>& p, const Mat<T>& final_features, const Mat<T>& depth_embedding,
                  const Mat<T>& direction_embedding, const Mat<T>* appearance, int samples_per_ray,
                  Tape* tape) const;

  SampleFeatures<T> forward(const nn::ParameterStore<T>& p, const RayBatch<T>& batch, const GeometryVolume<T>& V,
                            const SourceSet<T>& sources, Tape* tape = nullptr) const;

  // dcolor: samples x 3, dsigma: rays x samples (both from the compositor).
  Grads backward(const nn::ParameterStore<T>& p, const RayBatch<T>& batch, const GeometryVolume<T>& V,
                 const SourceSet<T>& sources, const SampleFeatures<T>& f, const Tape& tape, const Mat<T>& dcolor,
                 const Mat<T>& dsigma, nn::ParameterStore<T>& grads) const;

  const nn::MultiHeadAttention<T>* geometric_attention() const { return geo_ ? &*geo_ : nullptr; }
  const nn::MultiHeadAttention<T>* appearance_attention() const { return app_ ? &*app_ : nullptr; }

 private:
  Mat<T> stage(const nn::ParameterStore<T>& p, const nn::MultiHeadAttention<T>& attn, const Mat<T>& values,
               const Mat<T>& keys, const Mat<T>& query, int rays, StageTape* tape) const;
  // Returns dL/dvalues; accumulates dL/dkeys and dL/dquery.
  Mat<T> stage_backward(const nn::ParameterStore<T>& p, const nn::MultiHeadAttention<T>& attn, const StageTape& t,
                        const Mat<T>& dout, int rays, int samples, Mat<T>& dkeys, Mat<T>& dquery,
                        nn::ParameterStore<T>& grads) const;

  FieldConfig cfg_;
  nn::Mlp<T> m1_, m2_, m3_, m4_;
  std::optional<nn::MultiHeadAttention<T>> geo_, app_;
};

// Per-sample reprojected source features (F_i at pixel / downsample ++ I_i at pixel); views that
// do not see the sample contribute zeros.
template <typename T>
AppearanceFeature<T> appearance_features(std::span<const Eigen::Vector3d> points, const SourceSet<T>& sources,
                                         bool visibility_weighted = false);

// Accumulates dL/dF_i for the feature-map part of dL/dmean.
template <typename T>
void appearance_features_backward(const AppearanceFeature<T>& a, const SourceSet<T>& sources, const Mat<T>& dmean,
                                  std::vector<Grid<T>>& dfeatures);

}  // namespace svnerf
