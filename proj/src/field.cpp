#include "svnerf/field.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace svnerf {

namespace {

// Adds `vals` into the four bilinear taps of an edge-clamped lookup at (u, v).
template <typename T>
void bilinear_scatter(Grid<T>& map, double u, double v, const T* vals, int count) {
  u = std::clamp(u, 0.0, double(map.width - 1));
  v = std::clamp(v, 0.0, double(map.height - 1));
  const int x0 = std::min(int(u), map.width - 1), y0 = std::min(int(v), map.height - 1);
  const int x1 = std::min(x0 + 1, map.width - 1), y1 = std::min(y0 + 1, map.height - 1);
  const T ax = T(u - x0), ay = T(v - y0);
  const T w[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  T* dst[4] = {map.voxel(0, y0, x0), map.voxel(0, y0, x1), map.voxel(0, y1, x0), map.voxel(0, y1, x1)};
  for (int k = 0; k < 4; ++k)
    for (int c = 0; c < count; ++c) dst[k][c] += w[k] * vals[c];
}

// Repeats each row of `per_ray` `samples` times.
template <typename T>
Mat<T> broadcast_rows(const Mat<T>& per_ray, int samples) {
  Mat<T> out(per_ray.rows() * samples, per_ray.cols());
  for (Eigen::Index r = 0; r < per_ray.rows(); ++r)
    out.middleRows(r * samples, samples).rowwise() = per_ray.row(r);
  return out;
}

template <typename T>
Mat<T> sum_rows(const Mat<T>& per_sample, int samples) {
  const Eigen::Index R = per_sample.rows() / samples;
  Mat<T> out(R, per_sample.cols());
  for (Eigen::Index r = 0; r < R; ++r) out.row(r) = column_sums(per_sample.middleRows(r * samples, samples));
  return out;
}

}  // namespace

template <typename T>
RayBatch<T> RayBatch<T>::from_rays(std::span<const Ray> rays, int samples, std::mt19937_64* jitter) {
  RayBatch<T> b;
  b.rays = int(rays.size());
  b.samples = samples;
  b.points.reserve(rays.size() * samples);
  b.z.resize(b.rays, samples);
  b.directions.resize(b.rays, 3);
  b.near.resize(b.rays);
  b.far.resize(b.rays);
  for (int r = 0; r < b.rays; ++r) {
    const RaySamples s = sample_ray(rays[r], samples, jitter);
    for (int k = 0; k < samples; ++k) {
      b.z(r, k) = T(s.depths[k]);
      b.points.push_back(s.points[k]);
    }
    for (int a = 0; a < 3; ++a) b.directions(r, a) = T(rays[r].direction[a]);
    b.near[r] = T(rays[r].near);
    b.far[r] = T(rays[r].far);
  }
  return b;
}

template <typename T>
RadianceField<T>::RadianceField(nn::ParameterStore<T>& store, const FieldConfig& config, std::mt19937_64* rng)
    : cfg_(config) {
  using nn::Activation;
  const int Cr = cfg_.radiance_channels;
  m1_ = nn::Mlp<T>(store, "field.m1", {{cfg_.position.output_dim() + cfg_.volume_channels, cfg_.hidden, Cr}}, rng);
  m2_ = nn::Mlp<T>(store, "field.m2", {{Cr, 1}}, rng);
  if (cfg_.uses_query())
    m3_ = nn::Mlp<T>(store, "field.m3", {{cfg_.query_input_dim(), cfg_.hidden, cfg_.attention_dim}}, rng);
  m4_ = nn::Mlp<T>(store, "field.m4",
                   {{cfg_.radiance_input_dim(), cfg_.hidden, 3}, Activation::Relu, Activation::Sigmoid}, rng);
  nn::AttentionConfig a;
  a.heads = cfg_.attention_heads;
  a.model_dim = cfg_.attention_dim;
  a.query_dim = cfg_.attention_dim;
  a.value_dim = Cr;
  a.output_dim = Cr;
  if (cfg_.geometric_rectification) {
    a.key_dim = cfg_.volume_channels;
    geo_.emplace(store, "field.geo_attn", a, rng);
  }
  if (cfg_.appearance_rectification) {
    a.key_dim = cfg_.appearance_dim();
    app_.emplace(store, "field.app_attn", a, rng);
  }
}

template <typename T>
Mat<T> RadianceField<T>::radiance_features(const nn::ParameterStore<T>& p, const GeometryVolume<T>& V,
                                           std::span<const Eigen::Vector3d> points, SampleFeatures<T>& out,
                                           Tape* tape) const {
  if (V.values.channels != cfg_.volume_channels)
    throw DomainError(fmt::format("volume has {} channels, field expects {}", V.values.channels,
                                  cfg_.volume_channels));
  const Eigen::Index S = Eigen::Index(points.size());
  const int Cv = cfg_.volume_channels;
  out.ndc.resize(S, 3);
  out.volume_features.resize(S, Cv);
  std::vector<TrilinearTap> taps(S);
  for (Eigen::Index i = 0; i < S; ++i) {
    const Eigen::Vector3d ndc = V.safe_ndc(points[i]);
    for (int a = 0; a < 3; ++a) out.ndc(i, a) = T(ndc[a]);
    taps[i] = trilinear_tap(V, points[i]);
    trilinear_gather(V, taps[i], out.volume_features.data() + i * Cv);
  }
  Mat<T> input(S, cfg_.position.output_dim() + Cv);
  input.leftCols(cfg_.position.output_dim()) = nn::frequency_embed(out.ndc, cfg_.position);
  input.rightCols(Cv) = out.volume_features;
  out.radiance = m1_.forward(p, input, tape ? &tape->m1 : nullptr);
  if (tape) {
    tape->volume_taps = std::move(taps);
    tape->m1_input = std::move(input);
  }
  return out.radiance;
}

template <typename T>
std::vector<Eigen::Vector3d> RadianceField<T>::radiance_features_backward(
    const nn::ParameterStore<T>& p, const GeometryVolume<T>& V, std::span<const Eigen::Vector3d> points,
    const SampleFeatures<T>& f, const Tape& tape, const Mat<T>& dradiance, nn::ParameterStore<T>& grads, Grid<T>& dV,
    bool want_dx) const {
  const Mat<T> dinput = m1_.backward(p, tape.m1, dradiance, grads);
  const int Cv = cfg_.volume_channels;
  const int E = cfg_.position.output_dim();
  const Mat<T> ds = dinput.rightCols(Cv);
  std::vector<Eigen::Vector3d> dx;
  Mat<T> dndc_embed;
  if (want_dx) {
    dx.resize(points.size());
    dndc_embed = nn::frequency_embed_backward(f.ndc, Mat<T>(dinput.leftCols(E)), cfg_.position);
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    Eigen::Vector3d dxi;
    trilinear_sample_backward(V, points[i], tape.volume_taps[i], ds.data() + i * Cv, dV, want_dx ? &dxi : nullptr);
    if (want_dx) {
      Eigen::Vector3d dn(double(dndc_embed(i, 0)), double(dndc_embed(i, 1)), double(dndc_embed(i, 2)));
      dx[i] = dxi + V.ndc_jacobian(points[i]).transpose() * dn;
    }
  }
  return dx;
}

template <typename T>
Mat<T> RadianceField<T>::density(const nn::ParameterStore<T>& p, const Mat<T>& radiance, int rays, Tape* tape) const {
  Mat<T> raw = m2_.forward(p, radiance, tape ? &tape->m2 : nullptr);
  const int N = int(raw.rows() / rays);
  Mat<T> sigma(rays, N);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) sigma(i / N, i % N) = nn::softplus(raw(i, 0));
  if (tape) tape->sigma_raw = std::move(raw);
  return sigma;
}

template <typename T>
Mat<T> RadianceField<T>::build_query(const nn::ParameterStore<T>& p, const Vec<T>& depth, const Mat<T>& directions,
                                     const Vec<T>& near, const Vec<T>& far, SampleFeatures<T>* out,
                                     Tape* tape) const {
  const Eigen::Index R = depth.size();
  Mat<T> dn(R, 1);
  std::vector<char> clamped(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    if (!(far[r] > near[r])) throw DomainError(fmt::format("ray far {} must exceed near {}", far[r], near[r]));
    const T v = (depth[r] - near[r]) / (far[r] - near[r]);
    clamped[r] = !(v > 0 && v < 1);
    dn(r, 0) = std::clamp(v, T(0), T(1));
  }
  Mat<T> ed = nn::frequency_embed(dn, cfg_.depth);
  Mat<T> edir = nn::frequency_embed(directions, cfg_.direction);
  Mat<T> q;
  if (cfg_.uses_query()) {
    Mat<T> qin(R, cfg_.query_input_dim());
    if (cfg_.query == QueryComposition::DepthDirection) {
      qin << ed, edir;
    } else {
      qin = edir;
    }
    q = m3_.forward(p, qin, tape ? &tape->m3 : nullptr);
  }
  if (out) {
    out->depth_normalized = dn.col(0);
    out->query = q;
  }
  if (tape) {
    tape->depth_embedding = std::move(ed);
    tape->direction_embedding = std::move(edir);
    tape->depth_clamped = std::move(clamped);
  }
  return q;
}

template <typename T>
Mat<T> RadianceField<T>::stage(const nn::ParameterStore<T>& p, const nn::MultiHeadAttention<T>& attn,
                               const Mat<T>& values, const Mat<T>& keys, const Mat<T>& query, int rays,
                               StageTape* tape) const {
  if (values.rows() != keys.rows() || values.rows() % rays != 0 || query.rows() != rays)
    throw DomainError("rectification inputs disagree on ray/sample counts");
  const int N = int(values.rows() / rays);
  const Mat<T> pooled =
      attn.forward(p, query, keys, values, rays, tape ? &tape->attention : nullptr);
  if (tape) tape->active = true;
  Mat<T> out = broadcast_rows(pooled, N);
  if (cfg_.attention_residual) out += values;
  return out;
}

template <typename T>
Mat<T> RadianceField<T>::stage_backward(const nn::ParameterStore<T>& p, const nn::MultiHeadAttention<T>& attn,
                                        const StageTape& t, const Mat<T>& dout, int rays, int samples, Mat<T>& dkeys,
                                        Mat<T>& dquery, nn::ParameterStore<T>& grads) const {
  (void)rays;
  const Mat<T> dpooled = sum_rows(dout, samples);
  auto g = attn.backward(p, t.attention, dpooled, grads);
  dkeys += g.dk;
  dquery += g.dq;
  if (cfg_.attention_residual) g.dv += dout;
  return std::move(g.dv);
}

template <typename T>
Mat<T> RadianceField<T>::geometric_rectify(const nn::ParameterStore<T>& p, const Mat<T>& radiance,
                                           const Mat<T>& volume_features, const Mat<T>& query, int rays,
                                           StageTape* tape) const {
  if (!geo_) return radiance;
  return stage(p, *geo_, radiance, volume_features, query, rays, tape);
}

template <typename T>
Mat<T> RadianceField<T>::appearance_rectify(const nn::ParameterStore<T>& p, const Mat<T>& corrected,
                                            const Mat<T>& appearance, const Mat<T>& query, int rays,
                                            StageTape* tape) const {
  if (!app_) return corrected;
  return stage(p, *app_, corrected, appearance, query, rays, tape);
}

template <typename T>
Mat<T> RadianceField<T>::radiance(const nn::ParameterStore<T>& p, const Mat<T>& final_features,
                                  const Mat<T>& depth_embedding, const Mat<T>& direction_embedding,
                                  const Mat<T>* appearance, int samples_per_ray, Tape* tape) const {
  const Eigen::Index S = final_features.rows();
  Mat<T> input(S, cfg_.radiance_input_dim());
  const int Cr = cfg_.radiance_channels, De = cfg_.depth.output_dim(), Dd = cfg_.direction.output_dim();
  input.leftCols(Cr) = final_features;
  input.middleCols(Cr, De) = broadcast_rows(depth_embedding, samples_per_ray);
  input.middleCols(Cr + De, Dd) = broadcast_rows(direction_embedding, samples_per_ray);
  if (cfg_.radiance_appearance) {
    if (!appearance) throw DomainError("radiance head needs appearance features");
    input.rightCols(cfg_.appearance_dim()) = *appearance;
  }
  Mat<T> c = m4_.forward(p, input, tape ? &tape->m4 : nullptr);
  if (tape) tape->m4_input = std::move(input);
  return c;
}

template <typename T>
SampleFeatures<T> RadianceField<T>::forward(const nn::ParameterStore<T>& p, const RayBatch<T>& batch,
                                            const GeometryVolume<T>& V, const SourceSet<T>& sources,
                                            Tape* tape) const {
  const int R = batch.rays, N = batch.samples;
  SampleFeatures<T> f;
  radiance_features(p, V, batch.points, f, tape);
  f.sigma = density(p, f.radiance, R, tape);

  Mat<T> delta = sample_intervals(batch.z, cfg_.composite.unit_intervals);
  RayWeights<T> rw = transmittance_weights(f.sigma, delta);
  f.depth = row_sums(rw.weights.cwiseProduct(batch.z));

  Tape local;
  Tape& t = tape ? *tape : local;
  build_query(p, f.depth, batch.directions, batch.near, batch.far, &f, &t);

  const bool need_appearance = cfg_.appearance_rectification || cfg_.radiance_appearance;
  if (need_appearance) f.appearance = appearance_features(batch.points, sources, cfg_.visibility_weighted_mean);

  const bool geo_first = cfg_.order == RectifyOrder::GeometryFirst;
  t.first = {};
  t.second = {};
  t.stage_input_first = f.radiance;
  if (geo_first) {
    f.corrected = geometric_rectify(p, f.radiance, f.volume_features, f.query, R, &t.first);
    f.final_features = appearance_rectify(p, f.corrected, f.appearance.mean, f.query, R, &t.second);
  } else {
    f.corrected = appearance_rectify(p, f.radiance, f.appearance.mean, f.query, R, &t.first);
    f.final_features = geometric_rectify(p, f.corrected, f.volume_features, f.query, R, &t.second);
  }
  f.color = radiance(p, f.final_features, t.depth_embedding, t.direction_embedding,
                     need_appearance ? &f.appearance.mean : nullptr, N, &t);
  if (tape) {
    tape->depth_weights = std::move(rw);
    tape->delta = std::move(delta);
  }
  return f;
}

template <typename T>
typename RadianceField<T>::Grads RadianceField<T>::backward(const nn::ParameterStore<T>& p, const RayBatch<T>& batch,
                                                            const GeometryVolume<T>& V, const SourceSet<T>& sources,
                                                            const SampleFeatures<T>& f, const Tape& t,
                                                            const Mat<T>& dcolor, const Mat<T>& dsigma,
                                                            nn::ParameterStore<T>& grads) const {
  const int R = batch.rays, N = batch.samples;
  const Eigen::Index S = Eigen::Index(R) * N;
  const int Cr = cfg_.radiance_channels, De = cfg_.depth.output_dim();

  Grads out;
  out.volume = Grid<T>(V.values.depth, V.values.height, V.values.width, V.values.channels);
  for (const auto& fm : sources.features) out.features.emplace_back(1, fm.height, fm.width, fm.channels);

  const Mat<T> din4 = m4_.backward(p, t.m4, dcolor, grads);
  Mat<T> dfeat = din4.leftCols(Cr);
  Mat<T> ddepth_embed = sum_rows(Mat<T>(din4.middleCols(Cr, De)), N);
  Mat<T> dappearance = Mat<T>::Zero(S, cfg_.appearance_dim());
  if (cfg_.radiance_appearance) dappearance += din4.rightCols(cfg_.appearance_dim());
  Mat<T> dvolume_features = Mat<T>::Zero(S, cfg_.volume_channels);
  Mat<T> dquery = Mat<T>::Zero(R, cfg_.uses_query() ? cfg_.attention_dim : 1);

  const bool geo_first = cfg_.order == RectifyOrder::GeometryFirst;
  auto run_stage_backward = [&](bool geometric, const StageTape& st) {
    if (!st.active) return;
    if (geometric) {
      dfeat = stage_backward(p, *geo_, st, dfeat, R, N, dvolume_features, dquery, grads);
    } else {
      dfeat = stage_backward(p, *app_, st, dfeat, R, N, dappearance, dquery, grads);
    }
  };
  run_stage_backward(!geo_first, t.second);
  run_stage_backward(geo_first, t.first);
  Mat<T> dradiance = std::move(dfeat);

  if (cfg_.uses_query() && (t.first.active || t.second.active)) {
    const Mat<T> dqin = m3_.backward(p, t.m3, dquery, grads);
    if (cfg_.query == QueryComposition::DepthDirection) ddepth_embed += dqin.leftCols(De);
  }

  // Normalized rendered depth -> rendered depth -> weights -> sigma.
  Mat<T> dn(R, 1);
  for (int r = 0; r < R; ++r) dn(r, 0) = f.depth_normalized[r];
  const Mat<T> ddn = nn::frequency_embed_backward(dn, ddepth_embed, cfg_.depth);
  Mat<T> dweights(R, N);
  for (int r = 0; r < R; ++r) {
    const T dD = t.depth_clamped[r] ? T(0) : ddn(r, 0) / (batch.far[r] - batch.near[r]);
    dweights.row(r) = dD * batch.z.row(r);
  }
  Mat<T> dsigma_total = dsigma + transmittance_weights_backward(t.depth_weights, f.sigma, t.delta, dweights);

  Mat<T> draw(S, 1);
  for (Eigen::Index i = 0; i < S; ++i) draw(i, 0) = dsigma_total(i / N, i % N) * nn::sigmoid(t.sigma_raw(i, 0));
  dradiance += m2_.backward(p, t.m2, draw, grads);

  // Volume features reach V both through M1's input and through the geometric keys.
  Mat<T> dm1_extra = dvolume_features;
  const Mat<T> dinput = m1_.backward(p, t.m1, dradiance, grads);
  const int Cv = cfg_.volume_channels;
  dm1_extra += dinput.rightCols(Cv);
  for (Eigen::Index i = 0; i < S; ++i)
    trilinear_sample_backward(V, batch.points[i], t.volume_taps[i], dm1_extra.data() + i * Cv, out.volume);

  if (cfg_.appearance_rectification || cfg_.radiance_appearance)
    appearance_features_backward(f.appearance, sources, dappearance, out.features);
  return out;
}

template <typename T>
AppearanceFeature<T> appearance_features(std::span<const Eigen::Vector3d> points, const SourceSet<T>& sources,
                                         bool visibility_weighted) {
  const int M = int(sources.cameras.size());
  if (M == 0 || int(sources.features.size()) != M || int(sources.images.size()) != M)
    throw DomainError("appearance features need matching cameras, images and feature maps");
  const int C1 = sources.features.front().channels;
  const int D = C1 + 3;
  const Eigen::Index S = Eigen::Index(points.size());
  AppearanceFeature<T> a;
  a.mean = Mat<T>::Zero(S, D);
  a.normalizer.assign(S, T(1) / T(M));
  std::vector<int> visible(S, 0);
  for (int m = 0; m < M; ++m) {
    Mat<T> pv = Mat<T>::Zero(S, D);
    std::vector<char> inb(S, 0);
    std::vector<Eigen::Vector2d> px(S, Eigen::Vector2d::Zero());
    const double scale = 1.0 / sources.downsample;
    for (Eigen::Index i = 0; i < S; ++i) {
      const Reprojection rp = reproject_point(points[i], sources.cameras[m]);
      if (!rp.in_bounds) continue;
      inb[i] = 1;
      px[i] = rp.pixel;
      ++visible[i];
      T* row = pv.data() + i * D;
      bilinear_lookup(sources.features[m], rp.pixel.x() * scale, rp.pixel.y() * scale, row);
      bilinear_lookup(sources.images[m], rp.pixel.x(), rp.pixel.y(), row + C1);
    }
    a.mean += pv;
    a.per_view.push_back(std::move(pv));
    a.in_bounds.push_back(std::move(inb));
    a.pixels.push_back(std::move(px));
  }
  if (visibility_weighted) {
    for (Eigen::Index i = 0; i < S; ++i) a.normalizer[i] = visible[i] ? T(1) / T(visible[i]) : T(0);
  }
  for (Eigen::Index i = 0; i < S; ++i) a.mean.row(i) *= a.normalizer[i];
  return a;
}

template <typename T>
void appearance_features_backward(const AppearanceFeature<T>& a, const SourceSet<T>& sources, const Mat<T>& dmean,
                                  std::vector<Grid<T>>& dfeatures) {
  const int M = int(a.per_view.size());
  const int C1 = sources.features.front().channels;
  const double scale = 1.0 / sources.downsample;
  std::vector<T> row(C1);
  for (int m = 0; m < M; ++m) {
    for (Eigen::Index i = 0; i < dmean.rows(); ++i) {
      if (!a.in_bounds[m][i]) continue;
      for (int c = 0; c < C1; ++c) row[c] = dmean(i, c) * a.normalizer[i];
      bilinear_scatter(dfeatures[m], a.pixels[m][i].x() * scale, a.pixels[m][i].y() * scale, row.data(), C1);
    }
  }
}

template struct RayBatch<float>;
template struct RayBatch<double>;
template class RadianceField<float>;
template class RadianceField<double>;
template AppearanceFeature<float> appearance_features<float>(std::span<const Eigen::Vector3d>,
                                                             const SourceSet<float>&, bool);
template AppearanceFeature<double> appearance_features<double>(std::span<const Eigen::Vector3d>,
                                                               const SourceSet<double>&, bool);
template void appearance_features_backward<float>(const AppearanceFeature<float>&, const SourceSet<float>&,
                                                  const Mat<float>&, std::vector<Grid<float>>&);
template void appearance_features_backward<double>(const AppearanceFeature<double>&, const SourceSet<double>&,
                                                   const Mat<double>&, std::vector<Grid<double>>&);

}  // namespace svnerf
