#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "splice/nn.hpp"
#include "splice/vit.hpp"

namespace testutil {

using namespace splice;

// Small extractor for desk-scale runs: 4-px patches, 2 layers, 32-d tokens.
inline vit::VitConfig tiny_vit_cfg() {
  vit::VitConfig c;
  c.patch_size = 4;
  c.num_layers = 2;
  c.token_dim = 32;
  c.num_heads = 4;
  c.mlp_ratio = 2;
  return c;
}

inline vit::VitModel tiny_vit(std::uint64_t seed = 7) {
  return vit::VitModel::random(tiny_vit_cfg(), seed, 8);
}

/// Smooth deterministic test image: per-channel sinusoid mix plus a little
/// seeded noise, values in [0,1].
inline Tensor synth_image(Index h, Index w, std::uint64_t seed) {
  nn::Rng rng(seed);
  const Scalar fx = rng.uniform(1, 4), fy = rng.uniform(1, 4);
  const Scalar phase = rng.uniform(0, 6.28f);
  Tensor img({3, h, w});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Scalar u = static_cast<Scalar>(x) / static_cast<Scalar>(w);
        const Scalar v = static_cast<Scalar>(y) / static_cast<Scalar>(h);
        Scalar val = 0.5f + 0.35f * std::sin(6.28f * (fx * u + 0.3f * c) +
                                             phase) *
                                std::cos(6.28f * fy * v + 0.5f * c);
        val += rng.normal(0.02f);
        img[(c * h + y) * w + x] = std::clamp(val, 0.0f, 1.0f);
      }
  return img;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Indices of the k largest-magnitude gradient entries.
inline std::vector<Index> top_grad_coords(const Tensor& grad, Index k) {
  std::vector<Index> idx(static_cast<size_t>(grad.size()));
  for (Index i = 0; i < grad.size(); ++i) idx[static_cast<size_t>(i)] = i;
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](Index a, Index b) {
                      return std::abs(grad[a]) > std::abs(grad[b]);
                    });
  idx.resize(static_cast<size_t>(k));
  return idx;
}

/// Central finite difference of a scalar-valued function at x[i].
inline double fd_grad(const std::function<Scalar(const Tensor&)>& f, Tensor x,
                      Index i, Scalar eps) {
  const Scalar v0 = x[i];
  x[i] = v0 + eps;
  const double up = f(x);
  x[i] = v0 - eps;
  const double dn = f(x);
  x[i] = v0;
  return (up - dn) / (2.0 * eps);
}

}  // namespace testutil
