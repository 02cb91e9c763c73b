#include "splice/augment.hpp"

#include <algorithm>
#include <cmath>

#include "splice/errors.hpp"
#include "splice/ops.hpp"

namespace splice::train {

void AugmentPolicy::validate() const {
  auto prob = [](Scalar p) { return p >= 0 && p <= 1; };
  if (!prob(hflip_p) || !prob(jitter_p) || !prob(blur_p))
    throw ConfigError("augment: probabilities must lie in [0,1]");
  if (!(crop_lo > 0 && crop_lo <= crop_hi && crop_hi <= 1))
    throw ConfigError("augment: crop fractions must satisfy 0 < lo <= hi <= 1");
  if (!(blur_sigma_lo > 0 && blur_sigma_lo <= blur_sigma_hi))
    throw ConfigError("augment: blur sigma interval invalid");
}

Tensor hflip(const Tensor& chw) {
  const Index c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor out(chw.shape());
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        out[(ch * h + y) * w + x] = chw[(ch * h + y) * w + (w - 1 - x)];
  return out;
}

Tensor crop(const Tensor& chw, Index top, Index left, Index size) {
  const Index c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (top < 0 || left < 0 || top + size > h || left + size > w)
    throw ConfigError("crop: window exceeds image bounds");
  Tensor out({c, size, size});
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x)
        out[(ch * size + y) * size + x] =
            chw[(ch * h + top + y) * w + left + x];
  return out;
}

Tensor color_jitter(const Tensor& chw, const AugmentPolicy& p, nn::Rng& rng) {
  const Index n = chw.dim(1) * chw.dim(2);
  const Scalar fb = rng.uniform(1 - p.brightness, 1 + p.brightness);
  const Scalar fc = rng.uniform(1 - p.contrast, 1 + p.contrast);
  const Scalar fs = rng.uniform(1 - p.saturation, 1 + p.saturation);
  const Scalar hue_angle = rng.uniform(-p.hue, p.hue) *
                           Scalar(2 * 3.14159265358979323846);
  // Hue: rotate RGB around the gray axis (cheap stand-in for an HSV shift).
  const Scalar cs = std::cos(hue_angle), sn = std::sin(hue_angle);
  const Scalar one3 = Scalar(1) / 3, sq3 = std::sqrt(Scalar(3));
  Eigen::Matrix3f rot;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const Scalar same = i == j ? 1.0f : 0.0f;
      rot(i, j) = cs * same + (1 - cs) * one3 +
                  sn / sq3 * ((i - j + 3) % 3 == 1 ? 1.0f : same - 1.0f);
    }

  Tensor out(chw.shape());
  Scalar mean_lum = 0;
  for (Index i = 0; i < n; ++i)
    mean_lum += Scalar(0.299) * chw[i] + Scalar(0.587) * chw[n + i] +
                Scalar(0.114) * chw[2 * n + i];
  mean_lum /= static_cast<Scalar>(n);

  for (Index i = 0; i < n; ++i) {
    Eigen::Vector3f px(chw[i], chw[n + i], chw[2 * n + i]);
    px = rot * px;  // hue
    const Scalar lum =
        Scalar(0.299) * px[0] + Scalar(0.587) * px[1] + Scalar(0.114) * px[2];
    px = fs * px + (1 - fs) * Eigen::Vector3f::Constant(lum);  // saturation
    px = fc * px + (1 - fc) * Eigen::Vector3f::Constant(mean_lum);  // contrast
    px *= fb;                                                       // brightness
    for (int ch = 0; ch < 3; ++ch)
      out[ch * n + i] = std::clamp(px[ch], 0.0f, 1.0f);
  }
  return out;
}

Tensor gaussian_blur3(const Tensor& chw, Scalar sigma) {
  const Index c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Scalar k[3];
  const Scalar s2 = 2 * sigma * sigma;
  k[0] = k[2] = std::exp(-1 / s2);
  k[1] = 1;
  const Scalar norm = k[0] + k[1] + k[2];
  for (Scalar& v : k) v /= norm;

  auto cl = [](Index v, Index n) { return std::clamp<Index>(v, 0, n - 1); };
  Tensor tmp(chw.shape()), out(chw.shape());
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        Scalar v = 0;
        for (int d = -1; d <= 1; ++d)
          v += k[d + 1] * chw[(ch * h + y) * w + cl(x + d, w)];
        tmp[(ch * h + y) * w + x] = v;
      }
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        Scalar v = 0;
        for (int d = -1; d <= 1; ++d)
          v += k[d + 1] * tmp[(ch * h + cl(y + d, h)) * w + x];
        out[(ch * h + y) * w + x] = v;
      }
  return out;
}

Tensor resize_bicubic(const Tensor& chw, Index out_h, Index out_w) {
  const Index c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (out_h == h && out_w == w) return chw;
  const MatrixRM a = ad::bicubic_matrix(out_h, h);
  const MatrixRM b = ad::bicubic_matrix(out_w, w);
  Tensor out({c, out_h, out_w});
  for (Index ch = 0; ch < c; ++ch) {
    auto src = ConstMatMap(chw.data() + ch * h * w, h, w);
    auto dst = MatMap(out.data() + ch * out_h * out_w, out_h, out_w);
    dst = a * src * b.transpose();
  }
  return clamp01(out);
}

namespace {
std::pair<Index, Index> vit_size(Index h, Index w, Index target, Index patch) {
  if (h < patch || w < patch)
    throw ConfigError("resize_for_vit: image smaller than one patch");
  Index oh = std::max<Index>(1, (target + patch / 2) / patch) * patch;
  const double scale = static_cast<double>(oh) / static_cast<double>(h);
  Index ow = static_cast<Index>(std::lround(scale * w / patch)) * patch;
  ow = std::max<Index>(ow, patch);
  return {oh, ow};
}
}  // namespace

Image resize_for_vit(const Image& image, Index target, Index patch) {
  auto [oh, ow] = vit_size(image.height(), image.width(), target, patch);
  return Image{resize_bicubic(image.t, oh, ow)};
}

Var resize_for_vit_var(const Var& chw, Index target, Index patch) {
  const Index h = chw->value.dim(1), w = chw->value.dim(2);
  auto [oh, ow] = vit_size(h, w, target, patch);
  if (oh == h && ow == w) return chw;
  return ad::resize_linear(chw, ad::bicubic_matrix(oh, h),
                           ad::bicubic_matrix(ow, w));
}

namespace {
Tensor augment_one(const Tensor& img, const AugmentPolicy& p, nn::Rng& rng,
                   bool photometric) {
  const Index h = img.dim(1), w = img.dim(2);
  const Scalar f = rng.uniform(p.crop_lo, p.crop_hi);
  Index size = std::min<Index>(
      {static_cast<Index>(std::lround(f * static_cast<Scalar>(h))), h, w});
  size = std::max<Index>(size, 1);
  const Index top = static_cast<Index>(rng.integer(h - size + 1));
  const Index left = static_cast<Index>(rng.integer(w - size + 1));
  Tensor out = crop(img, top, left, size);
  if (rng.bernoulli(p.hflip_p)) out = hflip(out);
  if (photometric) {
    if (rng.bernoulli(p.jitter_p)) out = color_jitter(out, p, rng);
    if (rng.bernoulli(p.blur_p))
      out = gaussian_blur3(out, rng.uniform(p.blur_sigma_lo, p.blur_sigma_hi));
  }
  return out;
}
}  // namespace

std::pair<Image, Image> augment_pair(const Image& structure,
                                     const Image& appearance,
                                     const AugmentPolicy& policy,
                                     nn::Rng& rng) {
  policy.validate();
  Image s{augment_one(structure.t, policy, rng, /*photometric=*/true)};
  Image a{augment_one(appearance.t, policy, rng, /*photometric=*/false)};
  return {std::move(s), std::move(a)};
}

}  // namespace splice::train
