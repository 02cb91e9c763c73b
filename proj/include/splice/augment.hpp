#pragma once

#include <utility>

#include "splice/image.hpp"
#include "splice/nn.hpp"

namespace splice::train {

using ad::Var;

/// Photometric/geometric augmentation knobs. The structure stream gets the
/// full menu; the appearance stream gets crop and flip only.
struct AugmentPolicy {
  Scalar crop_lo = 0.95f, crop_hi = 1.0f;  // square crop, fraction of height
  Scalar hflip_p = 0.5f;
  Scalar jitter_p = 0.5f;
  Scalar blur_p = 0.5f;
  Scalar blur_sigma_lo = 0.1f, blur_sigma_hi = 2.0f;
  // Color-jitter strengths (auditable; applied when the jitter draw fires).
  Scalar brightness = 0.4f, contrast = 0.4f, saturation = 0.2f, hue = 0.1f;

  void validate() const;
  static AugmentPolicy splice_defaults() { return {}; }
  static AugmentPolicy splicenet_defaults() {
    AugmentPolicy p;
    p.crop_lo = p.crop_hi = 0.95f;
    p.jitter_p = 0.2f;
    p.blur_p = 0.1f;
    return p;
  }
};

// Individual transforms (plain tensors, no tape) -------------------------

Tensor hflip(const Tensor& chw);
Tensor crop(const Tensor& chw, Index top, Index left, Index size);
Tensor color_jitter(const Tensor& chw, const AugmentPolicy& p, nn::Rng& rng);
Tensor gaussian_blur3(const Tensor& chw, Scalar sigma);

/// Bicubic resize of a [3,H,W] tensor, clamped back to [0,1].
Tensor resize_bicubic(const Tensor& chw, Index out_h, Index out_w);

/// Aspect-preserving resize for feature extraction: height becomes `target`,
/// width is scaled accordingly and rounded to the nearest patch multiple.
Image resize_for_vit(const Image& image, Index target = 224, Index patch = 8);
/// Differentiable version for generated images on the tape.
Var resize_for_vit_var(const Var& chw, Index target = 224, Index patch = 8);

std::pair<Image, Image> augment_pair(const Image& structure,
                                     const Image& appearance,
                                     const AugmentPolicy& policy,
                                     nn::Rng& rng);

}  // namespace splice::train
