#pragma once

#include <string>

#include "splice/tensor.hpp"

namespace splice {

/// Images are [3,H,W] tensors with values in [0,1].
struct Image {
  Tensor t;  // [3,H,W]
  Index height() const { return t.dim(1); }
  Index width() const { return t.dim(2); }
};

Image load_image(const std::string& path);  // PNG or JPEG
void save_png(const std::string& path, const Tensor& chw);

Tensor clamp01(const Tensor& chw);

}  // namespace splice
