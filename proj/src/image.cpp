#include "splice/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <stdexcept>
#include <vector>

#include <jpeglib.h>

namespace splice {

namespace {

bool has_suffix(const std::string& s, const char* suf) {
  const size_t n = std::strlen(suf);
  if (s.size() < n) return false;
  std::string tail = s.substr(s.size() - n);
  std::transform(tail.begin(), tail.end(), tail.begin(), ::tolower);
  return tail == suf;
}

Image from_rgb8(const std::vector<unsigned char>& rgb, Index h, Index w) {
  Image img{Tensor({3, h, w})};
  Scalar* p = img.t.data();
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y * w + x) * 3;
      p[0 * h * w + y * w + x] = rgb[i] / Scalar(255);
      p[1 * h * w + y * w + x] = rgb[i + 1] / Scalar(255);
      p[2 * h * w + y * w + x] = rgb[i + 2] / Scalar(255);
    }
  return img;
}

Image load_png_file(const std::string& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str()))
    throw std::runtime_error(path + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw std::runtime_error(path + ": " + msg);
  }
  return from_rgb8(buf, pi.height, pi.width);
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

Image load_jpeg_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw std::runtime_error(path + ": JPEG decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const Index w = cinfo.output_width, h = cinfo.output_height;
  std::vector<unsigned char> rgb(static_cast<size_t>(h * w) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* row = rgb.data() +
                         static_cast<size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(f);
  return from_rgb8(rgb, h, w);
}

}  // namespace

Image load_image(const std::string& path) {
  if (has_suffix(path, ".png")) return load_png_file(path);
  if (has_suffix(path, ".jpg") || has_suffix(path, ".jpeg"))
    return load_jpeg_file(path);
  // Fall back on magic bytes.
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  unsigned char sig[2] = {0, 0};
  const size_t got = std::fread(sig, 1, 2, f);
  std::fclose(f);
  if (got == 2 && sig[0] == 0x89 && sig[1] == 'P') return load_png_file(path);
  if (got == 2 && sig[0] == 0xFF && sig[1] == 0xD8) return load_jpeg_file(path);
  throw std::runtime_error(path + ": unsupported image format");
}

void save_png(const std::string& path, const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3)
    throw std::invalid_argument("save_png: expected [3,H,W]");
  const Index h = chw.dim(1), w = chw.dim(2);
  std::vector<unsigned char> rgb(static_cast<size_t>(h * w) * 3);
  const Scalar* p = chw.data();
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const Scalar v = std::clamp(p[c * h * w + y * w + x], Scalar(0),
                                    Scalar(1));
        rgb[static_cast<size_t>(y * w + x) * 3 + c] =
            static_cast<unsigned char>(v * 255.0f + 0.5f);
      }
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(w);
  pi.height = static_cast<png_uint_32>(h);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, rgb.data(), 0, nullptr))
    throw std::runtime_error(path + ": " + pi.message);
}

Tensor clamp01(const Tensor& chw) {
  Tensor out = chw;
  out.array() = out.array().max(Scalar(0)).min(Scalar(1));
  return out;
}

}  // namespace splice
