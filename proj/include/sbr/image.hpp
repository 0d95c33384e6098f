#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "sbr/errors.hpp"

namespace sbr {

// Interleaved RGB image with float values in [0, 1], row-major HWC layout.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // height * width * 3

  float& at(int y, int x, int c) { return pixels[(y * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(y * width + x) * 3 + c]; }

  static Image filled(int h, int w, float v) {
    Image img;
    img.height = h;
    img.width = w;
    img.pixels.assign(static_cast<std::size_t>(h) * w * 3, v);
    return img;
  }
};

// PNG (required) or JPEG (accepted) decode; grayscale is replicated to RGB,
// alpha dropped. Throws IoError on undecodable input.
Image load_image(const std::string& path);

// Deterministic PNG encode (8-bit RGB, fixed zlib settings).
void save_png(const Image& img, const std::string& path);

// Bilinear resample with corner-aligned-free (half-pixel center) mapping.
// A resize to the source dimensions is an exact copy.
Image bilinear_resize(const Image& img, int out_h, int out_w);

// Mirror left-right.
Image horizontal_flip(const Image& img);

// Columns [x0, x0 + w) at full height.
Image crop_columns(const Image& img, int x0, int w);

}  // namespace sbr
