#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace efcn {

// 8-bit raster, interleaved row-major.  channels is 1 (gray) or 3 (rgb);
// files are binary PGM (P5) and PPM (P6) with maxval 255.
struct ImageU8 {
  int h = 0, w = 0, channels = 1;
  std::vector<std::uint8_t> pixels;

  static ImageU8 filled(int h, int w, int channels, std::uint8_t value);
  std::uint8_t& at(int y, int x, int c) {
    return pixels[(size_t(y) * w + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(size_t(y) * w + x) * channels + c];
  }
};

ImageU8 read_image(const std::string& path);
void write_image(const ImageU8& img, const std::string& path);

// (1,C,H,W) in [0,1] <-> 8-bit raster
Tensor<float> image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor<float>& t);

// class indices stored as raw gray levels
ImageU8 mask_to_image(const LabelMap& m, int batch_index = 0);

}  // namespace efcn
