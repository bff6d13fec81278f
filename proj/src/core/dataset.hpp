#pragma once

#include "core/tensor.hpp"

namespace efcn {

struct Sample {
  Tensor<float> image;  // (1,3,H,W) in [0,1]
  LabelMap label;       // (1,H,W), 255 = ignore
};

// Parametric shape scenes: colored rectangles, discs and bars on a textured
// background.  Class 0 is background; labels carry an ignore band around
// every boundary, as real segmentation ground truth does.
struct DatasetConfig {
  int n_images = 50;
  int height = 64, width = 64;
  int n_classes = 4;
  u64 seed = 7;
  int ignore_band = 3;  // half-width of the boundary void, in pixels

  void validate() const {
    if (n_images < 1) throw ConfigError("DatasetConfig: n_images < 1");
    if (height < 32 || width < 32)
      throw ConfigError("DatasetConfig: images must be at least 32x32");
    if (n_classes != 4) throw ConfigError("DatasetConfig: generator draws 4 classes");
    if (ignore_band < 0) throw ConfigError("DatasetConfig: negative ignore_band");
  }
};

class SyntheticShapes {
 public:
  explicit SyntheticShapes(DatasetConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  int size() const { return cfg_.n_images; }
  const DatasetConfig& config() const { return cfg_; }

  // deterministic in (seed, index) alone
  Sample make(int index) const;

 private:
  DatasetConfig cfg_;
};

// Nearest-neighbor label resize with half-pixel centers, matching the
// geometry of bilinear_resize.
LabelMap resize_labels_nearest(const LabelMap& m, int out_h, int out_w);

// Random horizontal flip, uniform rescale and crop/pad to a fixed window.
// Padding fills labels with ignore and pixels with mid-gray.
Sample augment_sample(const Sample& s, int crop_h, int crop_w, double scale_min,
                      double scale_max, double flip_prob, Rng& rng);

}  // namespace efcn
