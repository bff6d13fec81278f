#include "core/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "core/ops.hpp"

namespace efcn {

namespace {

struct Painter {
  Tensor<float>& img;
  LabelMap& label;

  void pixel(int y, int x, int cls, const float rgb[3]) {
    if (y < 0 || y >= label.h || x < 0 || x >= label.w) return;
    for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = rgb[c];
    label.at(0, y, x) = cls;
  }
};

void jitter3(Rng& rng, const float base[3], float amount, float out[3]) {
  for (int c = 0; c < 3; ++c)
    out[c] = std::clamp(base[c] + float(rng.uniform(-amount, amount)), 0.0f, 1.0f);
}

}  // namespace

Sample SyntheticShapes::make(int index) const {
  if (index < 0 || index >= cfg_.n_images)
    throw ValidationError(cat("SyntheticShapes: index ", index, " of ", cfg_.n_images));
  const int H = cfg_.height, W = cfg_.width;
  Rng rng(cfg_.seed * 0x9e3779b97f4a7c15ull + u64(index) * 0xbf58476d1ce4e5b9ull + 1);

  Sample s;
  s.image = Tensor<float>::zeros({1, 3, H, W});
  s.label = LabelMap::filled(1, H, W, 0);

  // textured background: tinted gradient plus a soft diagonal wave
  const float bg_base[3] = {float(rng.uniform(0.24, 0.34)),
                            float(rng.uniform(0.28, 0.38)),
                            float(rng.uniform(0.32, 0.42))};
  const double fy = rng.uniform(0.5, 1.5) / H;
  const double fx = rng.uniform(0.5, 1.5) / W;
  const double phase = rng.uniform(0.0, 6.28318);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float wave =
          0.04f * float(std::sin(6.28318 * (fy * y + fx * x) + phase));
      for (int c = 0; c < 3; ++c)
        s.image.at(0, c, y, x) = std::clamp(bg_base[c] + wave, 0.0f, 1.0f);
    }

  Painter paint{s.image, s.label};

  // two or three shapes per scene, one per drawn class
  int order[3] = {1, 2, 3};
  for (int i = 2; i > 0; --i)
    std::swap(order[i], order[size_t(rng.uniform_int(0, i))]);
  const int n_shapes = int(rng.uniform_int(2, 3));

  static const float kClassColor[4][3] = {
      {0, 0, 0},                // background, unused
      {0.82f, 0.22f, 0.18f},    // rectangles
      {0.16f, 0.78f, 0.30f},    // discs
      {0.22f, 0.32f, 0.88f},    // bars
  };

  for (int i = 0; i < n_shapes; ++i) {
    const int cls = order[i];
    float rgb[3];
    jitter3(rng, kClassColor[cls], 0.06f, rgb);
    const int cy = int(rng.uniform_int(H / 4, 3 * H / 4));
    const int cx = int(rng.uniform_int(W / 4, 3 * W / 4));
    if (cls == 1) {
      const int hh = int(rng.uniform_int(10, 16));
      const int hw = int(rng.uniform_int(10, 16));
      for (int y = cy - hh; y <= cy + hh; ++y)
        for (int x = cx - hw; x <= cx + hw; ++x) paint.pixel(y, x, cls, rgb);
    } else if (cls == 2) {
      const int r = int(rng.uniform_int(11, 16));
      for (int y = cy - r; y <= cy + r; ++y)
        for (int x = cx - r; x <= cx + r; ++x)
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
            paint.pixel(y, x, cls, rgb);
    } else {
      const bool horizontal = rng.uniform() < 0.5;
      const int half_t = int(rng.uniform_int(5, 7));
      const int half_l = int(rng.uniform_int(16, 22));
      const int hh = horizontal ? half_t : half_l;
      const int hw = horizontal ? half_l : half_t;
      for (int y = cy - hh; y <= cy + hh; ++y)
        for (int x = cx - hw; x <= cx + hw; ++x) paint.pixel(y, x, cls, rgb);
    }
  }

  // void band around every label change
  if (cfg_.ignore_band > 0) {
    const int b = cfg_.ignore_band;
    LabelMap crisp = s.label;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int me = crisp.at(0, y, x);
        bool boundary = false;
        for (int dy = -1; dy <= 1 && !boundary; ++dy)
          for (int dx = -1; dx <= 1 && !boundary; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            if (crisp.at(0, ny, nx) != me) boundary = true;
          }
        if (!boundary) continue;
        for (int dy = -b; dy <= b; ++dy)
          for (int dx = -b; dx <= b; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny >= 0 && ny < H && nx >= 0 && nx < W)
              s.label.at(0, ny, nx) = 255;
          }
      }
  }

  // sensor noise on top of everything
  for (i64 i = 0; i < s.image.numel(); ++i)
    s.image.data()[i] = std::clamp(
        s.image.data()[i] + float(rng.normal(0.0, 0.015)), 0.0f, 1.0f);

  return s;
}

LabelMap resize_labels_nearest(const LabelMap& m, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw ShapeError(cat("resize_labels_nearest: bad size ", out_h, "x", out_w));
  LabelMap out = LabelMap::filled(m.n, out_h, out_w, 0);
  for (int n = 0; n < m.n; ++n)
    for (int y = 0; y < out_h; ++y) {
      const double sy = (y + 0.5) * double(m.h) / out_h - 0.5;
      const int yy = std::clamp(int(std::lround(sy)), 0, m.h - 1);
      for (int x = 0; x < out_w; ++x) {
        const double sx = (x + 0.5) * double(m.w) / out_w - 0.5;
        const int xx = std::clamp(int(std::lround(sx)), 0, m.w - 1);
        out.at(n, y, x) = m.at(n, yy, xx);
      }
    }
  return out;
}

Sample augment_sample(const Sample& s, int crop_h, int crop_w, double scale_min,
                      double scale_max, double flip_prob, Rng& rng) {
  if (crop_h < 1 || crop_w < 1)
    throw ConfigError(cat("augment_sample: bad crop ", crop_h, "x", crop_w));
  if (!(scale_min > 0) || scale_max < scale_min)
    throw ConfigError(cat("augment_sample: bad scale range [", scale_min, ",",
                          scale_max, "]"));
  Sample out = s;

  if (rng.uniform() < flip_prob) {
    out.image = flip_w(out.image);
    LabelMap flipped = out.label;
    for (int n = 0; n < out.label.n; ++n)
      for (int y = 0; y < out.label.h; ++y)
        for (int x = 0; x < out.label.w; ++x)
          flipped.at(n, y, x) = out.label.at(n, y, out.label.w - 1 - x);
    out.label = flipped;
  }

  const double scale = rng.uniform(scale_min, scale_max);
  const int sh = std::max(1, int(std::lround(out.label.h * scale)));
  const int sw = std::max(1, int(std::lround(out.label.w * scale)));
  if (sh != out.label.h || sw != out.label.w) {
    out.image = bilinear_resize(out.image, sh, sw);
    out.label = resize_labels_nearest(out.label, sh, sw);
  }

  Tensor<float> canvas = Tensor<float>::full({1, 3, crop_h, crop_w}, 0.5f);
  LabelMap labels = LabelMap::filled(1, crop_h, crop_w, 255);
  // random crop when the scaled scene is larger, random placement when smaller
  const int oy = sh > crop_h ? -int(rng.uniform_int(0, sh - crop_h))
                             : int(rng.uniform_int(0, crop_h - sh));
  const int ox = sw > crop_w ? -int(rng.uniform_int(0, sw - crop_w))
                             : int(rng.uniform_int(0, crop_w - sw));
  for (int y = 0; y < sh; ++y) {
    const int ty = y + oy;
    if (ty < 0 || ty >= crop_h) continue;
    for (int x = 0; x < sw; ++x) {
      const int tx = x + ox;
      if (tx < 0 || tx >= crop_w) continue;
      for (int c = 0; c < 3; ++c) canvas.at(0, c, ty, tx) = out.image.at(0, c, y, x);
      labels.at(0, ty, tx) = out.label.at(0, y, x);
    }
  }
  out.image = canvas;
  out.label = labels;
  return out;
}

}  // namespace efcn
