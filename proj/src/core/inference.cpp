#include "core/inference.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "core/ops.hpp"
#include "json.hpp"

namespace efcn {

const std::vector<double>& default_eval_scales() {
  static const std::vector<double> scales = {0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
  return scales;
}

namespace {

int ceil32(int v) { return (v + 31) / 32 * 32; }

// mirror an out-of-range coordinate back into [0, n)
int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

Tensor<float> pad_reflect(const Tensor<float>& x, int top, int left, int out_h,
                          int out_w) {
  const Shape& s = x.shape();
  Tensor<float> out = Tensor<float>::zeros({s.n, s.c, out_h, out_w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < out_h; ++y) {
        const int sy = reflect(y - top, s.h);
        for (int x2 = 0; x2 < out_w; ++x2)
          out.at(n, c, y, x2) = x.at(n, c, sy, reflect(x2 - left, s.w));
      }
  return out;
}

Tensor<float> crop(const Tensor<float>& x, int top, int left, int h, int w) {
  const Shape& s = x.shape();
  Tensor<float> out = Tensor<float>::zeros({s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x2 = 0; x2 < w; ++x2)
          out.at(n, c, y, x2) = x.at(n, c, y + top, x2 + left);
  return out;
}

// one resize-pad-forward-crop-softmax pass, probabilities at base size
Tensor<float> single_pass(EfcnModel& model, const Tensor<float>& image,
                          double scale) {
  const Shape& s = image.shape();
  const int sh = std::max(1, int(std::lround(s.h * scale)));
  const int sw = std::max(1, int(std::lround(s.w * scale)));
  Tensor<float> x =
      (sh == s.h && sw == s.w) ? image : bilinear_resize(image, sh, sw);

  const int ph = ceil32(sh), pw = ceil32(sw);
  const int top = (ph - sh) / 2, left = (pw - sw) / 2;
  if (ph != sh || pw != sw) x = pad_reflect(x, top, left, ph, pw);

  Tensor<float> logits = model.forward(x, false);
  if (ph != sh || pw != sw) logits = crop(logits, top, left, sh, sw);
  Tensor<float> probs = softmax_channel(logits);
  if (sh != s.h || sw != s.w) probs = bilinear_resize(probs, s.h, s.w);
  return probs;
}

}  // namespace

Tensor<float> multiscale_infer(EfcnModel& model, const Tensor<float>& image,
                               const std::vector<double>& scales, bool flip) {
  if (scales.empty()) throw ConfigError("multiscale_infer: empty scale list");
  for (double s : scales)
    if (!(s > 0)) throw ConfigError(cat("multiscale_infer: bad scale ", s));
  NoGradGuard guard;

  Tensor<float> sum;
  int passes = 0;
  auto add = [&](const Tensor<float>& probs) {
    if (passes == 0) {
      sum = Tensor<float>::zeros(probs.shape());
    }
    for (i64 i = 0; i < sum.numel(); ++i) sum.data()[i] += probs.data()[i];
    ++passes;
  };

  for (double sc : scales) {
    add(single_pass(model, image, sc));
    if (flip) add(flip_w(single_pass(model, flip_w(image), sc)));
  }
  const float inv = 1.0f / float(passes);
  for (i64 i = 0; i < sum.numel(); ++i) sum.data()[i] *= inv;
  return sum;
}

SegMetrics evaluate_dataset(EfcnModel& model, const SyntheticShapes& data,
                            const std::vector<double>& scales, bool flip) {
  const int K = model.cfg.hgd.n_classes;
  std::vector<i64> confusion(size_t(K) * K, 0);
  for (int i = 0; i < data.size(); ++i) {
    Sample s = data.make(i);
    Tensor<float> probs = multiscale_infer(model, s.image, scales, flip);
    accumulate_confusion(argmax_channel(probs), s.label, K, 255, confusion);
  }
  return metrics_from_confusion(std::move(confusion), K);
}

ImageU8 normalize_map_to_image(const Tensor<float>& maps, int index) {
  const Shape& s = maps.shape();
  if (s.n != 1 || index < 0 || index >= s.c)
    throw ShapeError(cat("normalize_map_to_image: map ", index, " of ", s.str()));
  float lo = maps.at(0, index, 0, 0), hi = lo;
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      const float v = maps.at(0, index, y, x);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  ImageU8 img = ImageU8::filled(s.h, s.w, 1, 128);
  if (hi - lo < 1e-12f) return img;  // constant map, mid-gray by definition
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      img.at(y, x, 0) = std::uint8_t(
          std::lround((maps.at(0, index, y, x) - lo) / (hi - lo) * 255.0f));
  return img;
}

void export_weightmaps(EfcnModel& model, const Tensor<float>& image,
                       const std::string& out_dir) {
  NoGradGuard guard;
  HGDOutput<float> out = model.forward_full(image, false);
  const Tensor<float>& maps = out.codebook.weights;
  const Shape& s = maps.shape();

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(cat(out_dir, ": cannot create directory: ", ec.message()));

  nlohmann::json index = nlohmann::json::array();
  for (int i = 0; i < s.c; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "weightmap_%03d.pgm", i);
    const std::string path = out_dir + "/" + name;
    float lo = maps.at(0, i, 0, 0), hi = lo;
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        lo = std::min(lo, maps.at(0, i, y, x));
        hi = std::max(hi, maps.at(0, i, y, x));
      }
    write_image(normalize_map_to_image(maps, i), path);
    index.push_back({{"id", i}, {"file", name}, {"min", lo}, {"max", hi}});
  }
  const std::string index_path = out_dir + "/index.json";
  std::ofstream f(index_path);
  if (!f) throw IoError(cat(index_path, ": cannot open for writing"));
  f << index.dump(2) << "\n";
  if (!f) throw IoError(cat(index_path, ": write failed"));
}

}  // namespace efcn
