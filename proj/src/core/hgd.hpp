#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "core/nn.hpp"

namespace efcn {

// Holistically-guided decoder configuration.  Scale lists name the encoder
// output strides feeding each fusion; the full setting is {8,16,32} for both,
// smaller subsets are the ablations.
struct HGDConfig {
  int n_codewords = 256;
  int compress_channels = 512;
  int basis_channels = 1024;    // codeword dimensionality
  int guidance_channels = 1024;
  std::vector<int> m32_scales = {8, 16, 32};
  std::vector<int> m8_scales = {8, 16, 32};
  bool codeword_transfer = true;
  int n_classes = 4;

  void validate() const {
    auto check = [](const std::vector<int>& v, int required, const char* who) {
      if (v.empty()) throw ConfigError(cat("HGDConfig: ", who, " empty"));
      for (int s : v)
        if (s != 8 && s != 16 && s != 32)
          throw ConfigError(cat("HGDConfig: ", who, " has unknown scale ", s));
      if (std::find(v.begin(), v.end(), required) == v.end())
        throw ConfigError(cat("HGDConfig: ", who, " must contain scale ", required));
      for (size_t i = 1; i < v.size(); ++i)
        if (v[i] <= v[i - 1])
          throw ConfigError(cat("HGDConfig: ", who, " must be strictly increasing"));
    };
    check(m32_scales, 32, "m32_scales");
    check(m8_scales, 8, "m8_scales");
    if (n_codewords < 1 || compress_channels < 1 || basis_channels < 1 ||
        guidance_channels < 1 || n_classes < 2)
      throw ConfigError("HGDConfig: non-positive channel or class count");
    if (codeword_transfer && guidance_channels != basis_channels)
      throw ConfigError(
          "HGDConfig: codeword transfer adds the basis average into the "
          "guidance map, so their widths must match");
  }

  int m32_channels() const { return compress_channels * int(m32_scales.size()); }
  int m8_channels() const { return compress_channels * int(m8_scales.size()); }
};

template <class T>
struct EncoderFeatures {
  Tensor<T> f8, f16, f32;

  const Tensor<T>& at_scale(int s) const {
    switch (s) {
      case 8: return f8;
      case 16: return f16;
      case 32: return f32;
    }
    throw ConfigError(cat("EncoderFeatures: no scale ", s));
  }
};

template <class T>
struct FusionBundle {
  std::map<int, Tensor<T>> compressed;  // scale -> 512-channel map at native stride
  Tensor<T> m32, m8;
};

template <class T>
struct Codebook {
  Tensor<T> logits;     // A
  Tensor<T> weights;    // normalized weighting maps, softmax over positions
  Tensor<T> basis;      // B
  Tensor<T> basis_avg;  // global average of B
  Tensor<T> codewords;  // (N, D, n, 1)
};

template <class T>
struct AssemblyResult {
  Tensor<T> guidance;      // G
  Tensor<T> guidance_bar;  // G with the holistic average folded in
  Tensor<T> coeff;         // W
  Tensor<T> f8_tilde;
  Tensor<T> f8_hat;
};

template <class T>
struct HGDParams {
  std::map<int, ConvBnRelu<T>> compress;  // one per scale in use, shared by both fusions
  ConvBnRelu<T> b_conv;
  LinearConv<T> a_conv;
  ConvBnRelu<T> g_conv;
  LinearConv<T> w_conv;
  LinearConv<T> classifier;

  static HGDParams make(Rng& rng, const HGDConfig& cfg, int c8, int c16, int c32) {
    cfg.validate();
    HGDParams p;
    std::vector<int> scales = cfg.m32_scales;
    scales.insert(scales.end(), cfg.m8_scales.begin(), cfg.m8_scales.end());
    std::sort(scales.begin(), scales.end());
    scales.erase(std::unique(scales.begin(), scales.end()), scales.end());
    for (int s : scales) {
      int cin = s == 8 ? c8 : s == 16 ? c16 : c32;
      p.compress.emplace(s, ConvBnRelu<T>::make(rng, cfg.compress_channels, cin, 1));
    }
    p.b_conv = ConvBnRelu<T>::make(rng, cfg.basis_channels, cfg.m32_channels(), 1);
    p.a_conv = LinearConv<T>::make(rng, cfg.n_codewords, cfg.m32_channels());
    p.g_conv = ConvBnRelu<T>::make(rng, cfg.guidance_channels, cfg.m8_channels(), 1);
    p.w_conv = LinearConv<T>::make(rng, cfg.n_codewords, cfg.guidance_channels);
    p.classifier = LinearConv<T>::make(
        rng, cfg.n_classes, cfg.basis_channels + cfg.guidance_channels);
    return p;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    for (auto& [s, c] : compress) c.collect(cat(prefix, ".compress", s), out);
    b_conv.collect(prefix + ".b_conv", out);
    a_conv.collect(prefix + ".a_conv", out);
    g_conv.collect(prefix + ".g_conv", out);
    w_conv.collect(prefix + ".w_conv", out);
    classifier.collect(prefix + ".classifier", out);
  }
};

// ------------------------------------------------------------------ fuse --

// Compresses each selected encoder map to a common width, then builds the
// OS=32 and OS=8 fusions by resizing everything onto those grids and
// concatenating in (8,16,32) order.
template <class T>
FusionBundle<T> fuse(const EncoderFeatures<T>& feats, const HGDConfig& cfg,
                     HGDParams<T>& params, bool training) {
  cfg.validate();
  const Shape& s8 = feats.f8.shape();
  const Shape& s16 = feats.f16.shape();
  const Shape& s32 = feats.f32.shape();
  if (s16.h * 2 != s8.h || s16.w * 2 != s8.w || s32.h * 2 != s16.h || s32.w * 2 != s16.w)
    throw ShapeError(cat("fuse: inconsistent pyramid ", s8.str(), " ", s16.str(), " ", s32.str()));

  FusionBundle<T> bundle;
  for (auto& [s, conv] : params.compress)
    bundle.compressed[s] = conv.forward(feats.at_scale(s), training);

  auto gather = [&](const std::vector<int>& scales, int h, int w) {
    std::vector<Tensor<T>> parts;
    for (int s : scales) {
      const Tensor<T>& e = bundle.compressed.at(s);
      parts.push_back(e.shape().h == h && e.shape().w == w ? e
                                                           : bilinear_resize(e, h, w));
    }
    return concat_channels(parts);
  };
  bundle.m32 = gather(cfg.m32_scales, s32.h, s32.w);
  bundle.m8 = gather(cfg.m8_scales, s8.h, s8.w);
  return bundle;
}

// -------------------------------------------------------------- codebook --

// Holistic codebook: basis maps B and weighting logits A from the OS=32
// fusion; each codeword is the spatial expectation of B under its
// softmax-normalized weighting map.
template <class T>
Codebook<T> build_codebook(const Tensor<T>& m32, const HGDConfig& cfg,
                           HGDParams<T>& params, bool training) {
  if (m32.shape().c != cfg.m32_channels())
    throw ShapeError(cat("build_codebook: m32 ", m32.shape().str(), " expects ",
                         cfg.m32_channels(), " channels"));
  Codebook<T> cb;
  cb.basis = params.b_conv.forward(m32, training);
  cb.logits = params.a_conv.forward(m32);
  cb.weights = softmax_spatial(cb.logits);
  cb.codewords = weighted_pool(cb.basis, cb.weights);
  cb.basis_avg = global_avg(cb.basis);
  return cb;
}

// -------------------------------------------------------------- assembly --

// Codeword assembly on the OS=8 grid.  With codeword_transfer the holistic
// average of B is broadcast into the guidance map before the coefficient
// convolution; switching it off keeps the same two convolutions and drops
// only the additive term, so parameter counts match exactly.
template <class T>
AssemblyResult<T> assemble_features(const Tensor<T>& m8, const Codebook<T>& cb,
                                    const HGDConfig& cfg, HGDParams<T>& params,
                                    bool training) {
  if (m8.shape().c != cfg.m8_channels())
    throw ShapeError(cat("assemble_features: m8 ", m8.shape().str(), " expects ",
                         cfg.m8_channels(), " channels"));
  AssemblyResult<T> out;
  out.guidance = params.g_conv.forward(m8, training);
  out.guidance_bar = cfg.codeword_transfer
                         ? add_broadcast(out.guidance, cb.basis_avg)
                         : out.guidance;
  out.coeff = params.w_conv.forward(out.guidance_bar);
  out.f8_tilde = assemble(out.coeff, cb.codewords);
  out.f8_hat = concat_channels<T>({out.f8_tilde, out.guidance});
  return out;
}

// ------------------------------------------------------------ prediction --

// 1x1 classifier on the assembled feature, then a single x8 bilinear
// upsampling to the requested output size.
template <class T>
Tensor<T> predict_mask(const Tensor<T>& f8_hat, const HGDConfig& cfg,
                       HGDParams<T>& params, int out_h, int out_w) {
  const Shape& s = f8_hat.shape();
  if (out_h != s.h * 8 || out_w != s.w * 8)
    throw ShapeError(cat("predict_mask: output ", out_h, "x", out_w,
                         " is not 8x the feature grid ", s.str()));
  Tensor<T> z = params.classifier.forward(f8_hat);
  return bilinear_resize(z, out_h, out_w);
}

template <class T>
struct HGDOutput {
  Tensor<T> logits;
  FusionBundle<T> fusion;
  Codebook<T> codebook;
  AssemblyResult<T> assembly;
};

template <class T>
HGDOutput<T> hgd_forward(const EncoderFeatures<T>& feats, const HGDConfig& cfg,
                         HGDParams<T>& params, int out_h, int out_w, bool training) {
  HGDOutput<T> out;
  out.fusion = fuse(feats, cfg, params, training);
  out.codebook = build_codebook(out.fusion.m32, cfg, params, training);
  out.assembly = assemble_features(out.fusion.m8, out.codebook, cfg, params, training);
  out.logits = predict_mask(out.assembly.f8_hat, cfg, params, out_h, out_w);
  return out;
}

}  // namespace efcn
