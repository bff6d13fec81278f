#pragma once

#include <array>

#include "core/hgd.hpp"

namespace efcn {

// Desk-scale encoder: plain strided 3x3 conv/bn/relu stages emitting feature
// maps at output strides 8, 16 and 32.  Channel counts follow
// stage_channels; the full-size network exists only symbolically (see
// archgraph.hpp).
struct BackboneConfig {
  int stem_channels = 24;
  std::array<int, 3> stage_channels = {32, 48, 64};  // at OS 8 / 16 / 32
  std::array<int, 3> blocks_per_stage = {2, 2, 2};
  std::array<int, 2> input_size = {64, 64};  // nominal training crop

  void validate() const {
    if (stem_channels < 1) throw ConfigError("BackboneConfig: stem_channels < 1");
    for (int c : stage_channels)
      if (c < 1) throw ConfigError("BackboneConfig: stage channel < 1");
    for (int b : blocks_per_stage)
      if (b < 1) throw ConfigError("BackboneConfig: blocks_per_stage < 1");
    if (input_size[0] % 32 != 0 || input_size[1] % 32 != 0)
      throw ConfigError(cat("BackboneConfig: input_size ", input_size[0], "x",
                            input_size[1], " not divisible by 32"));
  }
};

template <class T>
struct ToyBackbone {
  // stem: two stride-2 convs, image -> OS=4
  ConvBnRelu<T> stem1, stem2;
  std::array<std::vector<ConvBnRelu<T>>, 3> stages;  // each begins with stride 2

  static ToyBackbone make(Rng& rng, const BackboneConfig& cfg) {
    cfg.validate();
    ToyBackbone b;
    b.stem1 = ConvBnRelu<T>::make(rng, cfg.stem_channels, 3, 3, 2);
    b.stem2 = ConvBnRelu<T>::make(rng, cfg.stem_channels, cfg.stem_channels, 3, 2);
    int cin = cfg.stem_channels;
    for (int s = 0; s < 3; ++s) {
      const int cout = cfg.stage_channels[s];
      for (int blk = 0; blk < cfg.blocks_per_stage[s]; ++blk) {
        b.stages[s].push_back(
            ConvBnRelu<T>::make(rng, cout, blk == 0 ? cin : cout, 3, blk == 0 ? 2 : 1));
      }
      cin = cout;
    }
    return b;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    stem1.collect(prefix + ".stem1", out);
    stem2.collect(prefix + ".stem2", out);
    for (int s = 0; s < 3; ++s)
      for (size_t blk = 0; blk < stages[s].size(); ++blk)
        stages[s][blk].collect(cat(prefix, ".stage", s + 1, ".block", blk), out);
  }
};

// image:(N,3,H,W) with H,W divisible by 32 -> features at OS 8/16/32
template <class T>
EncoderFeatures<T> forward_toy(const Tensor<T>& image, const BackboneConfig& cfg,
                               ToyBackbone<T>& params, bool training) {
  const Shape& s = image.shape();
  if (s.c != 3)
    throw ShapeError(cat("forward_toy: expected 3-channel image, got ", s.str()));
  if (s.h % 32 != 0 || s.w % 32 != 0)
    throw ConfigError(cat("forward_toy: input ", s.h, "x", s.w, " not divisible by 32"));

  Tensor<T> x = params.stem1.forward(image, training);
  x = params.stem2.forward(x, training);
  EncoderFeatures<T> out;
  for (int st = 0; st < 3; ++st) {
    for (auto& blk : params.stages[st]) x = blk.forward(x, training);
    if (st == 0) out.f8 = x;
    if (st == 1) out.f16 = x;
    if (st == 2) out.f32 = x;
  }
  return out;
}

}  // namespace efcn
