#pragma once

#include <string>
#include <vector>

#include "core/common.hpp"

namespace efcn {

// Symbolic layer records for cost accounting. Execution never touches these;
// they describe the full-size networks exactly so the analyzer can reproduce
// published compute numbers.

enum class LayerKind {
  conv,
  deconv,
  fc,
  pool,
  bilinear,
  add,
  concat,
  bn,
  relu,
  softmax,
  matmul,  // bilinear contraction (codeword pooling / assembly)
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from(const std::string& s);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  int c_in = 0, c_out = 0;
  int kh = 1, kw = 1;
  int stride = 1, dilation = 1, padding = 0, groups = 1;
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  bool bias = false;

  bool operator==(const LayerSpec&) const = default;
};

struct ArchGraph {
  std::string name;
  std::vector<LayerSpec> layers;

  bool operator==(const ArchGraph&) const = default;

  // Checks per-layer spatial arithmetic; throws ValidationError.
  void validate() const;

  std::string to_json() const;
  static ArchGraph from_json(const std::string& text);
};

enum class DecoderKind { fcn32s_head, fcn8s_head, unet_bilinear, unet_deconv, hgd };

DecoderKind decoder_kind_from(const std::string& s);

// Full-size ResNet101 (stem 7x7/2, max-pool, bottleneck stages 3/4/23/3).
// The dilated variant runs the last two stages at stride 1 with dilations
// 2 and 4, leaving the final map at OS=8.
ArchGraph resnet101(int h, int w, bool dilated);

// Decoder heads over the ResNet101 feature pyramid at the given input size.
ArchGraph decoder_graph(DecoderKind kind, int h, int w, int n_codewords,
                        int n_classes);

// model ids: fcn32s | dilatedfcn8s | unet_bilinear | unet_deconv | efficientfcn
ArchGraph model_graph(const std::string& model, int h, int w, int n_codewords,
                      int n_classes);

}  // namespace efcn
