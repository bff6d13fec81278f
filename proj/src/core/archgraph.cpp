#include "core/archgraph.hpp"

#include <utility>

#include "json.hpp"

namespace efcn {

namespace {

using nlohmann::json;

const std::pair<LayerKind, const char*> kKindNames[] = {
    {LayerKind::conv, "conv"},         {LayerKind::deconv, "deconv"},
    {LayerKind::fc, "fc"},             {LayerKind::pool, "pool"},
    {LayerKind::bilinear, "bilinear"}, {LayerKind::add, "add"},
    {LayerKind::concat, "concat"},     {LayerKind::bn, "bn"},
    {LayerKind::relu, "relu"},         {LayerKind::softmax, "softmax"},
    {LayerKind::matmul, "matmul"},
};

int conv_out(int in, int k, int s, int d, int p) {
  return (in + 2 * p - d * (k - 1) - 1) / s + 1;
}

int deconv_out(int in, int k, int s, int p) { return (in - 1) * s - 2 * p + k; }

}  // namespace

const char* layer_kind_name(LayerKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  throw ValidationError("layer_kind_name: unknown kind");
}

LayerKind layer_kind_from(const std::string& s) {
  for (const auto& [kind, name] : kKindNames)
    if (s == name) return kind;
  throw FormatError(cat("layer_kind_from: unknown kind '", s, "'"));
}

void ArchGraph::validate() const {
  if (layers.empty()) throw ValidationError(cat("graph '", name, "' is empty"));
  for (const auto& l : layers) {
    auto fail = [&](const std::string& why) {
      throw ValidationError(cat("graph '", name, "', layer '", l.name, "': ", why));
    };
    if (l.c_in < 1 || l.c_out < 1) fail("channel counts must be positive");
    if (l.in_h < 1 || l.in_w < 1 || l.out_h < 1 || l.out_w < 1)
      fail("spatial sizes must be positive");
    if (l.kh < 1 || l.kw < 1 || l.stride < 1 || l.dilation < 1 || l.groups < 1)
      fail("kernel, stride, dilation and groups must be positive");
    if (l.padding < 0) fail("padding must be nonnegative");
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::pool:
        if (l.out_h != conv_out(l.in_h, l.kh, l.stride, l.dilation, l.padding) ||
            l.out_w != conv_out(l.in_w, l.kw, l.stride, l.dilation, l.padding))
          fail("output size does not match the window arithmetic");
        if (l.kind == LayerKind::pool && l.c_in != l.c_out)
          fail("pooling preserves channels");
        if (l.c_in % l.groups || l.c_out % l.groups)
          fail("groups must divide both channel counts");
        break;
      case LayerKind::deconv:
        if (l.out_h != deconv_out(l.in_h, l.kh, l.stride, l.padding) ||
            l.out_w != deconv_out(l.in_w, l.kw, l.stride, l.padding))
          fail("output size does not match the transposed arithmetic");
        if (l.c_in % l.groups || l.c_out % l.groups)
          fail("groups must divide both channel counts");
        break;
      case LayerKind::fc:
        if (l.out_h != 1 || l.out_w != 1) fail("fc output is 1x1");
        break;
      case LayerKind::add:
      case LayerKind::bn:
      case LayerKind::relu:
      case LayerKind::softmax:
        if (l.c_in != l.c_out) fail("elementwise layers preserve channels");
        if (l.in_h != l.out_h || l.in_w != l.out_w)
          fail("elementwise layers preserve spatial size");
        break;
      case LayerKind::concat:
        if (l.c_out != l.c_in) fail("concat records the stacked width on both sides");
        if (l.in_h != l.out_h || l.in_w != l.out_w)
          fail("concat preserves spatial size");
        break;
      case LayerKind::bilinear:
        if (l.c_in != l.c_out) fail("resizing preserves channels");
        break;
      case LayerKind::matmul:
        break;  // contraction over one spatial grid onto another; sizes are free
    }
  }
}

std::string ArchGraph::to_json() const {
  json j;
  j["name"] = name;
  j["layers"] = json::array();
  for (const auto& l : layers) {
    json o;
    o["name"] = l.name;
    o["kind"] = layer_kind_name(l.kind);
    o["c_in"] = l.c_in;
    o["c_out"] = l.c_out;
    o["kh"] = l.kh;
    o["kw"] = l.kw;
    o["stride"] = l.stride;
    o["dilation"] = l.dilation;
    o["padding"] = l.padding;
    o["groups"] = l.groups;
    o["in_h"] = l.in_h;
    o["in_w"] = l.in_w;
    o["out_h"] = l.out_h;
    o["out_w"] = l.out_w;
    o["bias"] = l.bias;
    j["layers"].push_back(std::move(o));
  }
  return j.dump(2);
}

ArchGraph ArchGraph::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(cat("graph json: ", e.what()));
  }
  ArchGraph g;
  try {
    g.name = j.at("name").get<std::string>();
    for (const auto& o : j.at("layers")) {
      LayerSpec l;
      l.name = o.at("name").get<std::string>();
      l.kind = layer_kind_from(o.at("kind").get<std::string>());
      l.c_in = o.at("c_in").get<int>();
      l.c_out = o.at("c_out").get<int>();
      l.kh = o.at("kh").get<int>();
      l.kw = o.at("kw").get<int>();
      l.stride = o.at("stride").get<int>();
      l.dilation = o.at("dilation").get<int>();
      l.padding = o.at("padding").get<int>();
      l.groups = o.at("groups").get<int>();
      l.in_h = o.at("in_h").get<int>();
      l.in_w = o.at("in_w").get<int>();
      l.out_h = o.at("out_h").get<int>();
      l.out_w = o.at("out_w").get<int>();
      l.bias = o.at("bias").get<bool>();
      g.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw FormatError(cat("graph json: ", e.what()));
  }
  return g;
}

namespace {

LayerSpec conv_spec(std::string name, int c_in, int c_out, int k, int stride,
                    int dilation, int in_h, int in_w, bool bias) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::conv;
  l.c_in = c_in;
  l.c_out = c_out;
  l.kh = l.kw = k;
  l.stride = stride;
  l.dilation = dilation;
  l.padding = dilation * (k - 1) / 2;
  l.in_h = in_h;
  l.in_w = in_w;
  l.out_h = conv_out(in_h, k, stride, dilation, l.padding);
  l.out_w = conv_out(in_w, k, stride, dilation, l.padding);
  l.bias = bias;
  return l;
}

LayerSpec deconv_spec(std::string name, int c_in, int c_out, int k, int stride,
                      int padding, int in_h, int in_w) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::deconv;
  l.c_in = c_in;
  l.c_out = c_out;
  l.kh = l.kw = k;
  l.stride = stride;
  l.padding = padding;
  l.in_h = in_h;
  l.in_w = in_w;
  l.out_h = deconv_out(in_h, k, stride, padding);
  l.out_w = deconv_out(in_w, k, stride, padding);
  return l;
}

LayerSpec elem_spec(std::string name, LayerKind kind, int c, int h, int w) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  l.c_in = l.c_out = c;
  l.in_h = l.out_h = h;
  l.in_w = l.out_w = w;
  return l;
}

LayerSpec pool_spec(std::string name, int c, int k, int stride, int padding,
                    int in_h, int in_w) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::pool;
  l.c_in = l.c_out = c;
  l.kh = l.kw = k;
  l.stride = stride;
  l.padding = padding;
  l.in_h = in_h;
  l.in_w = in_w;
  l.out_h = conv_out(in_h, k, stride, 1, padding);
  l.out_w = conv_out(in_w, k, stride, 1, padding);
  return l;
}

LayerSpec resize_spec(std::string name, int c, int in_h, int in_w, int out_h,
                      int out_w) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::bilinear;
  l.c_in = l.c_out = c;
  l.in_h = in_h;
  l.in_w = in_w;
  l.out_h = out_h;
  l.out_w = out_w;
  return l;
}

LayerSpec matmul_spec(std::string name, int c_in, int c_out, int in_h, int in_w,
                      int out_h, int out_w) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::matmul;
  l.c_in = c_in;
  l.c_out = c_out;
  l.in_h = in_h;
  l.in_w = in_w;
  l.out_h = out_h;
  l.out_w = out_w;
  return l;
}

// conv + bn + relu, the standard block everywhere below
void push_cbr(std::vector<LayerSpec>& L, const std::string& stem, int c_in,
              int c_out, int k, int in_h, int in_w) {
  L.push_back(conv_spec(stem + ".conv", c_in, c_out, k, 1, 1, in_h, in_w, false));
  L.push_back(elem_spec(stem + ".bn", LayerKind::bn, c_out, in_h, in_w));
  L.push_back(elem_spec(stem + ".relu", LayerKind::relu, c_out, in_h, in_w));
}

void require_div32(int h, int w) {
  if (h < 32 || w < 32 || h % 32 || w % 32)
    throw ConfigError(cat("input ", h, "x", w, " must be a positive multiple of 32"));
}

}  // namespace

ArchGraph resnet101(int h, int w, bool dilated) {
  require_div32(h, w);
  ArchGraph g;
  g.name = dilated ? "resnet101_dilated" : "resnet101";
  auto& L = g.layers;

  L.push_back(conv_spec("conv1", 3, 64, 7, 2, 1, h, w, false));
  int ih = L.back().out_h, iw = L.back().out_w;
  L.push_back(elem_spec("bn1", LayerKind::bn, 64, ih, iw));
  L.push_back(elem_spec("relu1", LayerKind::relu, 64, ih, iw));
  L.push_back(pool_spec("maxpool", 64, 3, 2, 1, ih, iw));
  ih = L.back().out_h;
  iw = L.back().out_w;

  const int blocks[4] = {3, 4, 23, 3};
  const int planes[4] = {64, 128, 256, 512};
  int c_in = 64;
  int dil = 1;
  for (int s = 0; s < 4; ++s) {
    int stride = s == 0 ? 1 : 2;
    const int prev_dil = dil;
    if (dilated && s >= 2) {
      dil *= stride;
      stride = 1;
    }
    const int width = planes[s];
    const int c_out = width * 4;
    for (int b = 0; b < blocks[s]; ++b) {
      const std::string p = cat("layer", s + 1, ".", b);
      const int bs = b == 0 ? stride : 1;
      // the first block keeps the incoming rate while the rest use the
      // stage's new one
      const int bd = b == 0 ? prev_dil : dil;
      const int bc = b == 0 ? c_in : c_out;
      const int bh = ih, bw = iw;
      L.push_back(conv_spec(p + ".conv1", bc, width, 1, 1, 1, bh, bw, false));
      L.push_back(elem_spec(p + ".bn1", LayerKind::bn, width, bh, bw));
      L.push_back(elem_spec(p + ".relu1", LayerKind::relu, width, bh, bw));
      L.push_back(conv_spec(p + ".conv2", width, width, 3, bs, bd, bh, bw, false));
      const int oh = L.back().out_h, ow = L.back().out_w;
      L.push_back(elem_spec(p + ".bn2", LayerKind::bn, width, oh, ow));
      L.push_back(elem_spec(p + ".relu2", LayerKind::relu, width, oh, ow));
      L.push_back(conv_spec(p + ".conv3", width, c_out, 1, 1, 1, oh, ow, false));
      L.push_back(elem_spec(p + ".bn3", LayerKind::bn, c_out, oh, ow));
      if (b == 0) {
        L.push_back(conv_spec(p + ".downsample.0", bc, c_out, 1, bs, 1, bh, bw, false));
        L.push_back(elem_spec(p + ".downsample.1", LayerKind::bn, c_out, oh, ow));
      }
      L.push_back(elem_spec(p + ".add", LayerKind::add, c_out, oh, ow));
      L.push_back(elem_spec(p + ".relu", LayerKind::relu, c_out, oh, ow));
      ih = oh;
      iw = ow;
    }
    c_in = c_out;
  }
  return g;
}

DecoderKind decoder_kind_from(const std::string& s) {
  if (s == "fcn32s_head") return DecoderKind::fcn32s_head;
  if (s == "fcn8s_head") return DecoderKind::fcn8s_head;
  if (s == "unet_bilinear") return DecoderKind::unet_bilinear;
  if (s == "unet_deconv") return DecoderKind::unet_deconv;
  if (s == "hgd") return DecoderKind::hgd;
  throw ConfigError(cat("unknown decoder kind '", s, "'"));
}

ArchGraph decoder_graph(DecoderKind kind, int h, int w, int n_codewords,
                        int n_classes) {
  require_div32(h, w);
  if (n_classes < 2) throw ConfigError("decoder_graph: need at least 2 classes");
  // encoder pyramid widths at strides 8/16/32
  const int h8 = h / 8, w8 = w / 8;
  const int h16 = h / 16, w16 = w / 16;
  const int h32 = h / 32, w32 = w / 32;
  ArchGraph g;
  auto& L = g.layers;

  switch (kind) {
    case DecoderKind::fcn32s_head: {
      g.name = "fcn32s_head";
      L.push_back(conv_spec("decoder.classifier", 2048, n_classes, 1, 1, 1, h32,
                            w32, true));
      L.push_back(resize_spec("decoder.upsample", n_classes, h32, w32, h, w));
      break;
    }
    case DecoderKind::fcn8s_head: {
      // sits on the dilated encoder whose final map is already at stride 8
      g.name = "fcn8s_head";
      push_cbr(L, "decoder.head", 2048, 512, 3, h8, w8);
      L.push_back(
          conv_spec("decoder.classifier", 512, n_classes, 1, 1, 1, h8, w8, true));
      L.push_back(resize_spec("decoder.upsample", n_classes, h8, w8, h, w));
      break;
    }
    case DecoderKind::unet_bilinear: {
      g.name = "unet_bilinear";
      L.push_back(resize_spec("decoder.up1", 2048, h32, w32, h16, w16));
      L.push_back(elem_spec("decoder.cat1", LayerKind::concat, 3072, h16, w16));
      push_cbr(L, "decoder.block1a", 3072, 512, 3, h16, w16);
      push_cbr(L, "decoder.block1b", 512, 512, 3, h16, w16);
      L.push_back(resize_spec("decoder.up2", 512, h16, w16, h8, w8));
      L.push_back(elem_spec("decoder.cat2", LayerKind::concat, 1024, h8, w8));
      push_cbr(L, "decoder.block2a", 1024, 512, 3, h8, w8);
      push_cbr(L, "decoder.block2b", 512, 512, 3, h8, w8);
      L.push_back(
          conv_spec("decoder.classifier", 512, n_classes, 1, 1, 1, h8, w8, true));
      L.push_back(resize_spec("decoder.upsample", n_classes, h8, w8, h, w));
      break;
    }
    case DecoderKind::unet_deconv: {
      g.name = "unet_deconv";
      L.push_back(deconv_spec("decoder.up1", 2048, 1024, 4, 2, 1, h32, w32));
      L.push_back(elem_spec("decoder.up1.bn", LayerKind::bn, 1024, h16, w16));
      L.push_back(elem_spec("decoder.up1.relu", LayerKind::relu, 1024, h16, w16));
      L.push_back(elem_spec("decoder.cat1", LayerKind::concat, 2048, h16, w16));
      push_cbr(L, "decoder.block1a", 2048, 512, 3, h16, w16);
      push_cbr(L, "decoder.block1b", 512, 512, 3, h16, w16);
      L.push_back(deconv_spec("decoder.up2", 512, 512, 4, 2, 1, h16, w16));
      L.push_back(elem_spec("decoder.up2.bn", LayerKind::bn, 512, h8, w8));
      L.push_back(elem_spec("decoder.up2.relu", LayerKind::relu, 512, h8, w8));
      L.push_back(elem_spec("decoder.cat2", LayerKind::concat, 1024, h8, w8));
      push_cbr(L, "decoder.block2a", 1024, 512, 3, h8, w8);
      push_cbr(L, "decoder.block2b", 512, 512, 3, h8, w8);
      L.push_back(
          conv_spec("decoder.classifier", 512, n_classes, 1, 1, 1, h8, w8, true));
      L.push_back(resize_spec("decoder.upsample", n_classes, h8, w8, h, w));
      break;
    }
    case DecoderKind::hgd: {
      if (n_codewords < 1)
        throw ConfigError("decoder_graph: need at least 1 codeword");
      g.name = "hgd";
      // per-scale compression, then the two fused bundles
      push_cbr(L, "decoder.compress8", 512, 512, 3, h8, w8);
      push_cbr(L, "decoder.compress16", 1024, 512, 3, h16, w16);
      push_cbr(L, "decoder.compress32", 2048, 512, 3, h32, w32);
      L.push_back(resize_spec("decoder.m32.from8", 512, h8, w8, h32, w32));
      L.push_back(resize_spec("decoder.m32.from16", 512, h16, w16, h32, w32));
      L.push_back(elem_spec("decoder.m32.cat", LayerKind::concat, 1536, h32, w32));
      L.push_back(resize_spec("decoder.m8.from16", 512, h16, w16, h8, w8));
      L.push_back(resize_spec("decoder.m8.from32", 512, h32, w32, h8, w8));
      L.push_back(elem_spec("decoder.m8.cat", LayerKind::concat, 1536, h8, w8));
      // codebook
      push_cbr(L, "decoder.basis", 1536, 1024, 1, h32, w32);
      L.push_back(
          conv_spec("decoder.weighting", 1536, n_codewords, 1, 1, 1, h32, w32, true));
      L.push_back(elem_spec("decoder.weighting.softmax", LayerKind::softmax,
                            n_codewords, h32, w32));
      L.push_back(matmul_spec("decoder.codeword_pool", n_codewords, 1024, h32,
                              w32, h32, w32));
      // assembly
      push_cbr(L, "decoder.guidance", 1536, 1024, 1, h8, w8);
      L.push_back(elem_spec("decoder.guidance.shift", LayerKind::add, 1024, h8, w8));
      L.push_back(
          conv_spec("decoder.coefficients", 1024, n_codewords, 1, 1, 1, h8, w8, true));
      L.push_back(matmul_spec("decoder.assembly", n_codewords, 1024, h32, w32,
                              h8, w8));
      L.push_back(elem_spec("decoder.cat", LayerKind::concat, 2048, h8, w8));
      L.push_back(
          conv_spec("decoder.classifier", 2048, n_classes, 1, 1, 1, h8, w8, true));
      L.push_back(resize_spec("decoder.upsample", n_classes, h8, w8, h, w));
      break;
    }
  }
  return g;
}

ArchGraph model_graph(const std::string& model, int h, int w, int n_codewords,
                      int n_classes) {
  bool dilated = false;
  DecoderKind kind;
  if (model == "fcn32s") {
    kind = DecoderKind::fcn32s_head;
  } else if (model == "dilatedfcn8s") {
    kind = DecoderKind::fcn8s_head;
    dilated = true;
  } else if (model == "unet_bilinear") {
    kind = DecoderKind::unet_bilinear;
  } else if (model == "unet_deconv") {
    kind = DecoderKind::unet_deconv;
  } else if (model == "efficientfcn") {
    kind = DecoderKind::hgd;
  } else {
    throw ConfigError(cat("unknown model '", model, "'"));
  }
  ArchGraph g = resnet101(h, w, dilated);
  ArchGraph dec = decoder_graph(kind, h, w, n_codewords, n_classes);
  g.name = model;
  for (auto& l : dec.layers) g.layers.push_back(std::move(l));
  return g;
}

}  // namespace efcn
