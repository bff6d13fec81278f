#include "core/gradcheck_suite.hpp"

#include <functional>
#include <memory>

#include "core/hgd.hpp"

namespace efcn {
namespace {

using Td = Tensor<double>;

Td randn(Rng& rng, Shape s, double scale = 1.0) {
  Td t = Td::zeros(s, true);
  for (i64 i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, scale);
  return t;
}

// Random reduction weights: a plain sum would let symmetric errors cancel.
std::vector<double> mix(Rng& rng, i64 n) {
  std::vector<double> r(static_cast<size_t>(n));
  for (auto& v : r) v = rng.uniform(-1.0, 1.0);
  return r;
}

struct Instance {
  std::vector<Td> inputs;
  std::function<Td()> fn;
};

using Maker = std::function<Instance(Rng&)>;

void run_op(SuiteReport& rep, Rng& rng, const std::string& name, int shapes,
            double eps, double tol, const Maker& make) {
  SuiteEntry e;
  e.op = name;
  e.shapes = shapes;
  for (int i = 0; i < shapes; ++i) {
    Instance inst;
    for (int attempt = 0;; ++attempt) {
      inst = make(rng);
      KinkTracker::reset();
      {
        NoGradGuard ng;
        (void)inst.fn();
      }
      double margin = KinkTracker::min_abs();
      KinkTracker::disarm();
      // FD probes move each preactivation by O(eps); stay well clear of kinks.
      if (margin > 512.0 * eps) break;
      if (attempt == 63)
        throw NumericError(cat("gradcheck suite: ", name,
                               " kept sampling relu inputs at the kink"));
    }
    GradCheckReport r = gradcheck(inst.fn, inst.inputs, eps, tol);
    e.max_rel_err = std::max(e.max_rel_err, r.max_rel_err);
    if (!r.pass) e.pass = false;
  }
  rep.entries.push_back(e);
}

Instance make_conv1x1(Rng& rng) {
  int n = rng.uniform_int(1, 2), ci = rng.uniform_int(1, 4), co = rng.uniform_int(1, 4);
  int h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
  Td x = randn(rng, {n, ci, h, w});
  Td wt = randn(rng, {co, ci, 1, 1});
  Td b = randn(rng, {1, co, 1, 1});
  Instance inst{{x, wt, b}, nullptr};
  auto r = mix(rng, i64(n) * co * h * w);
  inst.fn = [=]() { return sum_weighted(conv1x1(x, wt, b), r); };
  return inst;
}

Instance make_conv2d(Rng& rng) {
  int n = rng.uniform_int(1, 2), ci = rng.uniform_int(1, 3), co = rng.uniform_int(1, 3);
  int k = rng.uniform_int(2, 3), s = rng.uniform_int(1, 2), d = rng.uniform_int(1, 2);
  int p = d * (k - 1) / 2;
  int h = rng.uniform_int(4, 6), w = rng.uniform_int(4, 6);
  Td x = randn(rng, {n, ci, h, w});
  Td wt = randn(rng, {co, ci, k, k});
  Td b = randn(rng, {1, co, 1, 1});
  Instance inst{{x, wt, b}, nullptr};
  int oh = (h + 2 * p - d * (k - 1) - 1) / s + 1;
  int ow = (w + 2 * p - d * (k - 1) - 1) / s + 1;
  auto r = mix(rng, i64(n) * co * oh * ow);
  inst.fn = [=]() { return sum_weighted(conv2d(x, wt, b, s, p, d), r); };
  return inst;
}

Instance make_batch_norm(Rng& rng, bool training) {
  int n = 2, c = rng.uniform_int(1, 3);
  int h = rng.uniform_int(2, 4), w = rng.uniform_int(2, 4);
  Td x = randn(rng, {n, c, h, w});
  Td gamma = randn(rng, {1, c, 1, 1});
  Td beta = randn(rng, {1, c, 1, 1});
  Td rm = Td::zeros({1, c, 1, 1});
  Td rv = Td::full({1, c, 1, 1}, 1.0);
  if (!training)
    for (int i = 0; i < c; ++i) {
      rm.data()[i] = rng.normal();
      rv.data()[i] = rng.uniform(0.5, 2.0);
    }
  Instance inst{{x, gamma, beta}, nullptr};
  auto r = mix(rng, x.numel());
  inst.fn = [=]() mutable {
    return sum_weighted(batch_norm(x, gamma, beta, rm, rv, training), r);
  };
  return inst;
}

Instance make_relu(Rng& rng) {
  int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 4);
  int h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
  Td x = randn(rng, {n, c, h, w});
  Instance inst{{x}, nullptr};
  auto r = mix(rng, x.numel());
  inst.fn = [=]() { return sum_weighted(relu(x), r); };
  return inst;
}

Instance make_bilinear(Rng& rng) {
  int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
  int h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
  int oh = rng.uniform_int(1, 7), ow = rng.uniform_int(1, 7);
  Td x = randn(rng, {n, c, h, w});
  Instance inst{{x}, nullptr};
  auto r = mix(rng, i64(n) * c * oh * ow);
  inst.fn = [=]() { return sum_weighted(bilinear_resize(x, oh, ow), r); };
  return inst;
}

Instance make_softmax_spatial(Rng& rng) {
  int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
  int h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
  Td x = randn(rng, {n, c, h, w});
  Instance inst{{x}, nullptr};
  auto r = mix(rng, x.numel());
  inst.fn = [=]() { return sum_weighted(softmax_spatial(x), r); };
  return inst;
}

Instance make_softmax_channel(Rng& rng) {
  int n = rng.uniform_int(1, 2), c = rng.uniform_int(2, 4);
  int h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
  Td x = randn(rng, {n, c, h, w});
  Instance inst{{x}, nullptr};
  auto r = mix(rng, x.numel());
  inst.fn = [=]() { return sum_weighted(softmax_channel(x), r); };
  return inst;
}

Instance make_concat(Rng& rng) {
  int n = rng.uniform_int(1, 2), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
  int parts = rng.uniform_int(2, 3);
  std::vector<Td> xs;
  i64 total = 0;
  for (int i = 0; i < parts; ++i) {
    int c = rng.uniform_int(1, 3);
    xs.push_back(randn(rng, {n, c, h, w}));
    total += i64(n) * c * h * w;
  }
  Instance inst{xs, nullptr};
  auto r = mix(rng, total);
  inst.fn = [=]() { return sum_weighted(concat_channels(xs), r); };
  return inst;
}

Instance make_weighted_pool(Rng& rng) {
  int n = rng.uniform_int(1, 2), d = rng.uniform_int(1, 4), k = rng.uniform_int(1, 3);
  int h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
  Td basis = randn(rng, {n, d, h, w});
  Td weights = randn(rng, {n, k, h, w});
  Instance inst{{basis, weights}, nullptr};
  auto r = mix(rng, i64(n) * d * k);
  inst.fn = [=]() { return sum_weighted(weighted_pool(basis, weights), r); };
  return inst;
}

Instance make_assemble(Rng& rng) {
  int n = rng.uniform_int(1, 2), d = rng.uniform_int(1, 4), k = rng.uniform_int(1, 3);
  int h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
  Td coeff = randn(rng, {n, k, h, w});
  Td codewords = randn(rng, {n, d, k, 1});
  Instance inst{{coeff, codewords}, nullptr};
  auto r = mix(rng, i64(n) * d * h * w);
  inst.fn = [=]() { return sum_weighted(assemble(coeff, codewords), r); };
  return inst;
}

Instance make_global_avg(Rng& rng) {
  int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 4);
  int h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
  Td x = randn(rng, {n, c, h, w});
  Instance inst{{x}, nullptr};
  auto r = mix(rng, i64(n) * c);
  inst.fn = [=]() { return sum_weighted(global_avg(x), r); };
  return inst;
}

Instance make_add_broadcast(Rng& rng) {
  int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 4);
  int h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
  Td x = randn(rng, {n, c, h, w});
  Td v = randn(rng, {n, c, 1, 1});
  Instance inst{{x, v}, nullptr};
  auto r = mix(rng, x.numel());
  inst.fn = [=]() { return sum_weighted(add_broadcast(x, v), r); };
  return inst;
}

Instance make_cross_entropy(Rng& rng) {
  int n = rng.uniform_int(1, 2), k = rng.uniform_int(2, 4);
  int h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
  Td logits = randn(rng, {n, k, h, w});
  auto labels = std::make_shared<LabelMap>(LabelMap::filled(n, h, w, 0));
  for (auto& l : labels->v)
    l = rng.uniform(0.0, 1.0) < 0.2 ? 255 : rng.uniform_int(0, k - 1);
  labels->v[0] = 0;  // keep at least one contributing pixel
  Instance inst{{logits}, nullptr};
  inst.fn = [=]() { return cross_entropy_mask(logits, *labels, 255); };
  return inst;
}

Instance make_conv_bn_relu(Rng& rng) {
  int n = 2, ci = rng.uniform_int(1, 3), co = rng.uniform_int(1, 3);
  int k = rng.uniform_int(0, 1) == 0 ? 1 : 3;
  int h = rng.uniform_int(3, 5), w = rng.uniform_int(3, 5);
  auto block = std::make_shared<ConvBnRelu<double>>(
      ConvBnRelu<double>::make(rng, co, ci, k));
  Td x = randn(rng, {n, ci, h, w});
  Instance inst{{x, block->w, block->gamma, block->beta}, nullptr};
  auto r = mix(rng, i64(n) * co * h * w);
  inst.fn = [=]() { return sum_weighted(block->forward(x, true), r); };
  return inst;
}

Instance make_sum_weighted(Rng& rng) {
  int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 4);
  int h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
  Td x = randn(rng, {n, c, h, w});
  Instance inst{{x}, nullptr};
  auto r = mix(rng, x.numel());
  inst.fn = [=]() { return sum_weighted(x, r); };
  return inst;
}

Instance make_flip(Rng& rng) {
  int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
  int h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 5);
  Td x = randn(rng, {n, c, h, w});
  Instance inst{{x}, nullptr};
  auto r = mix(rng, x.numel());
  inst.fn = [=]() { return sum_weighted(flip_w(x), r); };
  return inst;
}

// The whole decoder as one graph: fusion, codebook, assembly, prediction.
// Scale subsets and codeword transfer are rotated so every wiring variant
// gets differentiated end to end.
Instance make_hgd_chain(Rng& rng) {
  HGDConfig cfg;
  cfg.n_codewords = rng.uniform_int(2, 3);
  cfg.compress_channels = rng.uniform_int(2, 3);
  cfg.basis_channels = rng.uniform_int(3, 4);
  cfg.guidance_channels = rng.uniform_int(3, 4);
  cfg.n_classes = 3;
  const std::vector<std::vector<int>> m32opts = {{32}, {16, 32}, {8, 32}, {8, 16, 32}};
  const std::vector<std::vector<int>> m8opts = {{8}, {8, 16}, {8, 32}, {8, 16, 32}};
  cfg.m32_scales = m32opts[size_t(rng.uniform_int(0, 3))];
  cfg.m8_scales = m8opts[size_t(rng.uniform_int(0, 3))];
  cfg.codeword_transfer = rng.uniform_int(0, 1) == 1;
  if (cfg.codeword_transfer) cfg.guidance_channels = cfg.basis_channels;

  int c8 = rng.uniform_int(2, 3), c16 = rng.uniform_int(2, 3), c32 = rng.uniform_int(2, 3);
  int h32 = 2, w32 = rng.uniform_int(2, 3);
  auto params = std::make_shared<HGDParams<double>>(
      HGDParams<double>::make(rng, cfg, c8, c16, c32));

  EncoderFeatures<double> feats;
  feats.f32 = randn(rng, {1, c32, h32, w32});
  feats.f16 = randn(rng, {1, c16, 2 * h32, 2 * w32});
  feats.f8 = randn(rng, {1, c8, 4 * h32, 4 * w32});

  Instance inst;
  inst.inputs = {feats.f8, feats.f16, feats.f32};
  ParamList<double> pl;
  params->collect("hgd", pl);
  for (auto& p : pl)
    if (p.learnable) inst.inputs.push_back(p.tensor);

  const int out_h = 8 * feats.f8.shape().h, out_w = 8 * feats.f8.shape().w;
  auto r = mix(rng, i64(cfg.n_classes) * out_h * out_w);
  inst.fn = [=]() {
    auto out = hgd_forward(feats, cfg, *params, out_h, out_w, true);
    return sum_weighted(out.logits, r);
  };
  return inst;
}

}  // namespace

SuiteReport run_gradcheck_suite(int shapes_per_op, double eps, double tol, u64 seed) {
  Rng rng(seed);
  SuiteReport rep;
  rep.tol = tol;
  auto run = [&](const std::string& name, const Maker& make) {
    run_op(rep, rng, name, shapes_per_op, eps, tol, make);
  };
  run("conv1x1", make_conv1x1);
  run("conv2d", make_conv2d);
  run("batch_norm_train", [](Rng& r) { return make_batch_norm(r, true); });
  run("batch_norm_eval", [](Rng& r) { return make_batch_norm(r, false); });
  run("relu", make_relu);
  run("bilinear_resize", make_bilinear);
  run("softmax_spatial", make_softmax_spatial);
  run("softmax_channel", make_softmax_channel);
  run("concat_channels", make_concat);
  run("weighted_pool", make_weighted_pool);
  run("assemble", make_assemble);
  run("global_avg", make_global_avg);
  run("add_broadcast", make_add_broadcast);
  run("cross_entropy_mask", make_cross_entropy);
  run("conv_bn_relu", make_conv_bn_relu);
  run("sum_weighted", make_sum_weighted);
  run("flip_w", make_flip);
  run("hgd_chain", make_hgd_chain);
  return rep;
}

}  // namespace efcn
