#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "core/config.hpp"
#include "core/inference.hpp"
#include "core/ops.hpp"
#include "core/train.hpp"
#include "doctest.h"

using namespace efcn;
namespace fs = std::filesystem;

namespace {

Tensor<float> randn(Shape s, Rng& rng) {
  Tensor<float> t = Tensor<float>::zeros(s);
  for (i64 i = 0; i < t.numel(); ++i) t.data()[i] = float(rng.normal());
  return t;
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

fs::path scratch_dir(const char* leaf) {
  fs::path p = fs::temp_directory_path() / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("the poly schedule starts at base_lr and anneals to zero") {
  TrainConfig cfg;
  cfg.base_lr = 0.001;
  cfg.power = 0.9;
  cfg.max_iters = 1000;

  CHECK(poly_lr(0, cfg) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(poly_lr(1000, cfg) == 0.0);
  // halfway point, written out: 0.001 * 0.5^0.9
  CHECK(poly_lr(500, cfg) == doctest::Approx(0.001 * std::pow(0.5, 0.9)).epsilon(1e-12));
  CHECK(poly_lr(500, cfg) == doctest::Approx(5.358867e-4).epsilon(1e-6));

  double prev = poly_lr(0, cfg);
  for (int it = 1; it <= 1000; ++it) {
    double lr = poly_lr(it, cfg);
    CHECK(lr < prev);
    prev = lr;
  }

  CHECK_THROWS_AS(poly_lr(-1, cfg), ValidationError);
  CHECK_THROWS_AS(poly_lr(1001, cfg), ValidationError);
}

TEST_CASE("sgd with zero learning rate leaves parameters untouched") {
  Rng rng(5);
  ParamList<float> params;
  params.push_back({"w", randn({1, 2, 3, 3}, rng), true});
  params.push_back({"b", randn({1, 2, 1, 1}, rng), true});
  for (auto& p : params)
    for (i64 i = 0; i < p.tensor.numel(); ++i)
      p.tensor.grad()[size_t(i)] = float(rng.normal());

  std::vector<std::vector<float>> before;
  for (auto& p : params) before.push_back(p.tensor.values());

  TrainConfig cfg;
  SgdState state;
  sgd_step(params, 0.0, cfg, state);
  sgd_step(params, 0.0, cfg, state);
  for (size_t i = 0; i < params.size(); ++i)
    CHECK(params[i].tensor.values() == before[i]);
}

TEST_CASE("two sgd steps match the momentum recurrence unrolled by hand") {
  TrainConfig cfg;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.01;
  const double lr = 0.1;

  ParamList<float> params;
  params.push_back({"p", Tensor<float>::from_data({1, 1, 1, 2}, {1.0f, -2.0f}), true});
  SgdState state;

  // step 1 with grads (0.5, 0.25)
  params[0].tensor.grad() = {0.5f, 0.25f};
  sgd_step(params, lr, cfg, state);
  // v1 = g + wd*p0; p1 = p0 - lr*v1
  float v1a = 0.5f + 0.01f * 1.0f, v1b = 0.25f + 0.01f * -2.0f;
  float p1a = 1.0f - 0.1f * v1a, p1b = -2.0f - 0.1f * v1b;
  CHECK(params[0].tensor.values()[0] == doctest::Approx(p1a).epsilon(1e-7));
  CHECK(params[0].tensor.values()[1] == doctest::Approx(p1b).epsilon(1e-7));

  // step 2 with grads (-0.1, 0.3) picks up the velocity
  params[0].tensor.grad()[0] = -0.1f;
  params[0].tensor.grad()[1] = 0.3f;
  sgd_step(params, lr, cfg, state);
  float v2a = 0.9f * v1a + -0.1f + 0.01f * p1a;
  float v2b = 0.9f * v1b + 0.3f + 0.01f * p1b;
  CHECK(params[0].tensor.values()[0] == doctest::Approx(p1a - 0.1f * v2a).epsilon(1e-6));
  CHECK(params[0].tensor.values()[1] == doctest::Approx(p1b - 0.1f * v2b).epsilon(1e-6));

  SUBCASE("a frozen entry is skipped") {
    params.push_back({"stat", Tensor<float>::from_data({1, 1, 1, 1}, {7.0f}), false});
    SgdState fresh;
    params[1].tensor.grad() = {100.0f};
    sgd_step(params, lr, cfg, fresh);
    CHECK(params[1].tensor.values()[0] == 7.0f);
  }

  SUBCASE("a grown parameter list no longer matches the state") {
    params.push_back({"extra", Tensor<float>::zeros({1, 1, 1, 1}), true});
    CHECK_THROWS_AS(sgd_step(params, lr, cfg, state), ShapeError);
  }
}

TEST_CASE("metrics match a confusion matrix worked out on paper") {
  // 2 classes over 4 pixels: truth (0,0,1,1), pred (0,1,1,1)
  LabelMap truth = LabelMap::filled(1, 2, 2, 0);
  truth.at(0, 1, 0) = 1;
  truth.at(0, 1, 1) = 1;
  LabelMap pred = truth;
  pred.at(0, 0, 1) = 1;

  SegMetrics sm = compute_metrics(pred, truth, 2);
  CHECK(sm.pix_acc == doctest::Approx(0.75));
  // class 0: TP 1, FP 0, FN 1 -> 1/2.  class 1: TP 2, FP 1, FN 0 -> 2/3
  CHECK(sm.per_class_iou[0] == doctest::Approx(0.5));
  CHECK(sm.per_class_iou[1] == doctest::Approx(2.0 / 3.0));
  CHECK(sm.mean_iou == doctest::Approx(0.5 * (0.5 + 2.0 / 3.0)));
  CHECK(sm.cell(0, 0) == 1);
  CHECK(sm.cell(0, 1) == 1);
  CHECK(sm.cell(1, 0) == 0);
  CHECK(sm.cell(1, 1) == 2);
  // rows sum to ground-truth counts
  CHECK(sm.cell(0, 0) + sm.cell(0, 1) == 2);

  SUBCASE("a perfect prediction scores 1.0 everywhere") {
    SegMetrics p = compute_metrics(truth, truth, 2);
    CHECK(p.pix_acc == 1.0);
    CHECK(p.mean_iou == 1.0);
    CHECK_FALSE(p.degenerate);
  }

  SUBCASE("ignored pixels do not enter the matrix") {
    truth.at(0, 0, 1) = 255;  // the one mistaken pixel
    SegMetrics sm2 = compute_metrics(pred, truth, 2);
    CHECK(sm2.pix_acc == 1.0);
    CHECK(sm2.cell(0, 1) == 0);
  }

  SUBCASE("an all-ignored frame is flagged, not averaged") {
    LabelMap blank = LabelMap::filled(1, 2, 2, 255);
    SegMetrics z = compute_metrics(pred, blank, 2);
    CHECK(z.degenerate);
    CHECK(z.pix_acc == 0.0);
    CHECK(z.mean_iou == 0.0);
  }

  SUBCASE("labels outside the class range are rejected") {
    LabelMap bad = truth;
    bad.at(0, 0, 0) = 9;
    CHECK_THROWS_AS(compute_metrics(pred, bad, 2), ValidationError);
    LabelMap badp = pred;
    badp.at(0, 0, 0) = -1;
    CHECK_THROWS_AS(compute_metrics(badp, truth, 2), ValidationError);
  }
}

TEST_CASE("a class absent from truth and prediction is left out of the mean") {
  LabelMap truth = LabelMap::filled(1, 1, 4, 0);
  truth.at(0, 0, 2) = 1;
  truth.at(0, 0, 3) = 1;
  SegMetrics sm = compute_metrics(truth, truth, 4);  // classes 2,3 never occur
  CHECK(sm.per_class_iou[2] == 0.0);
  CHECK(sm.per_class_iou[3] == 0.0);
  CHECK(sm.mean_iou == 1.0);  // mean over classes 0 and 1 only
}

TEST_CASE("relabeling classes permutes the scores without changing them") {
  Rng rng(11);
  const int K = 4;
  LabelMap truth = LabelMap::filled(1, 8, 8, 0);
  LabelMap pred = truth;
  for (int i = 0; i < 64; ++i) {
    truth.v[size_t(i)] = int(rng.uniform_int(0, K - 1));
    pred.v[size_t(i)] = rng.uniform() < 0.3 ? int(rng.uniform_int(0, K - 1))
                                            : truth.v[size_t(i)];
  }
  SegMetrics base = compute_metrics(pred, truth, K);

  const int perm[K] = {2, 0, 3, 1};
  LabelMap truth_p = truth, pred_p = pred;
  for (int i = 0; i < 64; ++i) {
    truth_p.v[size_t(i)] = perm[truth.v[size_t(i)]];
    pred_p.v[size_t(i)] = perm[pred.v[size_t(i)]];
  }
  SegMetrics moved = compute_metrics(pred_p, truth_p, K);

  CHECK(moved.pix_acc == base.pix_acc);
  CHECK(moved.mean_iou == doctest::Approx(base.mean_iou).epsilon(1e-12));
  for (int c = 0; c < K; ++c)
    CHECK(moved.per_class_iou[size_t(perm[c])] ==
          doctest::Approx(base.per_class_iou[size_t(c)]).epsilon(1e-12));
}

TEST_CASE("argmax breaks ties toward the lowest class index") {
  Tensor<float> logits = Tensor<float>::zeros({1, 3, 1, 2});
  // pixel 0: all equal -> class 0.  pixel 1: classes 1 and 2 tie above 0 -> 1
  logits.at(0, 0, 0, 1) = -1.0f;
  logits.at(0, 1, 0, 1) = 2.0f;
  logits.at(0, 2, 0, 1) = 2.0f;
  LabelMap m = argmax_channel(logits);
  CHECK(m.at(0, 0, 0) == 0);
  CHECK(m.at(0, 0, 1) == 1);
}

TEST_CASE("the synthetic dataset is deterministic and covers every class") {
  DatasetConfig dc;
  SyntheticShapes data(dc);

  Sample a = data.make(17), b = data.make(17);
  CHECK(a.image.values() == b.image.values());
  CHECK(a.label.v == b.label.v);

  std::set<int> seen;
  bool any_ignore = false;
  for (int i = 0; i < data.size(); ++i) {
    Sample s = data.make(i);
    for (float v : s.image.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    for (int lab : s.label.v) {
      if (lab == 255) {
        any_ignore = true;
        continue;
      }
      CHECK(lab >= 0);
      CHECK(lab < dc.n_classes);
      seen.insert(lab);
    }
  }
  CHECK(seen.size() == size_t(dc.n_classes));
  CHECK(any_ignore);  // boundary bands exist

  SUBCASE("different seeds give different scenes") {
    DatasetConfig dc2 = dc;
    dc2.seed = 1234;
    Sample c = SyntheticShapes(dc2).make(17);
    CHECK(a.image.values() != c.image.values());
  }
}

TEST_CASE("augmentation crops to size and pads labels with ignore") {
  DatasetConfig dc;
  SyntheticShapes data(dc);
  Sample s = data.make(0);

  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    Sample out = augment_sample(s, 64, 64, 0.5, 2.0, 0.5, rng);
    CHECK(out.image.shape() == Shape{1, 3, 64, 64});
    CHECK(out.label.h == 64);
    CHECK(out.label.w == 64);
    for (int lab : out.label.v)
      CHECK((lab == 255 || (lab >= 0 && lab < dc.n_classes)));
  }

  SUBCASE("flip_prob one mirrors image and labels together") {
    Rng r1(7);
    Sample flipped = augment_sample(s, 64, 64, 1.0, 1.0, 1.0, r1);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        CHECK(flipped.label.at(0, y, x) == s.label.at(0, y, 63 - x));
        CHECK(flipped.image.at(0, 1, y, x) == s.image.at(0, 1, y, 63 - x));
      }
  }

  SUBCASE("a downscale smaller than the crop pads with mid-gray and ignore") {
    Rng r2(3);
    Sample padded = augment_sample(s, 64, 64, 0.4, 0.4, 0.0, r2);
    int ignored = 0;
    for (int lab : padded.label.v)
      if (lab == 255) ++ignored;
    // a 26x26 scene inside a 64x64 window leaves most labels void
    CHECK(ignored > 64 * 64 / 2);
  }
}

TEST_CASE("pnm files round-trip bitwise and reject malformed headers") {
  fs::path dir = scratch_dir("efcn_pnm_test");
  Rng rng(21);

  ImageU8 rgb = ImageU8::filled(5, 7, 3, 0);
  for (auto& px : rgb.pixels) px = std::uint8_t(rng.uniform_int(0, 255));
  write_image(rgb, (dir / "x.ppm").string());
  ImageU8 back = read_image((dir / "x.ppm").string());
  CHECK(back.h == 5);
  CHECK(back.w == 7);
  CHECK(back.channels == 3);
  CHECK(back.pixels == rgb.pixels);

  ImageU8 gray = ImageU8::filled(4, 4, 1, 0);
  for (auto& px : gray.pixels) px = std::uint8_t(rng.uniform_int(0, 255));
  write_image(gray, (dir / "g.pgm").string());
  CHECK(read_image((dir / "g.pgm").string()).pixels == gray.pixels);

  SUBCASE("comments in the header are skipped") {
    std::ofstream f(dir / "c.pgm", std::ios::binary);
    f << "P5 # magic\n# a comment line\n2 1\n# another\n255\nAB";
    f.close();
    ImageU8 img = read_image((dir / "c.pgm").string());
    CHECK(img.w == 2);
    CHECK(img.pixels[0] == 'A');
  }

  SUBCASE("bad magic, wrong maxval and truncation all fail loudly") {
    std::ofstream(dir / "bad1.pgm", std::ios::binary) << "P4\n2 2\n255\nabcd";
    CHECK_THROWS_AS(read_image((dir / "bad1.pgm").string()), FormatError);
    std::ofstream(dir / "bad2.pgm", std::ios::binary) << "P5\n2 2\n65535\nabcd";
    CHECK_THROWS_AS(read_image((dir / "bad2.pgm").string()), FormatError);
    std::ofstream(dir / "bad3.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
    CHECK_THROWS_WITH_AS(read_image((dir / "bad3.pgm").string()),
                         doctest::Contains("expected 16"), FormatError);
    CHECK_THROWS_AS(read_image((dir / "absent.pgm").string()), IoError);
  }

  SUBCASE("tensor conversion is exact for 8-bit data") {
    Tensor<float> t = image_to_tensor(rgb);
    CHECK(t.shape() == Shape{1, 3, 5, 7});
    ImageU8 again = tensor_to_image(t);
    CHECK(again.pixels == rgb.pixels);
  }

  SUBCASE("masks store class ids as gray levels") {
    LabelMap m = LabelMap::filled(1, 2, 2, 3);
    m.at(0, 1, 1) = 255;
    ImageU8 img = mask_to_image(m);
    CHECK(img.channels == 1);
    CHECK(img.at(0, 0, 0) == 3);
    CHECK(img.at(1, 1, 0) == 255);
  }

  fs::remove_all(dir);
}

TEST_CASE("single-scale inference equals the plain forward pass bitwise") {
  HarnessConfig hc = default_toy_config();
  EfcnModel model = EfcnModel::make(hc.model(), 31);
  Rng rng(8);
  Tensor<float> image = randn({1, 3, 64, 64}, rng);

  Tensor<float> plain;
  {
    NoGradGuard off;
    plain = softmax_channel(model.forward(image, false));
  }
  Tensor<float> multi = multiscale_infer(model, image, {1.0}, false);
  CHECK(same_values(plain, multi));

  SUBCASE("probabilities stay normalized across scales and flips") {
    Tensor<float> p = multiscale_infer(model, image, {0.75, 1.0, 1.5}, true);
    CHECK(p.shape() == Shape{1, 4, 64, 64});
    for (int y = 0; y < 64; y += 13)
      for (int x = 0; x < 64; x += 13) {
        double sum = 0;
        for (int c = 0; c < 4; ++c) sum += p.at(0, c, y, x);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-4));
      }
  }

  SUBCASE("scaling pads inputs that stop being multiples of 32") {
    // 0.6 * 64 = 38.4 -> a 38x38 run padded up to 64
    Tensor<float> p = multiscale_infer(model, image, {0.6}, false);
    CHECK(p.shape() == Shape{1, 4, 64, 64});
    CHECK(p.all_finite());
  }

  SUBCASE("flip averaging symmetrizes the output of a symmetric input") {
    // Convolutions are not reflection-equivariant, so even on a mirror
    // symmetric image the flipped pass differs from the plain one; what the
    // two-pass mean guarantees is an output with the input's symmetry.
    Tensor<float> sym = image;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 32; ++x)
          sym.at(0, c, y, 63 - x) = sym.at(0, c, y, x);
    Tensor<float> averaged = multiscale_infer(model, sym, {1.0}, true);
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 32; ++x)
          CHECK(averaged.at(0, c, y, x) == averaged.at(0, c, y, 63 - x));
  }

  SUBCASE("flipped passes average exactly as a two-term mean") {
    Tensor<float> averaged = multiscale_infer(model, image, {1.0}, true);
    Tensor<float> pass1 = multiscale_infer(model, image, {1.0}, false);
    Tensor<float> mirrored;
    {
      NoGradGuard off;
      Tensor<float> back = softmax_channel(model.forward(flip_w(image), false));
      mirrored = flip_w(back);
    }
    for (i64 i = 0; i < averaged.numel(); ++i)
      CHECK(averaged.data()[i] ==
            doctest::Approx(0.5f * (pass1.data()[i] + mirrored.data()[i]))
                .epsilon(1e-6));
  }
}

TEST_CASE("weighting maps normalize to mid-gray or full range as designed") {
  Tensor<float> maps = Tensor<float>::zeros({1, 2, 3, 3});
  for (int i = 0; i < 9; ++i) maps.data()[i] = 0.42f;  // map 0 constant
  maps.at(0, 1, 1, 2) = 1.0f;                          // map 1 one-hot

  ImageU8 flat = normalize_map_to_image(maps, 0);
  for (auto px : flat.pixels) CHECK(px == 128);

  ImageU8 hot = normalize_map_to_image(maps, 1);
  CHECK(hot.at(1, 2, 0) == 255);
  int whites = 0;
  for (auto px : hot.pixels)
    if (px == 255) ++whites;
  CHECK(whites == 1);
  CHECK(hot.at(0, 0, 0) == 0);
}

TEST_CASE("a short training run is reproducible record for record") {
  HarnessConfig hc = default_toy_config();
  hc.train.max_iters = 6;
  hc.train.eval_every = 3;
  SyntheticShapes data(hc.dataset);

  std::ostringstream log1, log2;
  TrainOutcome a = train_toy(hc.model(), hc.train, data, &log1);
  TrainOutcome b = train_toy(hc.model(), hc.train, data, &log2);

  CHECK(log1.str() == log2.str());
  REQUIRE(a.log.size() == 2);
  CHECK(a.log[0].iter == 3);
  CHECK(a.log[1].iter == 6);
  for (const auto& rec : a.log) {
    CHECK(std::isfinite(rec.loss));
    CHECK(rec.lr > 0.0);
  }
  CHECK(a.final_metrics.n_classes == 4);

  // the two models agree parameter for parameter
  ParamList<float> pa = a.model.collect(), pb = b.model.collect();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].tensor.values() == pb[i].tensor.values());
}

TEST_CASE("a trained model survives the checkpoint round trip") {
  fs::path dir = scratch_dir("efcn_ckpt_test");
  HarnessConfig hc = default_toy_config();
  hc.train.max_iters = 2;
  hc.train.eval_every = 2;
  SyntheticShapes data(hc.dataset);
  TrainOutcome out = train_toy(hc.model(), hc.train, data);

  std::string path = (dir / "toy.bin").string();
  save_model(out.model, path);
  EfcnModel back = load_model(path);

  Rng rng(4);
  Tensor<float> probe = randn({1, 3, 64, 64}, rng);
  NoGradGuard off;
  CHECK(same_values(out.model.forward(probe, false), back.forward(probe, false)));
  fs::remove_all(dir);
}

TEST_CASE("config documents override the toy defaults key by key") {
  HarnessConfig cfg = harness_config_from_json(R"({"train": {"max_iters": 7}})");
  CHECK(cfg.train.max_iters == 7);
  CHECK(cfg.train.base_lr == default_toy_config().train.base_lr);
  CHECK(cfg.hgd.n_codewords == 16);  // toy default, not the full-size 256

  HarnessConfig none = harness_config_from_json("{}");
  CHECK(none.hgd.basis_channels == default_toy_config().hgd.basis_channels);

  SUBCASE("bad knobs are caught by validation") {
    TrainConfig t;
    t.base_lr = 0.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.power = 1.5;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.momentum = 1.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.crop_h = 48;  // not a multiple of 32
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.batch = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.scale_min = 2.0;
    t.scale_max = 0.5;
    CHECK_THROWS_AS(t.validate(), ConfigError);
  }
}
