// Acceptance gate: every release-blocking property in one binary, one
// verdict line per criterion.  Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "../decoder_checks.hpp"
#include "core/config.hpp"
#include "core/cost.hpp"
#include "core/gradcheck_suite.hpp"
#include "core/inference.hpp"
#include "core/train.hpp"
#include "core/weights_io.hpp"

using namespace efcn;

namespace {

int g_failures = 0;

void verdict(int idx, bool pass, const std::string& text) {
  std::printf("[%s] %d. %s\n", pass ? "PASS" : "FAIL", idx, text.c_str());
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool within(double value, double ref, double frac) {
  return std::abs(value - ref) <= frac * ref;
}

std::string pct(double value, double ref) {
  return cat(value < ref ? "-" : "+",
             int(std::abs(value - ref) / ref * 1000 + 0.5) / 10.0, "%");
}

// 1. Compute totals of the two reference networks at 512x512, and their ratio.
void criterion_cost_totals() {
  auto t0 = std::chrono::steady_clock::now();
  const double ref_plain = 44.6, ref_dilated = 223.6;

  double plain = count(model_graph("fcn32s", 512, 512, 256, 60)).gflops();
  double dilated = count(model_graph("dilatedfcn8s", 512, 512, 256, 60)).gflops();
  double ratio = dilated / plain;
  double secs = seconds_since(t0);

  bool ok = within(plain, ref_plain, 0.10) && within(dilated, ref_dilated, 0.10) &&
            ratio >= 4.5 && ratio <= 5.5 && secs < 1.0;
  verdict(1, ok,
          cat("compute totals: fcn32s ", plain, " G (ref 44.6, ", pct(plain, ref_plain),
              "), dilatedfcn8s ", dilated, " G (ref 223.6, ", pct(dilated, ref_dilated),
              "), ratio ", ratio, " in [4.5,5.5], ", secs, " s"));
}

// 2. Codeword sweep against the reference curve: +/-10% absolute per point,
//    each successive delta within +/-25% of the reference delta.
void criterion_codeword_sweep() {
  auto t0 = std::chrono::steady_clock::now();
  const std::vector<int> ns = {32, 64, 128, 256, 512, 1024};
  const std::vector<double> ref = {67.9, 68.1, 68.6, 69.6, 72.1, 78.9};

  auto rows = sweep_codewords(ns, 512, 512, 60);
  bool ok = seconds_since(t0) < 1.0;
  std::string abs_note, delta_note;
  for (size_t i = 0; i < ns.size(); ++i) {
    bool hit = within(rows[i].second, ref[i], 0.10);
    ok = ok && hit;
    abs_note += cat(" n=", ns[i], " ", rows[i].second, hit ? "" : "(!)");
  }
  for (size_t i = 1; i < ns.size(); ++i) {
    double d = rows[i].second - rows[i - 1].second;
    double rd = ref[i] - ref[i - 1];
    bool hit = within(d, rd, 0.25);
    ok = ok && hit;
    delta_note += cat(" ", d, "/", rd, hit ? "" : "(!)");
  }
  verdict(2, ok, cat("codeword sweep:", abs_note, "; deltas ours/ref:", delta_note));
}

// 3. Dilation changes no parameter; decoders order as expected.
void criterion_parameters() {
  auto t0 = std::chrono::steady_clock::now();
  i64 plain = count(resnet101(512, 512, false)).total_params;
  i64 dilated = count(resnet101(512, 512, true)).total_params;

  i64 p_fcn = count(model_graph("fcn32s", 512, 512, 256, 60)).total_params;
  i64 p_efcn = count(model_graph("efficientfcn", 512, 512, 256, 60)).total_params;
  i64 p_ub = count(model_graph("unet_bilinear", 512, 512, 256, 60)).total_params;
  i64 p_ud = count(model_graph("unet_deconv", 512, 512, 256, 60)).total_params;
  double secs = seconds_since(t0);

  bool ok = plain == dilated && p_fcn < p_efcn && p_efcn < p_ub && p_ub < p_ud &&
            secs < 1.0;
  verdict(3, ok,
          cat("parameters: backbone plain ", plain, " == dilated ", dilated,
              "; ordering ", p_fcn, " < ", p_efcn, " < ", p_ub, " < ", p_ud));
}

// 4. Finite-difference check of every op and the fused decoder chain.
void criterion_gradients() {
  auto t0 = std::chrono::steady_clock::now();
  SuiteReport rep = run_gradcheck_suite(20, 1e-5, 1e-4, 20200822);
  double secs = seconds_since(t0);

  double worst = 0;
  std::string bad;
  for (const auto& e : rep.entries) {
    worst = std::max(worst, e.max_rel_err);
    if (!e.pass) bad += cat(" ", e.op);
  }
  bool ok = rep.all_pass() && secs < 120.0;
  verdict(4, ok,
          cat("gradients: ", rep.entries.size()," ops x 20 shapes, worst rel err ",
              worst, bad.empty() ? "" : cat(", failing:", bad), ", ", secs, " s"));
}

// 5. Decoder stages against brute-force recomputation, 100 random instances.
void criterion_stage_oracles() {
  auto rep = checks::run_eq_oracles<double>(100, 20200801);
  bool ok = rep.instances == 100 && rep.eq_normalize_err < 1e-6 &&
            rep.eq_codeword_err < 1e-6 && rep.eq_assembly_err < 1e-6;
  verdict(5, ok,
          cat("stage oracles over ", rep.instances, " instances: normalize ",
              rep.eq_normalize_err, ", codeword ", rep.eq_codeword_err,
              ", assembly ", rep.eq_assembly_err, " (tol 1e-6)"));
}

// 6. Structural invariants of the decoder on random toys.
void criterion_invariants() {
  auto rep = checks::run_decoder_invariants(20200803);
  bool ok = rep.norm_err < 1e-5 && rep.hull_excess < 1e-6 && rep.span_resid < 1e-5 &&
            rep.rank_excess <= 0 && rep.perm_diff < 1e-5 && rep.ablation_diff < 1e-7 &&
            rep.params_transfer_on == rep.params_transfer_off;
  verdict(6, ok,
          cat("invariants: weight-map sum err ", rep.norm_err, ", hull excess ",
              rep.hull_excess, ", span residual ", rep.span_resid, ", rank excess ",
              rep.rank_excess, ", permutation diff ", rep.perm_diff,
              ", ablation diff ", rep.ablation_diff));
}

// 7. The toy model learns the synthetic set: mIoU >= 0.90 inside 10 minutes.
void criterion_training() {
  auto t0 = std::chrono::steady_clock::now();
  HarnessConfig hc = default_toy_config();
  SyntheticShapes data(hc.dataset);
  TrainOutcome out = train_toy(hc.model(), hc.train, data);
  double secs = seconds_since(t0);

  double miou = out.final_metrics.mean_iou;
  bool ok = miou >= 0.90 && secs <= 600.0;
  verdict(7, ok,
          cat("toy training: ", hc.train.max_iters, " iters, final mIoU ", miou,
              " (>= 0.90), ", secs, " s (<= 600)"));
}

// 8. Every fusion-scale subset and both transfer modes construct, take a
//    training step, pass a finite-difference check, and match in size.
void criterion_ablation_grid() {
  const std::vector<std::vector<int>> m32sets = {{32}, {16, 32}, {8, 16, 32}};
  const std::vector<std::vector<int>> m8sets = {{8}, {8, 16}, {8, 16, 32}};
  Rng rng(20200811);
  bool ok = true;
  std::string note;
  int combos = 0;

  for (const auto& m32 : m32sets)
    for (const auto& m8 : m8sets) {
      i64 learnable[2] = {0, 0};
      for (int transfer = 1; transfer >= 0; --transfer) {
        ++combos;
        HarnessConfig hc = default_toy_config();
        hc.hgd.m32_scales = m32;
        hc.hgd.m8_scales = m8;
        hc.hgd.codeword_transfer = transfer == 1;
        hc.train.max_iters = 1;
        hc.train.eval_every = 1;
        hc.dataset.n_images = 6;

        // one optimization step end to end
        SyntheticShapes data(hc.dataset);
        TrainOutcome out = train_toy(hc.model(), hc.train, data);
        if (!std::isfinite(out.log.back().loss)) {
          ok = false;
          note += cat(" non-finite loss at m32=", m32.size(), " m8=", m8.size());
        }
        for (auto& p : out.model.collect())
          if (p.learnable && p.name.rfind("decoder", 0) == 0)
            learnable[transfer] += p.tensor.numel();

        // finite differences through the decoder wiring of this combination
        HGDConfig cfg;
        cfg.n_codewords = 2;
        cfg.compress_channels = 2;
        cfg.basis_channels = 3;
        cfg.guidance_channels = 3;
        cfg.n_classes = 3;
        cfg.m32_scales = m32;
        cfg.m8_scales = m8;
        cfg.codeword_transfer = transfer == 1;
        auto params = std::make_shared<HGDParams<double>>(
            HGDParams<double>::make(rng, cfg, 2, 2, 2));
        EncoderFeatures<double> feats;
        auto fill = [&](Shape s) {
          Tensor<double> t = Tensor<double>::zeros(s, true);
          for (i64 i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal();
          return t;
        };
        feats.f32 = fill({1, 2, 2, 2});
        feats.f16 = fill({1, 2, 4, 4});
        feats.f8 = fill({1, 2, 8, 8});
        std::vector<Tensor<double>> inputs = {feats.f8, feats.f16, feats.f32};
        ParamList<double> pl;
        params->collect("d", pl);
        for (auto& p : pl)
          if (p.learnable) inputs.push_back(p.tensor);
        std::vector<double> r;
        for (i64 i = 0; i < i64(cfg.n_classes) * 64 * 64; ++i)
          r.push_back(rng.uniform(-1.0, 1.0));
        auto fn = [=]() {
          auto out = hgd_forward(feats, cfg, *params, 64, 64, true);
          return sum_weighted(out.logits, r);
        };
        GradCheckReport rep = gradcheck(fn, inputs, 1e-5, 1e-4);
        if (!rep.pass) {
          ok = false;
          note += cat(" gradcheck err ", rep.max_rel_err, " at m32=", m32.size(),
                      " m8=", m8.size(), " transfer=", transfer);
        }
      }
      if (learnable[0] != learnable[1]) {
        ok = false;
        note += cat(" size mismatch ", learnable[1], " vs ", learnable[0]);
      }
    }
  verdict(8, ok,
          cat("ablation grid: ", combos,
              " combinations construct, step, and check; transfer on/off sizes equal",
              note));
}

// 9. Bitwise weight round trips and structural graph round trips.
void criterion_serialization() {
  namespace fs = std::filesystem;
  bool ok = true;
  std::string note;

  Rng rng(909);
  std::vector<NamedTensor> set;
  for (int i = 0; i < 8; ++i) {
    NamedTensor t;
    t.name = cat("t", i);
    t.dims = {int(rng.uniform_int(1, 4)), int(rng.uniform_int(1, 4))};
    for (i64 j = 0; j < t.numel(); ++j) t.values.push_back(float(rng.normal()));
    set.push_back(std::move(t));
  }
  auto bytes = encode_weights(set);
  if (!(decode_weights(bytes.data(), bytes.size()) == set)) {
    ok = false;
    note += " in-memory weight round trip broke";
  }

  fs::path dir = fs::temp_directory_path() / "efcn_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  EfcnModel model = EfcnModel::make(default_toy_config().model(), 5);
  save_model(model, (dir / "m.bin").string());
  EfcnModel back = load_model((dir / "m.bin").string());
  save_model(back, (dir / "m2.bin").string());
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  if (slurp(dir / "m.bin") != slurp(dir / "m2.bin")) {
    ok = false;
    note += " checkpoint files differ after reload";
  }
  fs::remove_all(dir);

  for (const std::string id :
       {"fcn32s", "dilatedfcn8s", "unet_bilinear", "unet_deconv", "efficientfcn"}) {
    ArchGraph g = model_graph(id, 256, 512, 128, 21);
    if (!(ArchGraph::from_json(g.to_json()) == g)) {
      ok = false;
      note += cat(" graph round trip broke for ", id);
    }
  }
  verdict(9, ok, cat("serialization: weights bitwise, graphs structural",
                     note.empty() ? "; all round trips hold" : note));
}

}  // namespace

int main() {
  criterion_cost_totals();
  criterion_codeword_sweep();
  criterion_parameters();
  criterion_gradients();
  criterion_stage_oracles();
  criterion_invariants();
  criterion_training();
  criterion_ablation_grid();
  criterion_serialization();

  std::printf("%d of 9 criteria pass\n", 9 - g_failures);
  return g_failures;
}
