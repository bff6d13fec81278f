// Command line front end.  Talks to the core exclusively through the C API,
// the same boundary any other language binding would use.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "efcn/efcn.h"
#include "json.hpp"

using nlohmann::json;

namespace {

// Releases C API strings on scope exit.
struct CStr {
  char* p = nullptr;
  ~CStr() { efcn_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct ModelHandle {
  efcn_model* m = nullptr;
  ~ModelHandle() { efcn_model_free(m); }
};

[[noreturn]] void die(efcn_status s) {
  std::fprintf(stderr, "error (%s): %s\n", efcn_status_name(s), efcn_last_error());
  std::exit(1);
}

void check(efcn_status s) {
  if (s != EFCN_OK) die(s);
}

std::string read_file(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) {
    std::fprintf(stderr, "error (io): cannot open '%s'\n", path.c_str());
    std::exit(1);
  }
  std::string out;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, n);
  std::fclose(f);
  return out;
}

// "512x512" -> (512, 512)
void parse_hw(const std::string& s, int& h, int& w) {
  size_t x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument("no x");
    h = std::stoi(s.substr(0, x));
    w = std::stoi(s.substr(x + 1));
  } catch (const std::exception&) {
    std::fprintf(stderr, "error (validation): --input expects HxW, got '%s'\n",
                 s.c_str());
    std::exit(1);
  }
}

// CLI model ids are hyphenated; the core uses underscores.
std::string core_model_id(std::string id) {
  for (char& c : id)
    if (c == '-') c = '_';
  return id;
}

std::string join_csv(const std::vector<double>& v) {
  std::string out;
  for (double x : v) {
    if (!out.empty()) out += ',';
    out += std::to_string(x);
  }
  return out;
}

void print_flops_table(const json& rep, bool per_layer) {
  std::printf("%-28s %14s %14s\n", "layer", "MACs", "params");
  if (per_layer)
    for (const auto& l : rep["per_layer"])
      std::printf("%-28s %14lld %14lld\n", l["name"].get<std::string>().c_str(),
                  static_cast<long long>(l["macs"].get<int64_t>()),
                  static_cast<long long>(l["params"].get<int64_t>()));
  std::printf("%-28s %14lld %14lld\n", "total",
              static_cast<long long>(rep["total_macs"].get<int64_t>()),
              static_cast<long long>(rep["total_params"].get<int64_t>()));
  std::printf("%-28s %11.2f G  %10.2f M\n", rep["graph"].get<std::string>().c_str(),
              rep["gflops"].get<double>(), rep["mparams"].get<double>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EfficientFCN holistically-guided decoder toolkit"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train the toy model");
  std::string train_config, train_log = "train_log.jsonl",
              train_weights = "efcn_toy.bin";
  long long train_seed = -1;
  train->add_option("--config", train_config, "Harness config JSON file");
  train->add_option("--seed", train_seed, "Override the training seed");
  train->add_option("--log", train_log, "Metric log path (JSON lines)");
  train->add_option("--weights-out", train_weights, "Checkpoint output path");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the dataset");
  std::string eval_weights, eval_config;
  std::vector<double> eval_scales;
  bool eval_flip = false;
  eval->add_option("--weights", eval_weights, "Checkpoint path")->required();
  eval->add_option("--scales", eval_scales, "Evaluation scales")->expected(-1);
  eval->add_flag("--flip", eval_flip, "Add mirrored passes");
  eval->add_option("--config", eval_config, "Config file for the dataset section");

  // infer
  auto* infer = app.add_subcommand("infer", "Label one image");
  std::string infer_weights, infer_image, infer_out;
  std::vector<double> infer_scales;
  bool infer_flip = false;
  infer->add_option("--weights", infer_weights, "Checkpoint path")->required();
  infer->add_option("--image", infer_image, "Input image (PGM/PPM)")->required();
  infer->add_option("--out", infer_out, "Output mask path (PGM)")->required();
  infer->add_option("--scales", infer_scales, "Inference scales")->expected(-1);
  infer->add_flag("--flip", infer_flip, "Add mirrored passes");

  // flops
  auto* flops = app.add_subcommand("flops", "Compute/parameter report");
  std::string flops_model = "efficientfcn", flops_input = "512x512";
  int flops_codewords = 256, flops_classes = 60, flops_per_mac = 1;
  bool flops_bn = false, flops_pool = false, flops_no_bias = false,
       flops_json = false, flops_layers = false;
  flops->add_option("--model", flops_model,
                    "fcn32s|dilatedfcn8s|unet-bilinear|unet-deconv|efficientfcn");
  flops->add_option("--input", flops_input, "Input size HxW");
  flops->add_option("--codewords", flops_codewords, "Codeword count n");
  flops->add_option("--classes", flops_classes, "Output classes");
  flops->add_option("--per-mac", flops_per_mac, "FLOPs per MAC (1 or 2)");
  flops->add_flag("--include-bn", flops_bn, "Count BN/ReLU/softmax/add");
  flops->add_flag("--include-pool", flops_pool, "Count pooling and resize");
  flops->add_flag("--no-bias", flops_no_bias, "Drop bias parameters");
  flops->add_flag("--json", flops_json, "Emit raw JSON");
  flops->add_flag("--per-layer", flops_layers, "List every layer");

  // sweep-codewords
  auto* sweep = app.add_subcommand("sweep-codewords", "Model cost per codeword count");
  std::string sweep_ns = "32,64,128,256,512,1024", sweep_input = "512x512";
  int sweep_classes = 60;
  bool sweep_json = false;
  sweep->add_option("--ns", sweep_ns, "Comma separated codeword counts");
  sweep->add_option("--input", sweep_input, "Input size HxW");
  sweep->add_option("--classes", sweep_classes, "Output classes");
  sweep->add_flag("--json", sweep_json, "Emit raw JSON");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  double gc_tol = 1e-4;
  int gc_shapes = 20;
  gc->add_option("--tol", gc_tol, "Max relative error");
  gc->add_option("--shapes", gc_shapes, "Random shapes per op");

  // export-weightmaps
  auto* wm = app.add_subcommand("export-weightmaps", "Dump codeword weighting maps");
  std::string wm_weights, wm_image, wm_out = "weightmaps";
  wm->add_option("--weights", wm_weights, "Checkpoint path (default: fresh model)");
  wm->add_option("--image", wm_image, "Input image (default: synthetic sample 0)");
  wm->add_option("--out", wm_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  if (*train) {
    std::string cfg;
    if (!train_config.empty()) cfg = read_file(train_config);
    CStr summary;
    check(efcn_train_toy(cfg.empty() ? nullptr : cfg.c_str(), train_log.c_str(),
                         train_weights.c_str(), train_seed, &summary.p));
    std::printf("%s\n", summary.str().c_str());
    std::printf("weights: %s\nlog:     %s\n", train_weights.c_str(),
                train_log.c_str());
  } else if (*eval) {
    ModelHandle mh;
    check(efcn_model_load(eval_weights.c_str(), &mh.m));
    std::string cfg;
    if (!eval_config.empty()) cfg = read_file(eval_config);
    std::string scales = join_csv(eval_scales);
    CStr metrics;
    check(efcn_evaluate(mh.m, cfg.empty() ? nullptr : cfg.c_str(),
                        scales.empty() ? nullptr : scales.c_str(),
                        eval_flip ? 1 : 0, &metrics.p));
    std::printf("%s\n", metrics.str().c_str());
  } else if (*infer) {
    ModelHandle mh;
    check(efcn_model_load(infer_weights.c_str(), &mh.m));
    std::string scales = join_csv(infer_scales);
    check(efcn_infer_image(mh.m, infer_image.c_str(), infer_out.c_str(),
                           scales.empty() ? nullptr : scales.c_str(),
                           infer_flip ? 1 : 0));
    std::printf("mask: %s\n", infer_out.c_str());
  } else if (*flops) {
    int h = 0, w = 0;
    parse_hw(flops_input, h, w);
    CStr rep;
    check(efcn_cost_report_json(core_model_id(flops_model).c_str(), h, w,
                                flops_codewords, flops_classes, flops_per_mac,
                                flops_bn ? 1 : 0, flops_pool ? 1 : 0,
                                flops_no_bias ? 0 : 1, &rep.p));
    if (flops_json)
      std::printf("%s\n", rep.str().c_str());
    else
      print_flops_table(json::parse(rep.str()), flops_layers);
  } else if (*sweep) {
    int h = 0, w = 0;
    parse_hw(sweep_input, h, w);
    CStr rep;
    check(efcn_sweep_codewords_json(sweep_ns.c_str(), h, w, sweep_classes, &rep.p));
    if (sweep_json) {
      std::printf("%s\n", rep.str().c_str());
    } else {
      std::printf("%10s %10s\n", "codewords", "GFLOPs");
      for (const auto& row : json::parse(rep.str()))
        std::printf("%10d %10.2f\n", row["n_codewords"].get<int>(),
                    row["gflops"].get<double>());
    }
  } else if (*gc) {
    CStr rep;
    check(efcn_gradcheck(gc_shapes, gc_tol, &rep.p));
    json j = json::parse(rep.str());
    for (const auto& e : j["ops"])
      std::printf("%-24s shapes %3d  max rel err %.3e  %s\n",
                  e["op"].get<std::string>().c_str(), e["shapes"].get<int>(),
                  e["max_rel_err"].get<double>(),
                  e["pass"].get<bool>() ? "ok" : "FAIL");
    bool ok = j["all_pass"].get<bool>();
    std::printf("gradcheck: %s (tol %.1e)\n", ok ? "all ops pass" : "FAILURES",
                j["tol"].get<double>());
    return ok ? 0 : 1;
  } else if (*wm) {
    ModelHandle mh;
    if (!wm_weights.empty())
      check(efcn_model_load(wm_weights.c_str(), &mh.m));
    else
      check(efcn_model_create(nullptr, 1, &mh.m));
    check(efcn_export_weightmaps(mh.m, wm_image.empty() ? nullptr : wm_image.c_str(),
                                 wm_out.c_str()));
    std::printf("weightmaps: %s\n", wm_out.c_str());
  }
  return 0;
}
