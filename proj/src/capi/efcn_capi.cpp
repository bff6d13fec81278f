#include "efcn/efcn.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/cost.hpp"
#include "core/gradcheck_suite.hpp"
#include "core/inference.hpp"
#include "core/train.hpp"
#include "json.hpp"

using namespace efcn;
using nlohmann::json;

struct efcn_model {
  EfcnModel m;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

// Runs fn, translating the core exception taxonomy onto status codes and
// stashing the message for efcn_last_error.
template <class Fn>
efcn_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return EFCN_OK;
  } catch (const ShapeError& e) {
    g_last_error = e.what();
    return EFCN_ERR_SHAPE;
  } catch (const ValidationError& e) {
    g_last_error = e.what();
    return EFCN_ERR_VALIDATION;
  } catch (const ConfigError& e) {
    g_last_error = e.what();
    return EFCN_ERR_CONFIG;
  } catch (const FormatError& e) {
    g_last_error = e.what();
    return EFCN_ERR_FORMAT;
  } catch (const IoError& e) {
    g_last_error = e.what();
    return EFCN_ERR_IO;
  } catch (const NumericError& e) {
    g_last_error = e.what();
    return EFCN_ERR_NUMERIC;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EFCN_ERR_UNKNOWN;
  } catch (...) {
    g_last_error = "unknown error";
    return EFCN_ERR_UNKNOWN;
  }
}

efcn_status null_arg(const char* what) {
  g_last_error = std::string("null argument: ") + what;
  return EFCN_ERR_NULL_ARG;
}

HarnessConfig config_or_default(const char* config_json) {
  if (!config_json) return default_toy_config();
  return harness_config_from_json(config_json);
}

std::vector<double> parse_scales(const char* csv) {
  if (!csv) return {1.0};
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw ValidationError(cat("scales: bad entry '", tok, "'"));
    }
    if (used != tok.size())
      throw ValidationError(cat("scales: bad entry '", tok, "'"));
    if (!(v > 0)) throw ValidationError("scales: entries must be positive");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("scales: empty list");
  return out;
}

std::vector<int> parse_ints(const char* csv) {
  if (!csv) throw ValidationError("ns: empty list");
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      throw ValidationError(cat("ns: bad entry '", tok, "'"));
    }
    if (used != tok.size()) throw ValidationError(cat("ns: bad entry '", tok, "'"));
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("ns: empty list");
  return out;
}

json metrics_json(const SegMetrics& sm) {
  json j;
  j["pix_acc"] = sm.pix_acc;
  j["mean_iou"] = sm.mean_iou;
  j["per_class_iou"] = sm.per_class_iou;
  j["degenerate"] = sm.degenerate;
  return j;
}

}  // namespace

extern "C" {

const char* efcn_status_name(efcn_status s) {
  switch (s) {
    case EFCN_OK: return "ok";
    case EFCN_ERR_SHAPE: return "shape";
    case EFCN_ERR_VALIDATION: return "validation";
    case EFCN_ERR_CONFIG: return "config";
    case EFCN_ERR_FORMAT: return "format";
    case EFCN_ERR_IO: return "io";
    case EFCN_ERR_NUMERIC: return "numeric";
    case EFCN_ERR_NULL_ARG: return "null-arg";
    case EFCN_ERR_UNKNOWN: return "unknown";
  }
  return "unknown";
}

const char* efcn_last_error(void) { return g_last_error.c_str(); }

const char* efcn_version(void) { return "1.0.0"; }

void efcn_string_free(char* s) { std::free(s); }

efcn_status efcn_model_create(const char* config_json, uint64_t seed,
                              efcn_model** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    HarnessConfig hc = config_or_default(config_json);
    hc.backbone.validate();
    hc.hgd.validate();
    *out = new efcn_model{EfcnModel::make(hc.model(), seed)};
  });
}

efcn_status efcn_model_load(const char* weights_path, efcn_model** out) {
  if (!weights_path) return null_arg("weights_path");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new efcn_model{load_model(weights_path)}; });
}

efcn_status efcn_model_save(efcn_model* m, const char* weights_path) {
  if (!m) return null_arg("model");
  if (!weights_path) return null_arg("weights_path");
  return guarded([&] { save_model(m->m, weights_path); });
}

efcn_status efcn_model_config_json(efcn_model* m, char** json_out) {
  if (!m) return null_arg("model");
  if (!json_out) return null_arg("json_out");
  *json_out = nullptr;
  return guarded([&] { *json_out = dup_string(model_config_to_json(m->m.cfg)); });
}

void efcn_model_free(efcn_model* m) { delete m; }

efcn_status efcn_default_config_json(char** json_out) {
  if (!json_out) return null_arg("json_out");
  *json_out = nullptr;
  return guarded(
      [&] { *json_out = dup_string(harness_config_to_json(default_toy_config())); });
}

efcn_status efcn_train_toy(const char* config_json, const char* jsonl_path,
                           const char* weights_out, int64_t seed_override,
                           char** summary_json_out) {
  if (summary_json_out) *summary_json_out = nullptr;
  return guarded([&] {
    HarnessConfig hc = config_or_default(config_json);
    if (seed_override >= 0) hc.train.seed = u64(seed_override);
    hc.validate();

    std::ofstream jsonl;
    if (jsonl_path) {
      jsonl.open(jsonl_path);
      if (!jsonl) throw IoError(cat("cannot open log '", jsonl_path, "'"));
    }
    SyntheticShapes data(hc.dataset);
    TrainOutcome out =
        train_toy(hc.model(), hc.train, data, jsonl_path ? &jsonl : nullptr);
    if (weights_out) save_model(out.model, weights_out);

    if (summary_json_out) {
      json j;
      j["iters"] = hc.train.max_iters;
      j["final_loss"] = out.log.empty() ? 0.0 : out.log.back().loss;
      j["final"] = metrics_json(out.final_metrics);
      *summary_json_out = dup_string(j.dump(2));
    }
  });
}

efcn_status efcn_infer_image(efcn_model* m, const char* image_path,
                             const char* mask_out_path, const char* scales_csv,
                             int flip) {
  if (!m) return null_arg("model");
  if (!image_path) return null_arg("image_path");
  if (!mask_out_path) return null_arg("mask_out_path");
  return guarded([&] {
    Tensor<float> img = image_to_tensor(read_image(image_path));
    Tensor<float> prob =
        multiscale_infer(m->m, img, parse_scales(scales_csv), flip != 0);
    LabelMap mask = argmax_channel(prob);
    write_image(mask_to_image(mask), mask_out_path);
  });
}

efcn_status efcn_evaluate(efcn_model* m, const char* config_json,
                          const char* scales_csv, int flip,
                          char** metrics_json_out) {
  if (!m) return null_arg("model");
  if (!metrics_json_out) return null_arg("metrics_json_out");
  *metrics_json_out = nullptr;
  return guarded([&] {
    HarnessConfig hc = config_or_default(config_json);
    hc.dataset.validate();
    SyntheticShapes data(hc.dataset);
    std::vector<double> scales =
        scales_csv ? parse_scales(scales_csv) : default_eval_scales();
    SegMetrics sm = evaluate_dataset(m->m, data, scales, flip != 0);
    *metrics_json_out = dup_string(metrics_json(sm).dump(2));
  });
}

efcn_status efcn_export_weightmaps(efcn_model* m, const char* image_path,
                                   const char* out_dir) {
  if (!m) return null_arg("model");
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] {
    Tensor<float> img;
    if (image_path) {
      img = image_to_tensor(read_image(image_path));
    } else {
      DatasetConfig dc;
      dc.height = m->m.cfg.backbone.input_size[0];
      dc.width = m->m.cfg.backbone.input_size[1];
      img = SyntheticShapes(dc).make(0).image;
    }
    export_weightmaps(m->m, img, out_dir);
  });
}

efcn_status efcn_cost_report_json(const char* model_id, int h, int w,
                                  int n_codewords, int n_classes,
                                  int flops_per_mac, int include_bn_relu,
                                  int include_pool_resize, int include_bias,
                                  char** json_out) {
  if (!model_id) return null_arg("model_id");
  if (!json_out) return null_arg("json_out");
  *json_out = nullptr;
  return guarded([&] {
    CountingConvention cv;
    cv.flops_per_mac = flops_per_mac;
    cv.include_bn_relu = include_bn_relu != 0;
    cv.include_pool_resize = include_pool_resize != 0;
    cv.include_bias = include_bias != 0;
    if (cv.flops_per_mac != 1 && cv.flops_per_mac != 2)
      throw ConfigError("flops_per_mac must be 1 or 2");
    CostReport rep = count(model_graph(model_id, h, w, n_codewords, n_classes), cv);
    json j;
    j["graph"] = rep.graph;
    j["total_macs"] = rep.total_macs;
    j["total_params"] = rep.total_params;
    j["gflops"] = rep.gflops();
    j["mparams"] = rep.mparams();
    json layers = json::array();
    for (const auto& lc : rep.per_layer)
      layers.push_back({{"name", lc.name}, {"macs", lc.macs}, {"params", lc.params}});
    j["per_layer"] = layers;
    *json_out = dup_string(j.dump(2));
  });
}

efcn_status efcn_sweep_codewords_json(const char* ns_csv, int h, int w,
                                      int n_classes, char** json_out) {
  if (!json_out) return null_arg("json_out");
  *json_out = nullptr;
  return guarded([&] {
    auto rows = sweep_codewords(parse_ints(ns_csv), h, w, n_classes);
    json j = json::array();
    for (const auto& [n, gf] : rows)
      j.push_back({{"n_codewords", n}, {"gflops", gf}});
    *json_out = dup_string(j.dump(2));
  });
}

efcn_status efcn_gradcheck(int shapes_per_op, double tol, char** report_json_out) {
  if (!report_json_out) return null_arg("report_json_out");
  *report_json_out = nullptr;
  return guarded([&] {
    if (shapes_per_op < 1) throw ValidationError("shapes_per_op must be at least 1");
    if (!(tol > 0)) throw ValidationError("tol must be positive");
    SuiteReport rep = run_gradcheck_suite(shapes_per_op, 1e-5, tol);
    json j;
    j["tol"] = rep.tol;
    j["all_pass"] = rep.all_pass();
    json ops = json::array();
    for (const auto& e : rep.entries)
      ops.push_back({{"op", e.op},
                     {"shapes", e.shapes},
                     {"max_rel_err", e.max_rel_err},
                     {"pass", e.pass}});
    j["ops"] = ops;
    *report_json_out = dup_string(j.dump(2));
  });
}

}  // extern "C"
