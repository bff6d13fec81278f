#include "core/config.hpp"

#include <fstream>

#include "json.hpp"

namespace efcn {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& what) {
  throw FormatError(cat("config: ", what));
}

void reject_unknown(const json& o, std::initializer_list<const char*> known,
                    const char* section) {
  for (auto it = o.begin(); it != o.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) bad(cat("unknown key '", it.key(), "' in ", section));
  }
}

template <class T>
void get_to(const json& o, const char* key, T& out) {
  if (auto it = o.find(key); it != o.end()) {
    try {
      it->get_to(out);
    } catch (const json::exception& e) {
      bad(cat("bad value for '", key, "': ", e.what()));
    }
  }
}

template <class T, size_t N>
void get_array(const json& o, const char* key, std::array<T, N>& out) {
  if (auto it = o.find(key); it != o.end()) {
    if (!it->is_array() || it->size() != N)
      bad(cat("'", key, "' must be an array of ", N, " entries"));
    for (size_t i = 0; i < N; ++i) {
      try {
        out[i] = it->at(i).get<T>();
      } catch (const json::exception& e) {
        bad(cat("bad value in '", key, "': ", e.what()));
      }
    }
  }
}

json backbone_to_json(const BackboneConfig& c) {
  return json{{"stem_channels", c.stem_channels},
              {"stage_channels", c.stage_channels},
              {"blocks_per_stage", c.blocks_per_stage},
              {"input_size", c.input_size}};
}

BackboneConfig backbone_from_json(BackboneConfig c, const json& o) {
  reject_unknown(o, {"stem_channels", "stage_channels", "blocks_per_stage", "input_size"},
                 "backbone");
  get_to(o, "stem_channels", c.stem_channels);
  get_array(o, "stage_channels", c.stage_channels);
  get_array(o, "blocks_per_stage", c.blocks_per_stage);
  get_array(o, "input_size", c.input_size);
  return c;
}

json hgd_to_json(const HGDConfig& c) {
  return json{{"n_codewords", c.n_codewords},
              {"compress_channels", c.compress_channels},
              {"basis_channels", c.basis_channels},
              {"guidance_channels", c.guidance_channels},
              {"m32_scales", c.m32_scales},
              {"m8_scales", c.m8_scales},
              {"codeword_transfer", c.codeword_transfer},
              {"n_classes", c.n_classes}};
}

HGDConfig hgd_from_json(HGDConfig c, const json& o) {
  reject_unknown(o,
                 {"n_codewords", "compress_channels", "basis_channels",
                  "guidance_channels", "m32_scales", "m8_scales",
                  "codeword_transfer", "n_classes"},
                 "hgd");
  get_to(o, "n_codewords", c.n_codewords);
  get_to(o, "compress_channels", c.compress_channels);
  get_to(o, "basis_channels", c.basis_channels);
  get_to(o, "guidance_channels", c.guidance_channels);
  get_to(o, "m32_scales", c.m32_scales);
  get_to(o, "m8_scales", c.m8_scales);
  get_to(o, "codeword_transfer", c.codeword_transfer);
  get_to(o, "n_classes", c.n_classes);
  return c;
}

json train_to_json(const TrainConfig& c) {
  return json{{"base_lr", c.base_lr},
              {"power", c.power},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"max_iters", c.max_iters},
              {"crop", {c.crop_h, c.crop_w}},
              {"scale_range", {c.scale_min, c.scale_max}},
              {"flip_prob", c.flip_prob},
              {"seed", c.seed},
              {"batch", c.batch},
              {"eval_every", c.eval_every}};
}

TrainConfig train_from_json(TrainConfig c, const json& o) {
  reject_unknown(o,
                 {"base_lr", "power", "momentum", "weight_decay", "max_iters",
                  "crop", "scale_range", "flip_prob", "seed", "batch", "eval_every"},
                 "train");
  get_to(o, "base_lr", c.base_lr);
  get_to(o, "power", c.power);
  get_to(o, "momentum", c.momentum);
  get_to(o, "weight_decay", c.weight_decay);
  get_to(o, "max_iters", c.max_iters);
  std::array<int, 2> crop = {c.crop_h, c.crop_w};
  get_array(o, "crop", crop);
  c.crop_h = crop[0];
  c.crop_w = crop[1];
  std::array<double, 2> sr = {c.scale_min, c.scale_max};
  get_array(o, "scale_range", sr);
  c.scale_min = sr[0];
  c.scale_max = sr[1];
  get_to(o, "flip_prob", c.flip_prob);
  get_to(o, "seed", c.seed);
  get_to(o, "batch", c.batch);
  get_to(o, "eval_every", c.eval_every);
  return c;
}

json dataset_to_json(const DatasetConfig& c) {
  return json{{"n_images", c.n_images}, {"height", c.height},
              {"width", c.width},       {"n_classes", c.n_classes},
              {"seed", c.seed},         {"ignore_band", c.ignore_band}};
}

DatasetConfig dataset_from_json(DatasetConfig c, const json& o) {
  reject_unknown(o, {"n_images", "height", "width", "n_classes", "seed", "ignore_band"},
                 "dataset");
  get_to(o, "n_images", c.n_images);
  get_to(o, "height", c.height);
  get_to(o, "width", c.width);
  get_to(o, "n_classes", c.n_classes);
  get_to(o, "seed", c.seed);
  get_to(o, "ignore_band", c.ignore_band);
  return c;
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    bad(e.what());
  }
}

}  // namespace

std::string harness_config_to_json(const HarnessConfig& cfg) {
  json j{{"backbone", backbone_to_json(cfg.backbone)},
         {"hgd", hgd_to_json(cfg.hgd)},
         {"train", train_to_json(cfg.train)},
         {"dataset", dataset_to_json(cfg.dataset)}};
  return j.dump(2);
}

HarnessConfig harness_config_from_json(const std::string& text) {
  const json j = parse(text);
  if (!j.is_object()) bad("top level must be an object");
  reject_unknown(j, {"backbone", "hgd", "train", "dataset"}, "the document");
  // Documents override the toy defaults key by key, so a partial file
  // tweaks one knob without restating the rest.
  HarnessConfig cfg = default_toy_config();
  if (j.contains("backbone")) cfg.backbone = backbone_from_json(cfg.backbone, j.at("backbone"));
  if (j.contains("hgd")) cfg.hgd = hgd_from_json(cfg.hgd, j.at("hgd"));
  if (j.contains("train")) cfg.train = train_from_json(cfg.train, j.at("train"));
  if (j.contains("dataset")) cfg.dataset = dataset_from_json(cfg.dataset, j.at("dataset"));
  return cfg;
}

HarnessConfig load_harness_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(cat(path, ": cannot open for reading"));
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  try {
    return harness_config_from_json(text);
  } catch (const FormatError& e) {
    throw FormatError(cat(path, ": ", e.what()));
  }
}

HarnessConfig default_toy_config() {
  HarnessConfig cfg;
  cfg.backbone.stem_channels = 24;
  cfg.backbone.stage_channels = {32, 48, 64};
  cfg.backbone.blocks_per_stage = {2, 2, 2};
  cfg.backbone.input_size = {64, 64};
  cfg.hgd.n_codewords = 16;
  cfg.hgd.compress_channels = 48;
  cfg.hgd.basis_channels = 64;
  cfg.hgd.guidance_channels = 64;
  cfg.hgd.n_classes = 4;
  return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j{{"backbone", backbone_to_json(cfg.backbone)}, {"hgd", hgd_to_json(cfg.hgd)}};
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  const json j = parse(text);
  if (!j.is_object()) bad("top level must be an object");
  reject_unknown(j, {"backbone", "hgd"}, "the model document");
  ModelConfig cfg;
  if (j.contains("backbone")) cfg.backbone = backbone_from_json(cfg.backbone, j.at("backbone"));
  if (j.contains("hgd")) cfg.hgd = hgd_from_json(cfg.hgd, j.at("hgd"));
  return cfg;
}

}  // namespace efcn
