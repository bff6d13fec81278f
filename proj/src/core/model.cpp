#include "core/model.hpp"

#include <fstream>

#include "core/weights_io.hpp"

namespace efcn {

EfcnModel EfcnModel::make(const ModelConfig& cfg, u64 seed) {
  cfg.validate();
  EfcnModel m;
  m.cfg = cfg;
  Rng rng(seed);
  m.encoder = ToyBackbone<float>::make(rng, cfg.backbone);
  m.decoder = HGDParams<float>::make(rng, cfg.hgd, cfg.backbone.stage_channels[0],
                                     cfg.backbone.stage_channels[1],
                                     cfg.backbone.stage_channels[2]);
  return m;
}

Tensor<float> EfcnModel::forward(const Tensor<float>& image, bool training) {
  return forward_full(image, training).logits;
}

HGDOutput<float> EfcnModel::forward_full(const Tensor<float>& image, bool training) {
  EncoderFeatures<float> feats = forward_toy(image, cfg.backbone, encoder, training);
  const Shape& s = image.shape();
  return hgd_forward(feats, cfg.hgd, decoder, s.h, s.w, training);
}

ParamList<float> EfcnModel::collect() {
  ParamList<float> out;
  encoder.collect("encoder", out);
  decoder.collect("decoder", out);
  return out;
}

void save_model(EfcnModel& model, const std::string& weights_path) {
  ParamList<float> params = model.collect();
  save_weights(snapshot_params(params), weights_path);
  const std::string sidecar = weights_path + ".json";
  std::ofstream out(sidecar);
  if (!out) throw IoError(cat(sidecar, ": cannot open for writing"));
  out << model_config_to_json(model.cfg) << "\n";
  if (!out) throw IoError(cat(sidecar, ": write failed"));
}

EfcnModel load_model(const std::string& weights_path) {
  const std::string sidecar = weights_path + ".json";
  std::ifstream in(sidecar);
  if (!in)
    throw IoError(cat(sidecar, ": cannot open the checkpoint's config sidecar"));
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  EfcnModel model = EfcnModel::make(model_config_from_json(text), 0);
  ParamList<float> params = model.collect();
  restore_params(params, load_weights(weights_path));
  return model;
}

}  // namespace efcn
