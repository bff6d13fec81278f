#pragma once

#include <string>

#include "core/backbone.hpp"

namespace efcn {

struct ModelConfig {
  BackboneConfig backbone;
  HGDConfig hgd;

  void validate() const {
    backbone.validate();
    hgd.validate();
  }
};

// Toy encoder plus the guided decoder, the network the harness trains.
struct EfcnModel {
  ModelConfig cfg;
  ToyBackbone<float> encoder;
  HGDParams<float> decoder;

  static EfcnModel make(const ModelConfig& cfg, u64 seed);

  Tensor<float> forward(const Tensor<float>& image, bool training);
  HGDOutput<float> forward_full(const Tensor<float>& image, bool training);
  ParamList<float> collect();
};

// Weight file plus a '<path>.json' sidecar holding the model configuration,
// so a checkpoint reconstructs the network it came from.
void save_model(EfcnModel& model, const std::string& weights_path);
EfcnModel load_model(const std::string& weights_path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace efcn
