#pragma once

#include <string>

#include "core/dataset.hpp"
#include "core/model.hpp"
#include "core/train.hpp"

namespace efcn {

// One JSON document drives the harness.  Sections and keys mirror the
// config struct fields; absent sections and keys keep the toy defaults,
// unknown keys are rejected so typos cannot silently fall back.
struct HarnessConfig {
  BackboneConfig backbone;
  HGDConfig hgd;
  TrainConfig train;
  DatasetConfig dataset;

  ModelConfig model() const { return {backbone, hgd}; }

  void validate() const {
    backbone.validate();
    hgd.validate();
    train.validate();
    dataset.validate();
  }
};

std::string harness_config_to_json(const HarnessConfig& cfg);
HarnessConfig harness_config_from_json(const std::string& text);

HarnessConfig load_harness_config(const std::string& path);

// The toy setup the acceptance run and the CLI default to: small decoder
// widths sized for CPU training on the shape dataset.
HarnessConfig default_toy_config();

}  // namespace efcn
