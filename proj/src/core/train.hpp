#pragma once

#include <iosfwd>
#include <vector>

#include "core/dataset.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"

namespace efcn {

struct TrainConfig {
  double base_lr = 0.01;
  double power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int max_iters = 2000;
  int crop_h = 64, crop_w = 64;
  double scale_min = 0.5, scale_max = 2.0;
  double flip_prob = 0.5;
  u64 seed = 20200822;
  int batch = 4;
  int eval_every = 250;

  void validate() const {
    if (!(base_lr > 0)) throw ConfigError("TrainConfig: base_lr must be positive");
    if (!(power > 0) || power > 1)
      throw ConfigError("TrainConfig: power must lie in (0,1]");
    if (momentum < 0 || momentum >= 1)
      throw ConfigError("TrainConfig: momentum must lie in [0,1)");
    if (weight_decay < 0) throw ConfigError("TrainConfig: negative weight_decay");
    if (max_iters < 1) throw ConfigError("TrainConfig: max_iters must be at least 1");
    if (crop_h < 32 || crop_w < 32 || crop_h % 32 || crop_w % 32)
      throw ConfigError("TrainConfig: crop must be a positive multiple of 32");
    if (!(scale_min > 0) || scale_max < scale_min)
      throw ConfigError("TrainConfig: bad scale_range");
    if (flip_prob < 0 || flip_prob > 1) throw ConfigError("TrainConfig: bad flip_prob");
    if (batch < 1) throw ConfigError("TrainConfig: batch must be at least 1");
    if (eval_every < 1) throw ConfigError("TrainConfig: eval_every must be at least 1");
  }
};

// base_lr * (1 - iter/max_iters)^power
double poly_lr(int iter, const TrainConfig& cfg);

// Momentum SGD with decoupled-from-nothing classic weight decay folded into
// the gradient: v <- momentum*v + g + wd*p; p <- p - lr*v.
struct SgdState {
  std::vector<Tensor<float>> velocity;  // parallel to the parameter list
};

void sgd_step(ParamList<float>& params, double lr, const TrainConfig& cfg,
              SgdState& state);

struct TrainRecord {
  int iter = 0;
  double lr = 0, loss = 0, pix_acc = 0, mean_iou = 0;
};

struct TrainOutcome {
  EfcnModel model;
  std::vector<TrainRecord> log;
  SegMetrics final_metrics;
};

// Full toy run: deterministic in cfg.seed; evaluates over the whole dataset
// every eval_every iterations and at the end, optionally appending one JSON
// object per record to jsonl.
TrainOutcome train_toy(const ModelConfig& mcfg, const TrainConfig& cfg,
                       const SyntheticShapes& data, std::ostream* jsonl = nullptr);

}  // namespace efcn
