#include "core/train.hpp"

#include <cmath>
#include <ostream>

#include "core/ops.hpp"

namespace efcn {

double poly_lr(int iter, const TrainConfig& cfg) {
  cfg.validate();
  if (iter < 0 || iter > cfg.max_iters)
    throw ValidationError(cat("poly_lr: iteration ", iter, " outside [0,",
                              cfg.max_iters, "]"));
  return cfg.base_lr *
         std::pow(1.0 - double(iter) / double(cfg.max_iters), cfg.power);
}

void sgd_step(ParamList<float>& params, double lr, const TrainConfig& cfg,
              SgdState& state) {
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (auto& p : params)
      state.velocity.push_back(Tensor<float>::zeros(p.tensor.shape()));
  }
  if (state.velocity.size() != params.size())
    throw ShapeError(cat("sgd_step: state holds ", state.velocity.size(),
                         " velocities for ", params.size(), " parameters"));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.learnable) continue;  // running statistics keep their own dynamics
    Tensor<float>& v = state.velocity[i];
    if (!(v.shape() == p.tensor.shape()))
      throw ShapeError(cat("sgd_step: velocity ", v.shape().str(),
                           " vs parameter '", p.name, "' ", p.tensor.shape().str()));
    const float* g = p.tensor.has_grad() ? p.tensor.grad().data() : nullptr;
    float* vp = v.data();
    float* pp = p.tensor.data();
    const float m = float(cfg.momentum), wd = float(cfg.weight_decay);
    const float flr = float(lr);
    for (i64 j = 0; j < p.tensor.numel(); ++j) {
      vp[j] = m * vp[j] + (g ? g[j] : 0.0f) + wd * pp[j];
      pp[j] -= flr * vp[j];
    }
  }
}

namespace {

SegMetrics eval_over(EfcnModel& model, const SyntheticShapes& data) {
  NoGradGuard guard;
  const int K = model.cfg.hgd.n_classes;
  std::vector<i64> confusion(size_t(K) * K, 0);
  for (int i = 0; i < data.size(); ++i) {
    Sample s = data.make(i);
    Tensor<float> logits = model.forward(s.image, false);
    accumulate_confusion(argmax_channel(logits), s.label, K, 255, confusion);
  }
  return metrics_from_confusion(std::move(confusion), K);
}

void log_record(std::ostream* jsonl, const TrainRecord& r) {
  if (!jsonl) return;
  (*jsonl) << "{\"iter\":" << r.iter << ",\"lr\":" << r.lr
           << ",\"loss\":" << r.loss << ",\"pix_acc\":" << r.pix_acc
           << ",\"mean_iou\":" << r.mean_iou << "}\n";
}

}  // namespace

TrainOutcome train_toy(const ModelConfig& mcfg, const TrainConfig& cfg,
                       const SyntheticShapes& data, std::ostream* jsonl) {
  cfg.validate();
  TrainOutcome out;
  out.model = EfcnModel::make(mcfg, cfg.seed);
  Rng rng(cfg.seed ^ 0xda7a5e7);

  std::vector<Sample> cache;
  cache.reserve(size_t(data.size()));
  for (int i = 0; i < data.size(); ++i) cache.push_back(data.make(i));

  ParamList<float> params = out.model.collect();
  SgdState state;
  double last_loss = 0;

  for (int it = 0; it < cfg.max_iters; ++it) {
    Tensor<float> images =
        Tensor<float>::zeros({cfg.batch, 3, cfg.crop_h, cfg.crop_w});
    LabelMap labels = LabelMap::filled(cfg.batch, cfg.crop_h, cfg.crop_w, 255);
    for (int b = 0; b < cfg.batch; ++b) {
      const Sample& pick = cache[size_t(rng.uniform_int(0, data.size() - 1))];
      Sample crop = augment_sample(pick, cfg.crop_h, cfg.crop_w, cfg.scale_min,
                                   cfg.scale_max, cfg.flip_prob, rng);
      const i64 px = i64(cfg.crop_h) * cfg.crop_w;
      for (int c = 0; c < 3; ++c)
        std::copy_n(crop.image.data() + i64(c) * px, px,
                    images.data() + (i64(b) * 3 + c) * px);
      std::copy_n(crop.label.v.begin(), px, labels.v.begin() + i64(b) * px);
    }

    Tensor<float> logits = out.model.forward(images, true);
    Tensor<float> loss = cross_entropy_mask(logits, labels, 255);
    last_loss = loss.data()[0];
    if (!std::isfinite(last_loss))
      throw NumericError(cat("train_toy: loss diverged at iteration ", it));
    loss.backward();
    sgd_step(params, poly_lr(it, cfg), cfg, state);

    const int done = it + 1;
    if (done % cfg.eval_every == 0 || done == cfg.max_iters) {
      SegMetrics m = eval_over(out.model, data);
      TrainRecord r{done, poly_lr(it, cfg), last_loss, m.pix_acc, m.mean_iou};
      out.log.push_back(r);
      log_record(jsonl, r);
      out.final_metrics = std::move(m);
    }
  }
  return out;
}

}  // namespace efcn
