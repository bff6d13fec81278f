#include "core/metrics.hpp"

namespace efcn {

void accumulate_confusion(const LabelMap& pred, const LabelMap& label, int K,
                          int ignore_index, std::vector<i64>& confusion) {
  if (K < 1) throw ValidationError("accumulate_confusion: need at least one class");
  if (pred.n != label.n || pred.h != label.h || pred.w != label.w)
    throw ShapeError(cat("accumulate_confusion: pred (", pred.n, ",", pred.h, ",",
                         pred.w, ") vs label (", label.n, ",", label.h, ",",
                         label.w, ")"));
  if (confusion.size() != size_t(K) * K)
    throw ShapeError(cat("accumulate_confusion: matrix size ", confusion.size(),
                         " for K=", K));
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const int t = label.v[i];
    if (t == ignore_index) continue;
    const int p = pred.v[i];
    if (t < 0 || t >= K)
      throw ValidationError(cat("accumulate_confusion: label ", t, " outside [0,", K, ")"));
    if (p < 0 || p >= K)
      throw ValidationError(cat("accumulate_confusion: prediction ", p, " outside [0,", K, ")"));
    ++confusion[size_t(t) * K + p];
  }
}

SegMetrics metrics_from_confusion(std::vector<i64> confusion, int K) {
  if (K < 1 || confusion.size() != size_t(K) * K)
    throw ShapeError(cat("metrics_from_confusion: matrix size ", confusion.size(),
                         " for K=", K));
  SegMetrics m;
  m.n_classes = K;
  m.confusion = std::move(confusion);
  m.per_class_iou.assign(K, 0.0);

  i64 total = 0, correct = 0;
  for (int t = 0; t < K; ++t)
    for (int p = 0; p < K; ++p) {
      const i64 c = m.cell(t, p);
      total += c;
      if (t == p) correct += c;
    }
  if (total == 0) {
    m.degenerate = true;  // nothing to score, report zeros
    return m;
  }
  m.pix_acc = double(correct) / double(total);

  int present = 0;
  double iou_sum = 0.0;
  for (int k = 0; k < K; ++k) {
    i64 tp = m.cell(k, k), fp = 0, fn = 0;
    for (int o = 0; o < K; ++o) {
      if (o == k) continue;
      fp += m.cell(o, k);
      fn += m.cell(k, o);
    }
    const i64 uni = tp + fp + fn;
    if (uni == 0) continue;  // absent from prediction and truth alike
    m.per_class_iou[k] = double(tp) / double(uni);
    iou_sum += m.per_class_iou[k];
    ++present;
  }
  m.mean_iou = present > 0 ? iou_sum / present : 0.0;
  return m;
}

SegMetrics compute_metrics(const LabelMap& pred, const LabelMap& label, int K,
                           int ignore_index) {
  std::vector<i64> confusion(size_t(K) * K, 0);
  accumulate_confusion(pred, label, K, ignore_index, confusion);
  return metrics_from_confusion(std::move(confusion), K);
}

LabelMap argmax_channel(const Tensor<float>& logits) {
  const Shape& s = logits.shape();
  LabelMap out = LabelMap::filled(s.n, s.h, s.w, 0);
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        int best = 0;
        float bv = logits.at(n, 0, y, x);
        for (int c = 1; c < s.c; ++c) {
          const float v = logits.at(n, c, y, x);
          if (v > bv) {  // strict: ties keep the lowest index
            bv = v;
            best = c;
          }
        }
        out.at(n, y, x) = best;
      }
  return out;
}

}  // namespace efcn
