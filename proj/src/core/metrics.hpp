#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace efcn {

// Segmentation scores over a K-class confusion matrix indexed [truth][pred].
struct SegMetrics {
  int n_classes = 0;
  double pix_acc = 0.0;
  std::vector<double> per_class_iou;  // 0 for classes absent from pred and truth
  double mean_iou = 0.0;              // mean over classes present in the union
  std::vector<i64> confusion;         // K*K row-major
  bool degenerate = false;            // every pixel ignored

  i64& cell(int truth, int pred) { return confusion[size_t(truth) * n_classes + pred]; }
  i64 cell(int truth, int pred) const { return confusion[size_t(truth) * n_classes + pred]; }
};

// Accumulate one prediction/label pair into a K*K confusion matrix.
void accumulate_confusion(const LabelMap& pred, const LabelMap& label, int K,
                          int ignore_index, std::vector<i64>& confusion);

// Scores from a finished confusion matrix; merging partial matrices by
// element-wise addition first gives identical results.
SegMetrics metrics_from_confusion(std::vector<i64> confusion, int K);

SegMetrics compute_metrics(const LabelMap& pred, const LabelMap& label, int K,
                           int ignore_index = 255);

// Argmax over channels; ties go to the lowest class index.
LabelMap argmax_channel(const Tensor<float>& logits);

}  // namespace efcn
