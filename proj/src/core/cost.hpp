#pragma once

#include <string>
#include <utility>
#include <vector>

#include "core/archgraph.hpp"
#include "core/common.hpp"

namespace efcn {

// What counts toward the totals. The default mirrors the usual reporting
// style for segmentation networks: one MAC per multiply-add, convolutions
// and matrix contractions only, bias vectors counted as parameters.
struct CountingConvention {
  int flops_per_mac = 1;
  bool include_bn_relu = false;     // BN/ReLU/softmax/add as elementwise flops
  bool include_pool_resize = false; // pooling windows and bilinear taps
  bool include_bias = true;         // parameters only; bias adds no MACs here

  bool operator==(const CountingConvention&) const = default;
};

struct LayerCost {
  std::string name;
  i64 macs = 0;
  i64 params = 0;
};

struct CostReport {
  std::string graph;
  CountingConvention convention;
  std::vector<LayerCost> per_layer;
  i64 total_macs = 0;
  i64 total_params = 0;

  double gflops() const {
    return static_cast<double>(total_macs) * convention.flops_per_mac / 1e9;
  }
  double mparams() const { return static_cast<double>(total_params) / 1e6; }
};

// Validates the graph, then tallies exact 64-bit counts per layer.
CostReport count(const ArchGraph& g, const CountingConvention& cv = {});

struct CompareRow {
  std::string name;
  i64 macs = 0;
  i64 params = 0;
  double ratio = 0.0;  // macs relative to the named baseline
};

// Rows sorted by ascending MACs. All reports must share one convention.
std::vector<CompareRow> compare(const std::vector<CostReport>& reports,
                                const std::string& baseline);

// Total model cost of the guided decoder network per codeword count.
std::vector<std::pair<int, double>> sweep_codewords(const std::vector<int>& ns,
                                                    int h, int w, int n_classes,
                                                    const CountingConvention& cv = {});

}  // namespace efcn
