#include "core/cost.hpp"

#include <algorithm>

namespace efcn {

namespace {

i64 px(const LayerSpec& l) {
  return static_cast<i64>(l.out_h) * l.out_w;
}

i64 layer_macs(const LayerSpec& l, const CountingConvention& cv) {
  const i64 cin = l.c_in, cout = l.c_out, k = static_cast<i64>(l.kh) * l.kw;
  switch (l.kind) {
    case LayerKind::conv:
      return cin * cout * k * px(l) / l.groups;
    case LayerKind::deconv:
      // every input pixel scatters a full kernel's worth of products
      return cin * cout * k * l.in_h * l.in_w / l.groups;
    case LayerKind::fc:
      return cin * cout;
    case LayerKind::matmul:
      return cin * cout * px(l);
    case LayerKind::bn:
      return cv.include_bn_relu ? 2 * cout * px(l) : 0;
    case LayerKind::relu:
    case LayerKind::add:
      return cv.include_bn_relu ? cout * px(l) : 0;
    case LayerKind::softmax:
      return cv.include_bn_relu ? 3 * cout * px(l) : 0;
    case LayerKind::pool:
      return cv.include_pool_resize ? k * cout * px(l) : 0;
    case LayerKind::bilinear:
      return cv.include_pool_resize ? 4 * cout * px(l) : 0;
    case LayerKind::concat:
      return 0;
  }
  throw ValidationError("layer_macs: unknown kind");
}

i64 layer_params(const LayerSpec& l, const CountingConvention& cv) {
  const i64 cin = l.c_in, cout = l.c_out, k = static_cast<i64>(l.kh) * l.kw;
  const i64 b = cv.include_bias && l.bias ? cout : 0;
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::deconv:
      return cin * cout * k / l.groups + b;
    case LayerKind::fc:
      return cin * cout + b;
    case LayerKind::bn:
      return 2 * cout;  // scale and shift; running stats are not learnable
    default:
      return 0;
  }
}

}  // namespace

CostReport count(const ArchGraph& g, const CountingConvention& cv) {
  g.validate();
  CostReport r;
  r.graph = g.name;
  r.convention = cv;
  r.per_layer.reserve(g.layers.size());
  for (const auto& l : g.layers) {
    LayerCost c;
    c.name = l.name;
    c.macs = layer_macs(l, cv);
    c.params = layer_params(l, cv);
    r.total_macs += c.macs;
    r.total_params += c.params;
    r.per_layer.push_back(std::move(c));
  }
  return r;
}

std::vector<CompareRow> compare(const std::vector<CostReport>& reports,
                                const std::string& baseline) {
  if (reports.empty()) throw ValidationError("compare: no reports");
  const CostReport* base = nullptr;
  for (const auto& r : reports) {
    if (!(r.convention == reports.front().convention))
      throw ValidationError("compare: reports use different counting conventions");
    if (r.graph == baseline) base = &r;
  }
  if (!base)
    throw ValidationError(cat("compare: baseline '", baseline, "' not among reports"));
  if (base->total_macs == 0)
    throw ValidationError("compare: baseline has zero cost");
  std::vector<CompareRow> rows;
  rows.reserve(reports.size());
  for (const auto& r : reports) {
    CompareRow row;
    row.name = r.graph;
    row.macs = r.total_macs;
    row.params = r.total_params;
    row.ratio = static_cast<double>(r.total_macs) / base->total_macs;
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(),
            [](const CompareRow& a, const CompareRow& b) { return a.macs < b.macs; });
  return rows;
}

std::vector<std::pair<int, double>> sweep_codewords(const std::vector<int>& ns,
                                                    int h, int w, int n_classes,
                                                    const CountingConvention& cv) {
  if (ns.empty()) throw ConfigError("sweep_codewords: empty codeword list");
  std::vector<std::pair<int, double>> out;
  out.reserve(ns.size());
  for (int n : ns) {
    CostReport r = count(model_graph("efficientfcn", h, w, n, n_classes), cv);
    out.emplace_back(n, r.gflops());
  }
  return out;
}

}  // namespace efcn
