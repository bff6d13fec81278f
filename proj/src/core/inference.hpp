#pragma once

#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/image_io.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"

namespace efcn {

// The evaluation scale set used when none is given.
const std::vector<double>& default_eval_scales();

// Averaged class probabilities at the input resolution.  Each pass resizes
// the image, pads it symmetrically up to the next multiple of 32 when
// needed, runs the network, crops the padding away, and resizes the softmax
// back; flipping adds a mirrored pass whose output is unflipped.
Tensor<float> multiscale_infer(EfcnModel& model, const Tensor<float>& image,
                               const std::vector<double>& scales, bool flip);

SegMetrics evaluate_dataset(EfcnModel& model, const SyntheticShapes& data,
                            const std::vector<double>& scales, bool flip);

// Min-max normalization of one weighting map into an 8-bit image; constant
// maps come out mid-gray.
ImageU8 normalize_map_to_image(const Tensor<float>& maps, int index);

// Writes every weighting map as '<out_dir>/weightmap_XXX.pgm' plus an
// 'index.json' listing file names and per-map ranges.
void export_weightmaps(EfcnModel& model, const Tensor<float>& image,
                       const std::string& out_dir);

}  // namespace efcn
