#pragma once

#include <string>
#include <vector>

#include "core/ops.hpp"

namespace efcn {

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool learnable = true;  // running statistics ride along unlearned
};

template <class T>
using ParamList = std::vector<ParamRef<T>>;

// fan-in scaled Gaussian, zero bias
template <class T>
Tensor<T> init_conv_weight(Rng& rng, int c_out, int c_in, int kh, int kw) {
  const double stddev = std::sqrt(2.0 / (double(c_in) * kh * kw));
  Tensor<T> w = Tensor<T>::zeros({c_out, c_in, kh, kw}, true);
  for (i64 i = 0; i < w.numel(); ++i) w.data()[i] = T(rng.normal(0.0, stddev));
  return w;
}

// conv -> batch norm -> relu, the standard block for compression and stem
// convolutions.  Convolutions feeding a batch norm carry no bias.
template <class T>
struct ConvBnRelu {
  Tensor<T> w;
  Tensor<T> gamma, beta;
  Tensor<T> run_mean, run_var;
  int stride = 1, padding = 0, dilation = 1;

  static ConvBnRelu make(Rng& rng, int c_out, int c_in, int k, int stride = 1,
                         int dilation = 1) {
    ConvBnRelu b;
    b.w = init_conv_weight<T>(rng, c_out, c_in, k, k);
    b.gamma = Tensor<T>::full({1, c_out, 1, 1}, T(1), true);
    b.beta = Tensor<T>::zeros({1, c_out, 1, 1}, true);
    b.run_mean = Tensor<T>::zeros({1, c_out, 1, 1});
    b.run_var = Tensor<T>::full({1, c_out, 1, 1}, T(1));
    b.stride = stride;
    b.dilation = dilation;
    b.padding = dilation * (k - 1) / 2;
    return b;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> y;
    if (w.shape().h == 1 && w.shape().w == 1 && stride == 1)
      y = conv1x1(x, w);
    else
      y = conv2d(x, w, {}, stride, padding, dilation);
    y = batch_norm(y, gamma, beta, run_mean, run_var, training);
    return relu(y);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".w", w, true});
    out.push_back({prefix + ".gamma", gamma, true});
    out.push_back({prefix + ".beta", beta, true});
    out.push_back({prefix + ".run_mean", run_mean, false});
    out.push_back({prefix + ".run_var", run_var, false});
  }
};

// bare 1x1 convolution with bias, no normalization or activation
template <class T>
struct LinearConv {
  Tensor<T> w, b;

  static LinearConv make(Rng& rng, int c_out, int c_in) {
    LinearConv l;
    l.w = init_conv_weight<T>(rng, c_out, c_in, 1, 1);
    l.b = Tensor<T>::zeros({1, c_out, 1, 1}, true);
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv1x1(x, w, b); }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".w", w, true});
    out.push_back({prefix + ".b", b, true});
  }
};

}  // namespace efcn
