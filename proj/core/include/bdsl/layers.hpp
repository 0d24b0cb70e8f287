#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bdsl/tape.hpp"

namespace bdsl::nn {

enum class Padding : std::uint8_t { same, valid };
enum class Mode : std::uint8_t { train, infer };
enum class Activation : std::uint8_t { relu, elu };

/// weights [out_ch, in_ch, kh, kw], bias [out_ch].
template <typename T>
struct Conv2dParams {
  BasicParameter<T> weights;
  BasicParameter<T> bias;
  std::size_t stride = 1;
  Padding padding = Padding::same;

  std::size_t out_channels() const { return weights.value.dim(0); }
  std::size_t in_channels() const { return weights.value.dim(1); }
};

template <typename T>
struct BatchNormParams {
  BasicParameter<T> gamma;
  BasicParameter<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  double epsilon = 1e-5;
  double momentum = 0.99;

  std::size_t channels() const { return gamma.value.size(); }
};

/// weights [out_dim, in_dim], bias [out_dim].
template <typename T>
struct DenseParams {
  BasicParameter<T> weights;
  BasicParameter<T> bias;

  std::size_t out_dim() const { return weights.value.dim(0); }
  std::size_t in_dim() const { return weights.value.dim(1); }
};

template <typename T>
Conv2dParams<T> make_conv2d(const std::string& name, std::size_t in_ch, std::size_t out_ch,
                            std::size_t kernel, Padding padding = Padding::same);
template <typename T>
BatchNormParams<T> make_batchnorm(const std::string& name, std::size_t channels,
                                  double epsilon = 1e-5, double momentum = 0.99);
template <typename T>
DenseParams<T> make_dense(const std::string& name, std::size_t in_dim, std::size_t out_dim);

/// Cross-correlation of [B,C,H,W] with the kernel bank plus per-channel bias.
template <typename T>
Var conv2d(BasicTape<T>& tape, Var input, Conv2dParams<T>& params);

/// Non-overlapping 2x2 max. Ties resolve to the first element in row-major
/// window order, which is also the only position that receives gradient.
template <typename T>
Var maxpool2x2(BasicTape<T>& tape, Var input);

/// Per-channel normalisation of [B,C,H,W] or [B,D]. Train mode uses batch
/// statistics and folds them into the running averages; infer mode uses the
/// running averages and leaves them untouched.
template <typename T>
Var batchnorm(BasicTape<T>& tape, Var input, BatchNormParams<T>& params, Mode mode);

/// input [B,in] -> input * W^T + bias.
template <typename T>
Var dense(BasicTape<T>& tape, Var input, DenseParams<T>& params);

template <typename T>
Var relu(BasicTape<T>& tape, Var input);

/// alpha = 1.
template <typename T>
Var elu(BasicTape<T>& tape, Var input);

template <typename T>
Var activation(BasicTape<T>& tape, Var input, Activation kind) {
  return kind == Activation::relu ? relu(tape, input) : elu(tape, input);
}

template <typename T>
struct SoftmaxXent {
  Var loss;  // mean negative log-likelihood, shape {1}
  BasicTensor<T> probs;
};

/// Row-wise softmax of [B,K] logits fused with mean cross-entropy against
/// `labels`; the backward rule is (probs - onehot) / B.
template <typename T>
SoftmaxXent<T> softmax_xent(BasicTape<T>& tape, Var logits, std::span<const int> labels);

/// Plain row-wise softmax (max-shifted) without recording anything.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

}  // namespace bdsl::nn
