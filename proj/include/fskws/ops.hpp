#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fskws/tensor.hpp"

namespace fskws::ad {

enum class Mode { Train, Eval };

struct Conv1dOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
};

struct Conv2dOptions {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

struct Pool2dOptions {
  std::size_t kernel_h = 2;
  std::size_t kernel_w = 2;
  std::size_t stride_h = 2;
  std::size_t stride_w = 2;
};

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename Real>
struct BatchNormState {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  std::uint64_t tracked_batches = 0;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, Real(0)), running_var(channels, Real(1)) {}
};

/// floor((length + 2*padding - dilation*(kernel-1) - 1) / stride) + 1
std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                               std::size_t dilation, std::size_t padding);

// x: [B, C_in, L], w: [C_out, C_in, k], bias: [C_out] or empty.
template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                    const Conv1dOptions& opt);

// x: [B, C_in, H, W], w: [C_out, C_in, kh, kw], bias: [C_out] or empty.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                    const Conv2dOptions& opt);

/// Per-channel normalisation over the batch and all trailing axes of
/// x: [B, C, ...]. Train mode uses batch statistics and updates `state`;
/// eval mode uses the running statistics.
template <typename Real>
Tensor<Real> batch_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        BatchNormState<Real>& state, Mode mode, const BatchNormOptions& opt = {});

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x);

/// [B, C, ...] -> [B, C], mean over all trailing positions.
template <typename Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x);

/// Valid (unpadded) max pooling over [B, C, H, W].
template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& x, const Pool2dOptions& opt);

// x: [B, in], w: [out, in], bias: [out] or empty.
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias);

/// [B, ...] -> [B, prod(...)]
template <typename Real>
Tensor<Real> flatten(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real c);

/// Sum of all elements as a shape-{1} tensor.
template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x);

/// Rows [begin, end) along the leading axis.
template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t end);

/// Row c of the result is the mean of the rows of x: [M, D] labelled c.
template <typename Real>
Tensor<Real> class_means(const Tensor<Real>& x, std::span<const int> labels, std::size_t classes);

/// out[m, c] = sum_d (a[m, d] - b[c, d])^2
template <typename Real>
Tensor<Real> squared_euclidean(const Tensor<Real>& a, const Tensor<Real>& b);

/// Row-wise log-softmax of [M, C], stabilised by the row maximum.
template <typename Real>
Tensor<Real> log_softmax_rows(const Tensor<Real>& x);

/// -(1/M) sum_m logp[m, labels[m]]
template <typename Real>
Tensor<Real> nll_loss(const Tensor<Real>& log_probs, std::span<const int> labels);

}  // namespace fskws::ad
