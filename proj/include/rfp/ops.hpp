#pragma once

// Pure tensor primitives: forward values and their vector-Jacobian products.
// Volumetric tensors are 5-D, [N, C, H, W, D] with D innermost. Nothing here
// records on a tape; see autodiff.hpp for the differentiable wrappers.

#include <cstddef>
#include <vector>

#include "rfp/tensor.hpp"

namespace rfp::ops {

struct ConvGeometry {
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
};

/// floor((in + 2*pad - k) / stride) + 1 per axis. Throws ShapeError naming
/// the axis if the output would be empty.
Triple conv_output_extent(const Triple& in, const Triple& kernel, const ConvGeometry& geo);

/// Cross-correlation plus bias. input [N,Ci,H,W,D], kernel [Co,Ci,kh,kw,kd],
/// bias [Co].
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, const ConvGeometry& geo);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> kernel;
  BasicTensor<T> bias;
};

template <typename T>
ConvGrads<T> conv3d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                             const BasicTensor<T>& grad_out, const ConvGeometry& geo,
                             bool want_input_grad);

template <typename T>
struct BatchNormSaved {
  BasicTensor<T> normalized;  // x-hat
  std::vector<T> mean;
  std::vector<T> var;  // biased batch variance
  std::vector<T> inv_std;
};

/// Training-mode batch normalisation over batch and spatial axes.
template <typename T>
BasicTensor<T> batch_norm_train(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                const BasicTensor<T>& beta, T eps, BatchNormSaved<T>& saved);

template <typename T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                               const BasicTensor<T>& beta, const BasicTensor<T>& running_mean,
                               const BasicTensor<T>& running_var, T eps);

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input;
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batch_norm_train_backward(const BasicTensor<T>& grad_out,
                                            const BasicTensor<T>& gamma,
                                            const BatchNormSaved<T>& saved);

/// Max over each window. `argmax` receives, per output element, the flat
/// input index of the first maximal element in the window.
template <typename T>
BasicTensor<T> maxpool3d(const BasicTensor<T>& input, const Triple& window, const Triple& stride,
                         std::vector<std::size_t>* argmax = nullptr);

template <typename T>
BasicTensor<T> maxpool3d_backward(const BasicTensor<T>& grad_out,
                                  const std::vector<std::size_t>& argmax, const Shape& input_shape);

/// Trilinear resampling of the three spatial axes, half-pixel
/// (align-corners-false) convention. Identity when the target matches.
template <typename T>
BasicTensor<T> resize_trilinear(const BasicTensor<T>& input, const Triple& target);

template <typename T>
BasicTensor<T> resize_trilinear_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

/// Softmax over axis 1 of a [N, C, ...] tensor.
template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& logits);

template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& parts);

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t begin, std::size_t count);

/// Slice along the last axis (depth); the result keeps the axis with extent `count`.
template <typename T>
BasicTensor<T> slice_depth(const BasicTensor<T>& x, std::size_t begin, std::size_t count);

/// Concatenation along the last axis (depth).
template <typename T>
BasicTensor<T> stack_depth(const std::vector<const BasicTensor<T>*>& parts);

/// matrix [r, c] times vector [c].
template <typename T>
BasicTensor<T> matvec(const BasicTensor<T>& matrix, const BasicTensor<T>& vec);

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace rfp::ops
