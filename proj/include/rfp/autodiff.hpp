#pragma once

// Differentiable primitives recorded on a Tape. Each wrapper evaluates the
// forward value through rfp::ops and registers the matching VJP.

#include <random>
#include <vector>

#include "rfp/ops.hpp"
#include "rfp/tape.hpp"

namespace rfp::ad {

enum class Mode { train, eval };

/// Deliberate backward-rule corruptions, used to show that the gradient
/// checker catches a broken rule.
enum class Mutation { none, conv_kernel_grad_transposed };

Mutation active_mutation();
void set_mutation(Mutation m);

struct BatchNormConfig {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Points at running statistics owned elsewhere (usually a parameter store).
template <typename T>
struct BatchNormRunning {
  BasicTensor<T>* mean = nullptr;
  BasicTensor<T>* var = nullptr;
};

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
/// Sum of all elements as a rank-0 scalar.
template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> relu(Var<T> a);
template <typename T>
Var<T> sigmoid(Var<T> a);
template <typename T>
Var<T> softmax_channels(Var<T> a);
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_channels(Var<T> a, std::size_t begin, std::size_t count);
template <typename T>
Var<T> slice_depth(Var<T> a, std::size_t begin, std::size_t count);
template <typename T>
Var<T> stack_depth(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> matvec(Var<T> matrix, Var<T> vec);
template <typename T>
Var<T> conv3d(Var<T> x, Var<T> kernel, Var<T> bias, const ops::ConvGeometry& geo);
template <typename T>
Var<T> maxpool3d(Var<T> x, const Triple& window, const Triple& stride);
template <typename T>
Var<T> resize_trilinear(Var<T> x, const Triple& target);

/// In train mode normalises with batch statistics and, when `running` points
/// somewhere, folds them into the running estimates (unbiased variance). In
/// eval mode uses the running estimates.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormRunning<T> running, Mode mode,
                  const BatchNormConfig& cfg);

/// conv -> batch norm -> ReLU.
template <typename T>
struct ConvUnitParams {
  BasicTensor<T> kernel;   // [Co, Ci, k, k, k]
  BasicTensor<T> bias;     // [Co]
  BasicTensor<T> bn_gamma;
  BasicTensor<T> bn_beta;
  BasicTensor<T> bn_running_mean;
  BasicTensor<T> bn_running_var;  // strictly positive

  /// Kernel ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)) with fan_in = Ci*k^3;
  /// bias 0, gamma 1, beta 0, running mean 0, running variance 1.
  static ConvUnitParams init(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                             std::mt19937_64& rng);
};

template <typename T>
struct ConvUnitVars {
  Var<T> kernel;
  Var<T> bias;
  Var<T> gamma;
  Var<T> beta;
  BatchNormRunning<T> running;
};

template <typename T>
Var<T> conv_unit(Var<T> x, const ConvUnitVars<T>& unit, const ops::ConvGeometry& geo, Mode mode,
                 const BatchNormConfig& cfg);

/// Uniform fill in [-bound, bound].
template <typename T>
BasicTensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng);

}  // namespace rfp::ad
