#include <algorithm>
#include <cmath>
#include <string>

#include "rfp/kernels.hpp"
#include "rfp/ops.hpp"

namespace rfp::ops {

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (T& v : out.data()) v = v < T{0} ? T{0} : v;  // NaN passes through
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (T& v : out.data()) v = T{1} / (T{1} + std::exp(-v));
  return out;
}

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& logits) {
  if (logits.rank() < 2) throw ShapeError("softmax_channels needs a [N, C, ...] tensor, got " + shape_string(logits.shape()));
  const std::size_t n = logits.extent(0);
  const std::size_t c = logits.extent(1);
  const std::size_t s = logits.size() / (n * c);
  BasicTensor<T> out(logits.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const T* x = logits.ptr() + b * c * s;
    T* y = out.ptr() + b * c * s;
    for (std::size_t i = 0; i < s; ++i) {
      T mx = x[i];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, x[k * s + i]);
      T sum{0};
      for (std::size_t k = 0; k < c; ++k) {
        const T e = std::exp(x[k * s + i] - mx);
        y[k * s + i] = e;
        sum += e;
      }
      const T inv = T{1} / sum;
      for (std::size_t k = 0; k < c; ++k) y[k * s + i] *= inv;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels of zero tensors");
  const Shape& first = parts.front()->shape();
  if (first.size() < 2) throw ShapeError("concat_channels needs rank >= 2");
  std::size_t channels = 0;
  for (const BasicTensor<T>* p : parts) {
    const Shape& s = p->shape();
    bool ok = s.size() == first.size() && s[0] == first[0];
    for (std::size_t a = 2; ok && a < s.size(); ++a) ok = s[a] == first[a];
    if (!ok) {
      throw ShapeError("concat_channels: shape mismatch " + shape_string(first) + " vs " +
                       shape_string(s));
    }
    channels += s[1];
  }
  Shape out_shape = first;
  out_shape[1] = channels;
  BasicTensor<T> out(out_shape);
  const std::size_t n = first[0];
  const std::size_t s = parts.front()->size() / (first[0] * first[1]);
  for (std::size_t b = 0; b < n; ++b) {
    T* dst = out.ptr() + b * channels * s;
    for (const BasicTensor<T>* p : parts) {
      const std::size_t len = p->extent(1) * s;
      std::copy_n(p->ptr() + b * len, len, dst);
      dst += len;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t begin, std::size_t count) {
  if (x.rank() < 2 || count == 0 || begin + count > x.extent(1)) {
    throw ShapeError("slice_channels [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of range for shape " + shape_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[1] = count;
  BasicTensor<T> out(out_shape);
  const std::size_t n = x.extent(0);
  const std::size_t c = x.extent(1);
  const std::size_t s = x.size() / (n * c);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy_n(x.ptr() + (b * c + begin) * s, count * s, out.ptr() + b * count * s);
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_depth(const BasicTensor<T>& x, std::size_t begin, std::size_t count) {
  if (x.rank() == 0 || count == 0 || begin + count > x.shape().back()) {
    throw ShapeError("slice_depth [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of range for shape " + shape_string(x.shape()));
  }
  const std::size_t depth = x.shape().back();
  Shape out_shape = x.shape();
  out_shape.back() = count;
  BasicTensor<T> out(out_shape);
  const std::size_t rows = x.size() / depth;
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.ptr() + r * depth + begin, count, out.ptr() + r * count);
  }
  return out;
}

template <typename T>
BasicTensor<T> stack_depth(const std::vector<const BasicTensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("stack_depth of zero tensors");
  const Shape& first = parts.front()->shape();
  if (first.empty()) throw ShapeError("stack_depth needs rank >= 1");
  std::size_t depth = 0;
  for (const BasicTensor<T>* p : parts) {
    const Shape& s = p->shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw ShapeError("stack_depth: shape mismatch " + shape_string(first) + " vs " + shape_string(s));
    }
    depth += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = depth;
  BasicTensor<T> out(out_shape);
  const std::size_t rows = out.size() / depth;
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = out.ptr() + r * depth;
    for (const BasicTensor<T>* p : parts) {
      const std::size_t len = p->shape().back();
      std::copy_n(p->ptr() + r * len, len, dst);
      dst += len;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> matvec(const BasicTensor<T>& matrix, const BasicTensor<T>& vec) {
  if (matrix.rank() != 2 || vec.size() != matrix.extent(1)) {
    throw ShapeError("matvec: shape mismatch " + shape_string(matrix.shape()) + " vs " +
                     shape_string(vec.shape()));
  }
  const std::size_t r = matrix.extent(0);
  const std::size_t c = matrix.extent(1);
  BasicTensor<T> out({r});
  for (std::size_t i = 0; i < r; ++i) out[i] = kernels::dot<T>(c, matrix.ptr() + i * c, vec.ptr());
  return out;
}

#define RFP_INSTANTIATE(T)                                                                      \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                       \
  template BasicTensor<T> sigmoid<T>(const BasicTensor<T>&);                                    \
  template BasicTensor<T> softmax_channels<T>(const BasicTensor<T>&);                           \
  template BasicTensor<T> concat_channels<T>(const std::vector<const BasicTensor<T>*>&);        \
  template BasicTensor<T> slice_channels<T>(const BasicTensor<T>&, std::size_t, std::size_t);   \
  template BasicTensor<T> slice_depth<T>(const BasicTensor<T>&, std::size_t, std::size_t);      \
  template BasicTensor<T> stack_depth<T>(const std::vector<const BasicTensor<T>*>&);            \
  template BasicTensor<T> matvec<T>(const BasicTensor<T>&, const BasicTensor<T>&);

RFP_INSTANTIATE(float)
RFP_INSTANTIATE(double)
#undef RFP_INSTANTIATE

}  // namespace rfp::ops
