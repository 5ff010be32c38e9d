#include "rfp/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <memory>

namespace rfp::ad {

namespace {

std::atomic<Mutation> g_mutation{Mutation::none};

template <typename T>
void check_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::logic_error("operands live on different tapes");
}

// Swaps the kh and kw axes of a [Co, Ci, kh, kw, kd] gradient.
template <typename T>
void transpose_kernel_hw(BasicTensor<T>& g) {
  const Shape& s = g.shape();
  if (s[2] != s[3]) return;
  BasicTensor<T> out(s);
  const std::size_t k = s[2];
  const std::size_t kd = s[4];
  for (std::size_t oc = 0; oc < s[0] * s[1]; ++oc)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        for (std::size_t c = 0; c < kd; ++c)
          out[((oc * k + a) * k + b) * kd + c] = g[((oc * k + b) * k + a) * kd + c];
  g = std::move(out);
}

}  // namespace

Mutation active_mutation() { return g_mutation.load(); }
void set_mutation(Mutation m) { g_mutation.store(m); }

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_tape(a, b);
  return a.tape->record("add", {a.id, b.id}, ops::add(a.value(), b.value()),
                        [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
                          t.accumulate(ia, t.grad(self));
                          t.accumulate(ib, t.grad(self));
                        });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_same_tape(a, b);
  return a.tape->record("mul", {a.id, b.id}, ops::mul(a.value(), b.value()),
                        [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
                          const BasicTensor<T>& g = t.grad(self);
                          if (t.requires_grad(ia)) t.accumulate(ia, ops::mul(g, t.value(ib)));
                          if (t.requires_grad(ib)) t.accumulate(ib, ops::mul(g, t.value(ia)));
                        });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  BasicTensor<T> v = a.value();
  for (T& x : v.data()) x *= factor;
  return a.tape->record("scale", {a.id}, std::move(v), [ia = a.id, factor](Tape<T>& t, std::size_t self) {
    BasicTensor<T> g = t.grad(self);
    for (T& x : g.data()) x *= factor;
    t.accumulate(ia, std::move(g));
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s{0};
  for (T x : a.value().data()) s += x;
  return a.tape->record("sum", {a.id}, BasicTensor<T>::scalar(s), [ia = a.id](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, BasicTensor<T>(t.value(ia).shape(), t.grad(self).item()));
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return a.tape->record("relu", {a.id}, ops::relu(a.value()), [ia = a.id](Tape<T>& t, std::size_t self) {
    BasicTensor<T> g = t.grad(self);
    const BasicTensor<T>& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(y[i] > T{0})) g[i] = T{0};
    t.accumulate(ia, std::move(g));
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return a.tape->record("sigmoid", {a.id}, ops::sigmoid(a.value()), [ia = a.id](Tape<T>& t, std::size_t self) {
    BasicTensor<T> g = t.grad(self);
    const BasicTensor<T>& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (T{1} - y[i]);
    t.accumulate(ia, std::move(g));
  });
}

template <typename T>
Var<T> softmax_channels(Var<T> a) {
  return a.tape->record("softmax_channels", {a.id}, ops::softmax_channels(a.value()),
                        [ia = a.id](Tape<T>& t, std::size_t self) {
                          const BasicTensor<T>& y = t.value(self);
                          const BasicTensor<T>& g = t.grad(self);
                          const std::size_t n = y.extent(0);
                          const std::size_t c = y.extent(1);
                          const std::size_t s = y.size() / (n * c);
                          BasicTensor<T> gx(y.shape());
                          for (std::size_t b = 0; b < n; ++b) {
                            const std::size_t base = b * c * s;
                            for (std::size_t i = 0; i < s; ++i) {
                              T dotv{0};
                              for (std::size_t k = 0; k < c; ++k) dotv += g[base + k * s + i] * y[base + k * s + i];
                              for (std::size_t k = 0; k < c; ++k) {
                                const std::size_t j = base + k * s + i;
                                gx[j] = y[j] * (g[j] - dotv);
                              }
                            }
                          }
                          t.accumulate(ia, std::move(gx));
                        });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels of zero tensors");
  std::vector<const BasicTensor<T>*> values;
  std::vector<std::size_t> ids;
  for (const Var<T>& p : parts) {
    check_same_tape(parts.front(), p);
    values.push_back(&p.value());
    ids.push_back(p.id);
  }
  return parts.front().tape->record(
      "concat_channels", ids, ops::concat_channels(values), [ids](Tape<T>& t, std::size_t self) {
        const BasicTensor<T>& g = t.grad(self);
        std::size_t begin = 0;
        for (std::size_t id : ids) {
          const std::size_t c = t.value(id).extent(1);
          if (t.requires_grad(id)) t.accumulate(id, ops::slice_channels(g, begin, c));
          begin += c;
        }
      });
}

template <typename T>
Var<T> slice_channels(Var<T> a, std::size_t begin, std::size_t count) {
  return a.tape->record("slice_channels", {a.id}, ops::slice_channels(a.value(), begin, count),
                        [ia = a.id, begin, count](Tape<T>& t, std::size_t self) {
                          const BasicTensor<T>& g = t.grad(self);
                          const Shape& xs = t.value(ia).shape();
                          BasicTensor<T> gx(xs);
                          const std::size_t n = xs[0];
                          const std::size_t c = xs[1];
                          const std::size_t s = gx.size() / (n * c);
                          for (std::size_t b = 0; b < n; ++b)
                            std::copy_n(g.ptr() + b * count * s, count * s, gx.ptr() + (b * c + begin) * s);
                          t.accumulate(ia, std::move(gx));
                        });
}

template <typename T>
Var<T> slice_depth(Var<T> a, std::size_t begin, std::size_t count) {
  return a.tape->record("slice_depth", {a.id}, ops::slice_depth(a.value(), begin, count),
                        [ia = a.id, begin, count](Tape<T>& t, std::size_t self) {
                          const BasicTensor<T>& g = t.grad(self);
                          BasicTensor<T> gx(t.value(ia).shape());
                          const std::size_t depth = gx.shape().back();
                          const std::size_t rows = gx.size() / depth;
                          for (std::size_t r = 0; r < rows; ++r)
                            std::copy_n(g.ptr() + r * count, count, gx.ptr() + r * depth + begin);
                          t.accumulate(ia, std::move(gx));
                        });
}

template <typename T>
Var<T> stack_depth(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack_depth of zero tensors");
  std::vector<const BasicTensor<T>*> values;
  std::vector<std::size_t> ids;
  for (const Var<T>& p : parts) {
    check_same_tape(parts.front(), p);
    values.push_back(&p.value());
    ids.push_back(p.id);
  }
  return parts.front().tape->record(
      "stack_depth", ids, ops::stack_depth(values), [ids](Tape<T>& t, std::size_t self) {
        const BasicTensor<T>& g = t.grad(self);
        std::size_t begin = 0;
        for (std::size_t id : ids) {
          const std::size_t len = t.value(id).shape().back();
          if (t.requires_grad(id)) t.accumulate(id, ops::slice_depth(g, begin, len));
          begin += len;
        }
      });
}

template <typename T>
Var<T> matvec(Var<T> matrix, Var<T> vec) {
  check_same_tape(matrix, vec);
  return matrix.tape->record(
      "matvec", {matrix.id, vec.id}, ops::matvec(matrix.value(), vec.value()),
      [im = matrix.id, iv = vec.id](Tape<T>& t, std::size_t self) {
        const BasicTensor<T>& g = t.grad(self);
        const BasicTensor<T>& m = t.value(im);
        const BasicTensor<T>& v = t.value(iv);
        const std::size_t r = m.extent(0);
        const std::size_t c = m.extent(1);
        if (t.requires_grad(im)) {
          BasicTensor<T> gm(m.shape());
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gm[i * c + j] = g[i] * v[j];
          t.accumulate(im, std::move(gm));
        }
        if (t.requires_grad(iv)) {
          BasicTensor<T> gv(v.shape());
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gv[j] += m[i * c + j] * g[i];
          t.accumulate(iv, std::move(gv));
        }
      });
}

template <typename T>
Var<T> conv3d(Var<T> x, Var<T> kernel, Var<T> bias, const ops::ConvGeometry& geo) {
  check_same_tape(x, kernel);
  check_same_tape(x, bias);
  return x.tape->record(
      "conv3d", {x.id, kernel.id, bias.id}, ops::conv3d(x.value(), kernel.value(), bias.value(), geo),
      [ix = x.id, ik = kernel.id, ib = bias.id, geo](Tape<T>& t, std::size_t self) {
        ops::ConvGrads<T> g = ops::conv3d_backward(t.value(ix), t.value(ik), t.grad(self), geo,
                                                   t.requires_grad(ix));
        if (active_mutation() == Mutation::conv_kernel_grad_transposed) transpose_kernel_hw(g.kernel);
        if (t.requires_grad(ix)) t.accumulate(ix, std::move(g.input));
        t.accumulate(ik, std::move(g.kernel));
        t.accumulate(ib, std::move(g.bias));
      });
}

template <typename T>
Var<T> maxpool3d(Var<T> x, const Triple& window, const Triple& stride) {
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  BasicTensor<T> y = ops::maxpool3d(x.value(), window, stride, argmax.get());
  return x.tape->record("maxpool3d", {x.id}, std::move(y), [ix = x.id, argmax](Tape<T>& t, std::size_t self) {
    t.accumulate(ix, ops::maxpool3d_backward(t.grad(self), *argmax, t.value(ix).shape()));
  });
}

template <typename T>
Var<T> resize_trilinear(Var<T> x, const Triple& target) {
  return x.tape->record("resize_trilinear", {x.id}, ops::resize_trilinear(x.value(), target),
                        [ix = x.id](Tape<T>& t, std::size_t self) {
                          t.accumulate(ix, ops::resize_trilinear_backward(t.grad(self), t.value(ix).shape()));
                        });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormRunning<T> running, Mode mode,
                  const BatchNormConfig& cfg) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  const T eps = static_cast<T>(cfg.eps);
  if (mode == Mode::eval) {
    if (!running.mean || !running.var) throw std::logic_error("eval-mode batch_norm needs running statistics");
    BasicTensor<T> y = ops::batch_norm_eval(x.value(), gamma.value(), beta.value(), *running.mean, *running.var, eps);
    BasicTensor<T> rm = *running.mean;
    BasicTensor<T> rv = *running.var;
    return x.tape->record(
        "batch_norm_eval", {x.id, gamma.id, beta.id}, std::move(y),
        [ix = x.id, ig = gamma.id, ibt = beta.id, rm = std::move(rm), rv = std::move(rv), eps](Tape<T>& t, std::size_t self) {
          const BasicTensor<T>& g = t.grad(self);
          const BasicTensor<T>& xv = t.value(ix);
          const BasicTensor<T>& gm = t.value(ig);
          const Dims5 d = dims5(xv.shape(), "batch_norm");
          const std::size_t s = d.spatial();
          BasicTensor<T> gx(xv.shape());
          BasicTensor<T> gg({d.c});
          BasicTensor<T> gb({d.c});
          for (std::size_t c = 0; c < d.c; ++c) {
            const T inv = T{1} / std::sqrt(rv[c] + eps);
            for (std::size_t n = 0; n < d.n; ++n) {
              const std::size_t off = (n * d.c + c) * s;
              for (std::size_t i = 0; i < s; ++i) {
                gx[off + i] = g[off + i] * gm[c] * inv;
                gg[c] += g[off + i] * (xv[off + i] - rm[c]) * inv;
                gb[c] += g[off + i];
              }
            }
          }
          if (t.requires_grad(ix)) t.accumulate(ix, std::move(gx));
          t.accumulate(ig, std::move(gg));
          t.accumulate(ibt, std::move(gb));
        });
  }
  auto saved = std::make_shared<ops::BatchNormSaved<T>>();
  BasicTensor<T> y = ops::batch_norm_train(x.value(), gamma.value(), beta.value(), eps, *saved);
  if (running.mean && running.var) {
    const Dims5 d = dims5(x.shape(), "batch_norm");
    const double count = static_cast<double>(d.n * d.spatial());
    const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
    const double m = cfg.momentum;
    for (std::size_t c = 0; c < d.c; ++c) {
      (*running.mean)[c] = static_cast<T>((1.0 - m) * (*running.mean)[c] + m * saved->mean[c]);
      (*running.var)[c] = static_cast<T>((1.0 - m) * (*running.var)[c] + m * saved->var[c] * unbias);
    }
  }
  return x.tape->record("batch_norm", {x.id, gamma.id, beta.id}, std::move(y),
                        [ix = x.id, ig = gamma.id, ibt = beta.id, saved](Tape<T>& t, std::size_t self) {
                          ops::BatchNormGrads<T> g = ops::batch_norm_train_backward(t.grad(self), t.value(ig), *saved);
                          if (t.requires_grad(ix)) t.accumulate(ix, std::move(g.input));
                          t.accumulate(ig, std::move(g.gamma));
                          t.accumulate(ibt, std::move(g.beta));
                        });
}

template <typename T>
Var<T> conv_unit(Var<T> x, const ConvUnitVars<T>& unit, const ops::ConvGeometry& geo, Mode mode,
                 const BatchNormConfig& cfg) {
  Var<T> y = conv3d(x, unit.kernel, unit.bias, geo);
  y = batch_norm(y, unit.gamma, unit.beta, unit.running, mode, cfg);
  return relu(y);
}

template <typename T>
BasicTensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  BasicTensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
ConvUnitParams<T> ConvUnitParams<T>::init(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                                          std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_ch * k * k * k);
  ConvUnitParams p;
  p.kernel = uniform_tensor<T>({out_ch, in_ch, k, k, k}, std::sqrt(6.0 / fan_in), rng);
  p.bias = BasicTensor<T>({out_ch});
  p.bn_gamma = BasicTensor<T>({out_ch}, T{1});
  p.bn_beta = BasicTensor<T>({out_ch});
  p.bn_running_mean = BasicTensor<T>({out_ch});
  p.bn_running_var = BasicTensor<T>({out_ch}, T{1});
  return p;
}

#define RFP_INSTANTIATE(T)                                                                       \
  template Var<T> add<T>(Var<T>, Var<T>);                                                        \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                        \
  template Var<T> scale<T>(Var<T>, T);                                                           \
  template Var<T> sum<T>(Var<T>);                                                                \
  template Var<T> relu<T>(Var<T>);                                                               \
  template Var<T> sigmoid<T>(Var<T>);                                                            \
  template Var<T> softmax_channels<T>(Var<T>);                                                   \
  template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                                \
  template Var<T> slice_channels<T>(Var<T>, std::size_t, std::size_t);                           \
  template Var<T> slice_depth<T>(Var<T>, std::size_t, std::size_t);                              \
  template Var<T> stack_depth<T>(const std::vector<Var<T>>&);                                    \
  template Var<T> matvec<T>(Var<T>, Var<T>);                                                     \
  template Var<T> conv3d<T>(Var<T>, Var<T>, Var<T>, const ops::ConvGeometry&);                   \
  template Var<T> maxpool3d<T>(Var<T>, const Triple&, const Triple&);                            \
  template Var<T> resize_trilinear<T>(Var<T>, const Triple&);                                    \
  template Var<T> batch_norm<T>(Var<T>, Var<T>, Var<T>, BatchNormRunning<T>, Mode,               \
                                const BatchNormConfig&);                                         \
  template Var<T> conv_unit<T>(Var<T>, const ConvUnitVars<T>&, const ops::ConvGeometry&, Mode,   \
                               const BatchNormConfig&);                                          \
  template BasicTensor<T> uniform_tensor<T>(Shape, double, std::mt19937_64&);                    \
  template struct ConvUnitParams<T>;

RFP_INSTANTIATE(float)
RFP_INSTANTIATE(double)
#undef RFP_INSTANTIATE

}  // namespace rfp::ad
