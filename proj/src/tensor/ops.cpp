#include "deepself/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "deepself/error.hpp"

namespace deepself {

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ConfigError(fmt::format("activation must be one of {{relu, sigmoid, tanh}}, got '{}'", name));
}

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

namespace {

template <typename T>
using Storage = detail::TensorStorage<T>;

template <typename T>
bool any_requires_grad(const std::vector<BasicTensor<T>>& inputs) {
  if (!Tape<T>::current().recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
}

// Builds the output tensor and, when needed, records `grad_fn` on the tape.
// grad_fn(gout) accumulates into the grads of whichever inputs require them.
template <typename T, typename GradFn>
BasicTensor<T> emit(const char* op, Shape shape, std::vector<T> values,
                    const std::vector<BasicTensor<T>>& inputs, GradFn&& grad_fn) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(fmt::format("non-finite value produced by op '{}' at index {}", op, i));
    }
  }
  auto out = std::make_shared<Storage<T>>();
  out->shape = std::move(shape);
  out->data = std::move(values);
  if (any_requires_grad(inputs)) {
    out->requires_grad = true;
    out->ensure_grad();
    TapeEntry<T> entry;
    entry.op = op;
    for (const auto& in : inputs) entry.inputs.push_back(in.storage());
    entry.output = out;
    Storage<T>* raw = out.get();
    entry.backward = [raw, fn = std::forward<GradFn>(grad_fn)]() { fn(std::span<const T>(raw->grad)); };
    Tape<T>::current().record(std::move(entry));
  }
  return BasicTensor<T>::from_storage(std::move(out));
}

// Grad buffer of an input, or nullptr if it takes no gradient.
template <typename T>
T* grad_of(const BasicTensor<T>& t) {
  auto& s = *t.storage();
  return s.requires_grad ? s.grad.data() : nullptr;
}

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
  }
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError(fmt::format("matmul: cannot multiply {} by {}", shape_str(a.shape()), shape_str(b.shape())));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T{0});
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = &B[p * n];
      T* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return emit<T>("matmul", Shape{m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const T> g) {
    auto A = a.data();
    auto B = b.data();
    if (T* ga = grad_of(a)) {
      // ga += g . B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (T* gb = grad_of(b)) {
      // gb += A^T . g
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const T av = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return emit<T>("add", a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) {
    if (T* ga = grad_of(a)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (T* gb = grad_of(b)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  return emit<T>("sub", a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) {
    if (T* ga = grad_of(a)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (T* gb = grad_of(b)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return emit<T>("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) {
    auto A = a.data();
    auto B = b.data();
    if (T* ga = grad_of(a)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    if (T* gb = grad_of(b)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
  });
}

template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, T scale, T shift) {
  std::vector<T> out(x.numel());
  auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * X[i] + shift;
  return emit<T>("affine", x.shape(), std::move(out), {x}, [x, scale](std::span<const T> g) {
    if (T* gx = grad_of(x)) for (std::size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
  });
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  const std::size_t n = x.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw ShapeError(fmt::format("add_bias: bias {} does not match last axis of {}", shape_str(bias.shape()),
                                 shape_str(x.shape())));
  }
  std::vector<T> out(x.numel());
  auto X = x.data();
  auto Bv = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] + Bv[i % n];
  return emit<T>("add_bias", x.shape(), std::move(out), {x, bias}, [x, bias, n](std::span<const T> g) {
    if (T* gx = grad_of(x)) for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    if (T* gb = grad_of(bias)) for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
  });
}

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, Activation kind) {
  std::vector<T> out(x.numel());
  auto X = x.data();
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] > T{0} ? X[i] : T{0};
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(X[i]);
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(X[i]);
      break;
    case Activation::identity:
      std::copy(X.begin(), X.end(), out.begin());
      break;
  }
  // Backward needs the forward output for sigmoid/tanh; keep a copy.
  std::vector<T> y = (kind == Activation::sigmoid || kind == Activation::tanh) ? out : std::vector<T>{};
  return emit<T>("activation", x.shape(), std::move(out), {x}, [x, kind, y = std::move(y)](std::span<const T> g) {
    T* gx = grad_of(x);
    if (!gx) return;
    auto X = x.data();
    switch (kind) {
      case Activation::relu:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += X[i] > T{0} ? g[i] : T{0};
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T{1} - y[i]);
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T{1} - y[i] * y[i]);
        break;
      case Activation::identity:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        break;
    }
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc{0};
  for (auto v : x.data()) acc += v;
  return emit<T>("sum", Shape{1}, std::vector<T>{acc}, {x}, [x](std::span<const T> g) {
    if (T* gx = grad_of(x)) for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError(fmt::format("reshape: cannot view {} as {}", shape_str(x.shape()), shape_str(shape)));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return emit<T>("reshape", std::move(shape), std::move(out), {x}, [x](std::span<const T> g) {
    if (T* gx = grad_of(x)) for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
BasicTensor<T> to_sequence(const BasicTensor<T>& x) {
  if (x.rank() < 3) {
    throw ShapeError("to_sequence: expected [B x C x ... x T], got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.shape().back();
  const std::size_t features = x.numel() / (batch * steps);
  std::vector<T> out(x.numel());
  auto X = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t m = 0; m < features; ++m) {
      for (std::size_t t = 0; t < steps; ++t) {
        out[(b * steps + t) * features + m] = X[(b * features + m) * steps + t];
      }
    }
  }
  return emit<T>("to_sequence", Shape{batch, steps, features}, std::move(out), {x},
                 [x, batch, steps, features](std::span<const T> g) {
                   T* gx = grad_of(x);
                   if (!gx) return;
                   for (std::size_t b = 0; b < batch; ++b)
                     for (std::size_t m = 0; m < features; ++m)
                       for (std::size_t t = 0; t < steps; ++t)
                         gx[(b * features + m) * steps + t] += g[(b * steps + t) * features + m];
                 });
}

template <typename T>
BasicTensor<T> select_step(const BasicTensor<T>& seq, std::size_t t) {
  if (seq.rank() != 3) throw ShapeError("select_step: expected [B x T x F], got " + shape_str(seq.shape()));
  const std::size_t batch = seq.dim(0), steps = seq.dim(1), features = seq.dim(2);
  if (t >= steps) throw IndexError(fmt::format("select_step: step {} out of range for {} steps", t, steps));
  std::vector<T> out(batch * features);
  auto S = seq.data();
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(&S[(b * steps + t) * features], features, &out[b * features]);
  return emit<T>("select_step", Shape{batch, features}, std::move(out), {seq},
                 [seq, t, batch, steps, features](std::span<const T> g) {
                   T* gs = grad_of(seq);
                   if (!gs) return;
                   for (std::size_t b = 0; b < batch; ++b)
                     for (std::size_t f = 0; f < features; ++f) gs[(b * steps + t) * features + f] += g[b * features + f];
                 });
}

template <typename T>
BasicTensor<T> stack_steps(const std::vector<BasicTensor<T>>& steps) {
  if (steps.empty()) throw ContractError("stack_steps: empty sequence");
  const Shape& s0 = steps.front().shape();
  if (s0.size() != 2) throw ShapeError("stack_steps: steps must be [B x F], got " + shape_str(s0));
  for (const auto& s : steps) {
    if (s.shape() != s0) throw ShapeError("stack_steps: inconsistent step shapes");
  }
  const std::size_t batch = s0[0], features = s0[1], count = steps.size();
  std::vector<T> out(batch * count * features);
  for (std::size_t t = 0; t < count; ++t) {
    auto S = steps[t].data();
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(&S[b * features], features, &out[(b * count + t) * features]);
  }
  return emit<T>("stack_steps", Shape{batch, count, features}, std::move(out), steps,
                 [steps, batch, count, features](std::span<const T> g) {
                   for (std::size_t t = 0; t < count; ++t) {
                     T* gs = grad_of(steps[t]);
                     if (!gs) continue;
                     for (std::size_t b = 0; b < batch; ++b)
                       for (std::size_t f = 0; f < features; ++f) gs[b * features + f] += g[(b * count + t) * features + f];
                   }
                 });
}

template <typename T>
BasicTensor<T> concat_last(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  Shape lead_a(a.shape().begin(), a.shape().end() - 1);
  Shape lead_b(b.shape().begin(), b.shape().end() - 1);
  if (lead_a != lead_b) {
    throw ShapeError(fmt::format("concat_last: leading axes differ, {} vs {}", shape_str(a.shape()),
                                 shape_str(b.shape())));
  }
  const std::size_t fa = a.shape().back(), fb = b.shape().back();
  const std::size_t rows = a.numel() / fa;
  std::vector<T> out(rows * (fa + fb));
  auto A = a.data();
  auto B = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&A[r * fa], fa, &out[r * (fa + fb)]);
    std::copy_n(&B[r * fb], fb, &out[r * (fa + fb) + fa]);
  }
  Shape shape = lead_a;
  shape.push_back(fa + fb);
  return emit<T>("concat_last", std::move(shape), std::move(out), {a, b}, [a, b, rows, fa, fb](std::span<const T> g) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    for (std::size_t r = 0; r < rows; ++r) {
      if (ga) for (std::size_t i = 0; i < fa; ++i) ga[r * fa + i] += g[r * (fa + fb) + i];
      if (gb) for (std::size_t i = 0; i < fb; ++i) gb[r * fb + i] += g[r * (fa + fb) + fa + i];
    }
  });
}

std::size_t conv_output_extent(std::size_t in_extent, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (in_extent < 1 || kernel < 1 || stride < 1) {
    throw ConfigError(fmt::format("conv geometry needs positive input/kernel/stride, got in={} kernel={} stride={}",
                                  in_extent, kernel, stride));
  }
  const std::size_t padded = in_extent + 2 * padding;
  if (padded < kernel) {
    throw ConfigError(fmt::format("conv output extent < 1: input {} + 2*padding {} is smaller than kernel {}",
                                  in_extent, padding, kernel));
  }
  return (padded - kernel) / stride + 1;
}

namespace {

// 3-D view of a 1/2/3-D convolution; unused leading spatial axes have extent 1.
struct ConvPlan {
  std::size_t batch, c_in, c_out;
  std::array<std::size_t, 3> in, k, out, stride, pad;
};

}  // namespace

template <typename T>
BasicTensor<T> convolve_nd(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias,
                           const ConvGeometry& geometry) {
  const std::size_t krank = kernels.rank();
  if (krank < 3 || krank > 5) {
    throw ShapeError("convolve_nd: kernels must be [C_out x C_in x K...] with 1..3 spatial axes, got " +
                     shape_str(kernels.shape()));
  }
  const std::size_t srank = krank - 2;
  bool batched;
  if (input.rank() == srank + 1) {
    batched = false;
  } else if (input.rank() == srank + 2) {
    batched = true;
  } else {
    throw ShapeError(fmt::format("convolve_nd: input {} does not match {}-d kernels {}", shape_str(input.shape()), srank,
                                 shape_str(kernels.shape())));
  }
  if (geometry.stride.size() != srank || geometry.padding.size() != srank) {
    throw ConfigError(fmt::format("convolve_nd: stride/padding need {} entries", srank));
  }
  ConvPlan p{};
  p.batch = batched ? input.dim(0) : 1;
  p.c_in = input.dim(batched ? 1 : 0);
  p.c_out = kernels.dim(0);
  if (kernels.dim(1) != p.c_in) {
    throw ShapeError(fmt::format("convolve_nd: input has {} channels, kernels expect {}", p.c_in, kernels.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != p.c_out) {
    throw ShapeError(fmt::format("convolve_nd: bias {} does not match {} output channels", shape_str(bias.shape()),
                                 p.c_out));
  }
  const std::size_t first_spatial = batched ? 2 : 1;
  Shape out_shape;
  if (batched) out_shape.push_back(p.batch);
  out_shape.push_back(p.c_out);
  for (std::size_t a = 0; a < 3; ++a) {
    p.in[a] = p.k[a] = p.out[a] = p.stride[a] = 1;
    p.pad[a] = 0;
  }
  for (std::size_t a = 0; a < srank; ++a) {
    const std::size_t slot = 3 - srank + a;
    p.in[slot] = input.dim(first_spatial + a);
    p.k[slot] = kernels.dim(2 + a);
    p.stride[slot] = geometry.stride[a];
    p.pad[slot] = geometry.padding[a];
    if (p.stride[slot] < 1) throw ConfigError(fmt::format("convolve_nd: stride on spatial axis {} must be >= 1", a));
    try {
      p.out[slot] = conv_output_extent(p.in[slot], p.k[slot], p.stride[slot], p.pad[slot]);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("convolve_nd: spatial axis {}: {}", a, e.what()));
    }
    out_shape.push_back(p.out[slot]);
  }

  const auto in_index = [p](std::size_t b, std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return (((b * p.c_in + c) * p.in[0] + d) * p.in[1] + h) * p.in[2] + w;
  };
  const auto k_index = [p](std::size_t co, std::size_t ci, std::size_t d, std::size_t h, std::size_t w) {
    return (((co * p.c_in + ci) * p.k[0] + d) * p.k[1] + h) * p.k[2] + w;
  };
  const auto out_index = [p](std::size_t b, std::size_t co, std::size_t d, std::size_t h, std::size_t w) {
    return (((b * p.c_out + co) * p.out[0] + d) * p.out[1] + h) * p.out[2] + w;
  };

  // Visits every (output cell, kernel tap) pair whose input tap is inside the
  // unpadded input.
  const auto for_each_tap = [p, in_index, k_index, out_index](auto&& fn) {
    for (std::size_t b = 0; b < p.batch; ++b)
      for (std::size_t co = 0; co < p.c_out; ++co)
        for (std::size_t od = 0; od < p.out[0]; ++od)
          for (std::size_t oh = 0; oh < p.out[1]; ++oh)
            for (std::size_t ow = 0; ow < p.out[2]; ++ow) {
              const std::size_t oi = out_index(b, co, od, oh, ow);
              for (std::size_t ci = 0; ci < p.c_in; ++ci)
                for (std::size_t kd = 0; kd < p.k[0]; ++kd) {
                  const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * p.stride[0] + kd) -
                                            static_cast<std::ptrdiff_t>(p.pad[0]);
                  if (id < 0 || id >= static_cast<std::ptrdiff_t>(p.in[0])) continue;
                  for (std::size_t kh = 0; kh < p.k[1]; ++kh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * p.stride[1] + kh) -
                                              static_cast<std::ptrdiff_t>(p.pad[1]);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(p.in[1])) continue;
                    for (std::size_t kw = 0; kw < p.k[2]; ++kw) {
                      const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * p.stride[2] + kw) -
                                                static_cast<std::ptrdiff_t>(p.pad[2]);
                      if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(p.in[2])) continue;
                      fn(oi, in_index(b, ci, static_cast<std::size_t>(id), static_cast<std::size_t>(ih),
                                      static_cast<std::size_t>(iw)),
                         k_index(co, ci, kd, kh, kw));
                    }
                  }
                }
            }
  };

  const std::size_t out_spatial = p.out[0] * p.out[1] * p.out[2];
  std::vector<T> out(p.batch * p.c_out * out_spatial);
  auto X = input.data();
  auto K = kernels.data();
  auto Bv = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Bv[(i / out_spatial) % p.c_out];
  for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t ki) { out[oi] += X[ii] * K[ki]; });

  return emit<T>("convolve_nd", std::move(out_shape), std::move(out), {input, kernels, bias},
                 [input, kernels, bias, p, out_spatial, for_each_tap](std::span<const T> g) {
                   T* gx = grad_of(input);
                   T* gk = grad_of(kernels);
                   T* gb = grad_of(bias);
                   auto X = input.data();
                   auto K = kernels.data();
                   if (gb) for (std::size_t i = 0; i < g.size(); ++i) gb[(i / out_spatial) % p.c_out] += g[i];
                   if (gx || gk) {
                     for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t ki) {
                       if (gx) gx[ii] += g[oi] * K[ki];
                       if (gk) gk[ki] += g[oi] * X[ii];
                     });
                   }
                 });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: expected [B x C], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<T> out(logits.numel());
  auto Z = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = &Z[r * cols];
    const T mx = *std::max_element(z, z + cols);
    T denom{0};
    for (std::size_t c = 0; c < cols; ++c) denom += std::exp(z[c] - mx);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = std::exp(z[c] - mx) / denom;
  }
  return BasicTensor<T>(logits.shape(), std::move(out));
}

template <typename T>
LossAndProbabilities<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: expected [B x C] logits, got " + shape_str(logits.shape()));
  }
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError(fmt::format("softmax_cross_entropy: {} targets for batch of {}", targets.size(), rows));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= cols) {
      throw IndexError(fmt::format("target {} at row {} out of range for {} classes", targets[r], r, cols));
    }
  }
  auto probs = softmax(logits);
  auto Z = logits.data();
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = &Z[r * cols];
    const T mx = *std::max_element(z, z + cols);
    T denom{0};
    for (std::size_t c = 0; c < cols; ++c) denom += std::exp(z[c] - mx);
    total += std::log(denom) - (z[targets[r]] - mx);
  }
  const T loss_value = total / static_cast<T>(rows);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  auto loss = emit<T>("softmax_cross_entropy", Shape{1}, std::vector<T>{loss_value}, {logits},
                      [logits, probs, tgt = std::move(tgt), rows, cols](std::span<const T> g) {
                        T* gz = grad_of(logits);
                        if (!gz) return;
                        auto P = probs.data();
                        const T scale = g[0] / static_cast<T>(rows);
                        for (std::size_t r = 0; r < rows; ++r) {
                          for (std::size_t c = 0; c < cols; ++c) {
                            const T onehot = c == tgt[r] ? T{1} : T{0};
                            gz[r * cols + c] += scale * (P[r * cols + c] - onehot);
                          }
                        }
                      });
  return {std::move(loss), std::move(probs)};
}

template <typename T>
BasicTensor<double> finite_diff_grad(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& x,
                                     double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  NoGradGuard no_grad;
  std::vector<double> grad(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    auto plus = x.clone();
    auto minus = x.clone();
    plus.mutable_data()[i] = static_cast<T>(static_cast<double>(x[i]) + h);
    minus.mutable_data()[i] = static_cast<T>(static_cast<double>(x[i]) - h);
    // Use the step actually representable in T.
    const double step = static_cast<double>(plus[i]) - static_cast<double>(minus[i]);
    grad[i] = (f(plus) - f(minus)) / step;
  }
  return BasicTensor<double>(x.shape(), std::move(grad));
}

#define DEEPSELF_INSTANTIATE_OPS(T)                                                                           \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                               \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> affine(const BasicTensor<T>&, T, T);                                                \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> activation(const BasicTensor<T>&, Activation);                                      \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                              \
  template BasicTensor<T> to_sequence(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> select_step(const BasicTensor<T>&, std::size_t);                                    \
  template BasicTensor<T> stack_steps(const std::vector<BasicTensor<T>>&);                                    \
  template BasicTensor<T> concat_last(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> convolve_nd(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                      const ConvGeometry&);                                                   \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                                     \
  template LossAndProbabilities<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const std::size_t>); \
  template BasicTensor<double> finite_diff_grad(const std::function<double(const BasicTensor<T>&)>&,          \
                                                const BasicTensor<T>&, double);

DEEPSELF_INSTANTIATE_OPS(float)
DEEPSELF_INSTANTIATE_OPS(double)

#undef DEEPSELF_INSTANTIATE_OPS

}  // namespace deepself
