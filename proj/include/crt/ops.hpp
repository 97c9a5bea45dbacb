#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "crt/tensor.hpp"

namespace crt::ad {

namespace detail {

template <class T>
T* grad_of(Node<T>& node, std::size_t input) {
  Node<T>& in = *node.inputs[input];
  return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

[[noreturn]] inline void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

inline Shape broadcast_shapes(std::string_view op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Maps a linear index of the broadcast output back to a linear index of one operand.
struct BroadcastIndex {
  enum class Mode { same, suffix, general } mode = Mode::same;
  std::size_t n = 0;
  std::vector<std::size_t> map;

  BroadcastIndex(const Shape& out, const Shape& in) : n(numel(in)) {
    if (in == out) return;
    std::size_t lead = 0;
    while (lead < in.size() && in[lead] == 1) ++lead;
    const std::size_t tail = in.size() - lead;
    if (tail <= out.size() && std::equal(in.begin() + static_cast<std::ptrdiff_t>(lead), in.end(),
                                         out.end() - static_cast<std::ptrdiff_t>(tail))) {
      mode = Mode::suffix;
      return;
    }
    mode = Mode::general;
    const std::size_t rank = out.size();
    const std::size_t offset = rank - in.size();
    const auto in_strides = strides_of(in);
    std::vector<std::size_t> stride(rank, 0);
    for (std::size_t d = offset; d < rank; ++d) stride[d] = in[d - offset] == 1 ? 0 : in_strides[d - offset];
    map.resize(numel(out));
    std::vector<std::size_t> idx(rank, 0);
    std::size_t pos = 0;
    for (std::size_t o = 0; o < map.size(); ++o) {
      map[o] = pos;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        pos += stride[d];
        if (idx[d] < out[d]) break;
        pos -= stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }

  std::size_t operator()(std::size_t o) const {
    switch (mode) {
      case Mode::same: return o;
      case Mode::suffix: return o % n;
      default: return map[o];
    }
  }
};

template <class T, class Fwd, class Bwd>
Tensor<T> binary_op(std::string_view op, const Tensor<T>& a, const Tensor<T>& b, Fwd f, Bwd df) {
  Shape out_shape = broadcast_shapes(op, a.shape(), b.shape());
  auto ia = std::make_shared<BroadcastIndex>(out_shape, a.shape());
  auto ib = std::make_shared<BroadcastIndex>(out_shape, b.shape());
  const std::size_t n = numel(out_shape);
  std::vector<T> out(n);
  const T* x = a.data().data();
  const T* y = b.data().data();
  if (ia->mode == BroadcastIndex::Mode::same && ib->mode == BroadcastIndex::Mode::same) {
    for (std::size_t o = 0; o < n; ++o) out[o] = f(x[o], y[o]);
  } else {
    for (std::size_t o = 0; o < n; ++o) out[o] = f(x[(*ia)(o)], y[(*ib)(o)]);
  }
  return make_result<T>(op, std::move(out_shape), std::move(out), {a, b}, [ia, ib, df, n](Node<T>& self) {
    const T* x = self.inputs[0]->data.data();
    const T* y = self.inputs[1]->data.data();
    T* gx = grad_of(self, 0);
    T* gy = grad_of(self, 1);
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < n; ++o) {
      const std::size_t i = (*ia)(o), j = (*ib)(o);
      const auto [dx, dy] = df(x[i], y[j]);
      if (gx) gx[i] += g[o] * dx;
      if (gy) gy[j] += g[o] * dy;
    }
  });
}

// df(x, y) returns dy/dx given input x and output y.
template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(std::string_view op, const Tensor<T>& a, Fwd f, Bwd df) {
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  const T* x = a.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a}, [df, n](Node<T>& self) {
    const T* x = self.inputs[0]->data.data();
    const T* y = self.data.data();
    const T* g = self.grad.data();
    T* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * df(x[i], y[i]);
  });
}

// C[M,N] += A[M,K] * B[K,N], all contiguous row-major.
template <class T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    T* __restrict c0 = C + i * N;
    T* __restrict c1 = c0 + N;
    T* __restrict c2 = c1 + N;
    T* __restrict c3 = c2 + N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T v0 = a[k], v1 = a[K + k], v2 = a[2 * K + k], v3 = a[3 * K + k];
      const T* __restrict b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) {
        const T bj = b[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < M; ++i) {
    T* __restrict c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T v = a[k];
      const T* __restrict b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += v * b[j];
    }
  }
}

template <class T>
std::vector<T> transpose2d(const T* A, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = A[r * cols + c];
  return out;
}

// Copies src (shape `in`) into dst laid out as permute(in, perm). With `inverse`
// set, scatters-adds dst-layout values back into src layout instead.
template <class T>
void permute_apply(const Shape& in, const std::vector<std::size_t>& perm, const T* src, T* dst, bool inverse) {
  const std::size_t rank = in.size();
  const auto in_strides = strides_of(in);
  Shape out(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out[d] = in[perm[d]];
    stride[d] = in_strides[perm[d]];
  }
  const std::size_t total = numel(in);
  if (rank == 0) {
    if (inverse) const_cast<T*>(src)[0] += dst[0];
    else dst[0] = src[0];
    return;
  }
  const std::size_t inner = out[rank - 1];
  const std::size_t inner_stride = stride[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t pos = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    if (inverse) {
      T* s = const_cast<T*>(src);
      for (std::size_t j = 0; j < inner; ++j) s[pos + j * inner_stride] += dst[o + j];
    } else {
      for (std::size_t j = 0; j < inner; ++j) dst[o + j] = src[pos + j * inner_stride];
    }
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      pos += stride[d];
      if (idx[d] < out[d]) break;
      pos -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (numpy-style broadcasting).

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return std::pair<T, T>{T(1), T(1)}; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return std::pair<T, T>{T(1), T(-1)}; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T x, T y) { return std::pair<T, T>{y, x}; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T x, T y) { return std::pair<T, T>{T(1) / y, -x / (y * y)}; });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary_op<T>("scale", a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary_op<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_op<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

/// Natural log with the input clamped to at least 1e-12; zero gradient in the clamped region.
template <class T>
Tensor<T> log(const Tensor<T>& a) {
  static constexpr T floor = T(1e-12);
  return detail::unary_op<T>(
      "log", a, [](T x) { return std::log(std::max(x, floor)); },
      [](T x, T) { return x < floor ? T(0) : T(1) / x; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

/// log(sigmoid(x)) = -softplus(-x), evaluated without overflow or underflow to -inf.
template <class T>
Tensor<T> log_sigmoid(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "log_sigmoid", a, [](T x) { return std::min(x, T(0)) - std::log1p(std::exp(-std::abs(x))); },
      [](T x, T) { return T(1) / (T(1) + std::exp(x)); });
}

/// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "gelu", a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>)); },
      [](T x, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
        const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
        return cdf + x * pdf;
      });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "abs", a, [](T x) { return std::abs(x); }, [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout.

/// Batched matrix product over the last two axes; leading axes broadcast.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2)) detail::shape_error("matmul", a.shape(), b.shape());
  const std::size_t M = a.dim(-2), K = a.dim(-1), N = b.dim(-1);

  if (b.rank() == 2) {
    Shape out_shape = a.shape();
    out_shape.back() = N;
    const std::size_t rows = a.numel() / K;
    std::vector<T> out(rows * N, T(0));
    detail::gemm_acc(rows, N, K, a.data().data(), b.data().data(), out.data());
    return make_result<T>("matmul", std::move(out_shape), std::move(out), {a, b}, [rows, N, K](Node<T>& self) {
      const T* A = self.inputs[0]->data.data();
      const T* B = self.inputs[1]->data.data();
      const T* G = self.grad.data();
      if (T* gA = detail::grad_of(self, 0)) {
        const auto Bt = detail::transpose2d(B, K, N);
        detail::gemm_acc(rows, K, N, G, Bt.data(), gA);
      }
      if (T* gB = detail::grad_of(self, 1)) {
        const auto At = detail::transpose2d(A, rows, K);
        detail::gemm_acc(K, N, rows, At.data(), G, gB);
      }
    });
  }

  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch = detail::broadcast_shapes("matmul", batch_a, batch_b);
  auto ia = std::make_shared<detail::BroadcastIndex>(batch, batch_a);
  auto ib = std::make_shared<detail::BroadcastIndex>(batch, batch_b);
  const std::size_t nb = numel(batch);
  std::vector<T> out(nb * M * N, T(0));
  for (std::size_t p = 0; p < nb; ++p) {
    detail::gemm_acc(M, N, K, a.data().data() + (*ia)(p) * M * K, b.data().data() + (*ib)(p) * K * N,
                     out.data() + p * M * N);
  }
  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(N);
  return make_result<T>("matmul", std::move(out_shape), std::move(out), {a, b}, [ia, ib, nb, M, N, K](Node<T>& self) {
    const T* A = self.inputs[0]->data.data();
    const T* B = self.inputs[1]->data.data();
    const T* G = self.grad.data();
    T* gA = detail::grad_of(self, 0);
    T* gB = detail::grad_of(self, 1);
    for (std::size_t p = 0; p < nb; ++p) {
      const T* Ap = A + (*ia)(p) * M * K;
      const T* Bp = B + (*ib)(p) * K * N;
      const T* Gp = G + p * M * N;
      if (gA) {
        const auto Bt = detail::transpose2d(Bp, K, N);
        detail::gemm_acc(M, K, N, Gp, Bt.data(), gA + (*ia)(p) * M * K);
      }
      if (gB) {
        const auto At = detail::transpose2d(Ap, M, K);
        detail::gemm_acc(K, N, M, At.data(), Gp, gB + (*ib)(p) * K * N);
      }
    }
  });
}

template <class T>
Tensor<T> permute(const Tensor<T>& a, std::vector<std::size_t> perm) {
  if (perm.size() != a.rank()) throw std::invalid_argument("permute: axis list does not match rank of " + to_string(a.shape()));
  std::vector<bool> used(perm.size(), false);
  Shape out_shape(perm.size());
  for (std::size_t d = 0; d < perm.size(); ++d) {
    if (perm[d] >= perm.size() || used[perm[d]]) throw std::invalid_argument("permute: invalid axis permutation");
    used[perm[d]] = true;
    out_shape[d] = a.shape()[perm[d]];
  }
  std::vector<T> out(a.numel());
  detail::permute_apply(a.shape(), perm, a.data().data(), out.data(), false);
  return make_result<T>("permute", std::move(out_shape), std::move(out), {a}, [perm](Node<T>& self) {
    detail::permute_apply(self.inputs[0]->shape, perm, detail::grad_of(self, 0), self.grad.data(), true);
  });
}

/// Swaps two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& a, std::ptrdiff_t axis0 = -2, std::ptrdiff_t axis1 = -1) {
  std::vector<std::size_t> perm(a.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[a.normalize_axis(axis0)], perm[a.normalize_axis(axis1)]);
  return permute(a, std::move(perm));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) detail::shape_error("reshape", a.shape(), shape);
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    T* gx = detail::grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  const std::size_t ax = parts[0].normalize_axis(axis);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) detail::shape_error("concat", parts[0].shape(), p.shape());
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d]) detail::shape_error("concat", parts[0].shape(), p.shape());
    }
    out_shape[ax] += p.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= out_shape[d];
  for (std::size_t d = ax + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
  const std::size_t row = out_shape[ax] * inner;
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[ax] * inner;
    widths.push_back(w);
    const T* src = p.data().data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * w, w, out.data() + o * row + offset);
    offset += w;
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts, [widths, outer, row](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const std::size_t w = widths[i];
      if (T* g = detail::grad_of(self, i)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < w; ++j) g[o * w + j] += self.grad[o * row + offset + j];
      }
      offset += w;
    }
  });
}

/// Half-open range [begin, end) along one axis.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = a.normalize_axis(axis);
  if (begin >= end || end > a.shape()[ax]) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                ") invalid for axis " + std::to_string(ax) + " of " + to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[ax] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= a.shape()[d];
  for (std::size_t d = ax + 1; d < a.rank(); ++d) inner *= a.shape()[d];
  const std::size_t src_row = a.shape()[ax] * inner;
  const std::size_t w = (end - begin) * inner;
  const std::size_t off = begin * inner;
  std::vector<T> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(a.data().data() + o * src_row + off, w, out.data() + o * w);
  return make_result<T>("slice", std::move(out_shape), std::move(out), {a}, [outer, src_row, w, off](Node<T>& self) {
    T* g = detail::grad_of(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < w; ++j) g[o * src_row + off + j] += self.grad[o * w + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions.

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return make_result<T>("sum", {}, {total}, {a}, [](Node<T>& self) {
    T* g = detail::grad_of(self, 0);
    const T s = self.grad[0];
    for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) g[i] += s;
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> sum(const Tensor<T>& a, std::ptrdiff_t axis, bool keepdim = false) {
  const std::size_t ax = a.normalize_axis(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= a.shape()[d];
  for (std::size_t d = ax + 1; d < a.rank(); ++d) inner *= a.shape()[d];
  const std::size_t n = a.shape()[ax];
  Shape out_shape = a.shape();
  if (keepdim) out_shape[ax] = 1;
  else out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> out(outer * inner, T(0));
  const T* x = a.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * n + k) * inner + i];
  return make_result<T>("sum_axis", std::move(out_shape), std::move(out), {a}, [outer, inner, n](Node<T>& self) {
    T* g = detail::grad_of(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) g[(o * n + k) * inner + i] += self.grad[o * inner + i];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a, std::ptrdiff_t axis, bool keepdim = false) {
  const T n = static_cast<T>(a.shape()[a.normalize_axis(axis)]);
  return scale(sum(a, axis, keepdim), T(1) / n);
}

// ---------------------------------------------------------------------------
// Normalization.

/// Softmax over the last axis; subtracts the row maximum first. Entries equal to
/// -infinity receive exactly zero weight.
template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
  if (a.rank() == 0) throw std::invalid_argument("softmax: scalar input");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  std::vector<T> out(a.numel());
  const T* x = a.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * n;
    T* yr = out.data() + r * n;
    const T m = *std::max_element(xr, xr + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) total += (yr[j] = std::exp(xr[j] - m));
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
  return make_result<T>("softmax", a.shape(), std::move(out), {a}, [rows, n](Node<T>& self) {
    T* gx = detail::grad_of(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

/// Layer normalization over the last axis with learnable scale and shift
/// (both of shape [last-extent]).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& scale_, const Tensor<T>& shift, T eps = T(1e-5)) {
  if (x.rank() == 0) throw std::invalid_argument("layer_norm: scalar input");
  const std::size_t n = x.shape().back();
  if (scale_.shape() != Shape{n}) detail::shape_error("layer_norm", x.shape(), scale_.shape());
  if (shift.shape() != Shape{n}) detail::shape_error("layer_norm", x.shape(), shift.shape());
  const std::size_t rows = x.numel() / n;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const T* xs = x.data().data();
  const T* gamma = scale_.data().data();
  const T* beta = shift.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xs + r * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xr[j] - mu) * rs;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gamma[j] + beta[j];
    }
  }
  return make_result<T>("layer_norm", x.shape(), std::move(out), {x, scale_, shift},
                        [xhat, rstd, rows, n](Node<T>& self) {
                          T* gx = detail::grad_of(self, 0);
                          T* ggamma = detail::grad_of(self, 1);
                          T* gbeta = detail::grad_of(self, 2);
                          const T* gamma = self.inputs[1]->data.data();
                          std::vector<T> dxhat(n);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* g = self.grad.data() + r * n;
                            const T* h = xhat->data() + r * n;
                            T mean_d = T(0), mean_dh = T(0);
                            for (std::size_t j = 0; j < n; ++j) {
                              if (ggamma) ggamma[j] += g[j] * h[j];
                              if (gbeta) gbeta[j] += g[j];
                              dxhat[j] = g[j] * gamma[j];
                              mean_d += dxhat[j];
                              mean_dh += dxhat[j] * h[j];
                            }
                            if (!gx) continue;
                            mean_d /= static_cast<T>(n);
                            mean_dh /= static_cast<T>(n);
                            const T rs = (*rstd)[r];
                            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += rs * (dxhat[j] - mean_d - h[j] * mean_dh);
                          }
                        });
}

// ---------------------------------------------------------------------------
// Windowed filtering.

/// Valid-mode 2D correlation of the last two axes with a constant kernel
/// (row-major, kernel_h x kernel_w). Gradients flow to the signal only.
template <class T>
Tensor<T> correlate2d(const Tensor<T>& x, std::vector<T> kernel, std::size_t kernel_h, std::size_t kernel_w) {
  if (x.rank() < 2) throw std::invalid_argument("correlate2d: input rank < 2, shape " + to_string(x.shape()));
  if (kernel.size() != kernel_h * kernel_w || kernel_h == 0 || kernel_w == 0) {
    throw std::invalid_argument("correlate2d: kernel size does not match its extents");
  }
  const std::size_t H = x.dim(-2), W = x.dim(-1);
  if (H < kernel_h || W < kernel_w) {
    detail::shape_error("correlate2d", x.shape(), Shape{kernel_h, kernel_w});
  }
  const std::size_t OH = H - kernel_h + 1, OW = W - kernel_w + 1;
  const std::size_t planes = x.numel() / (H * W);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = OH;
  out_shape.back() = OW;
  std::vector<T> out(planes * OH * OW, T(0));
  const T* xs = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xs + p * H * W;
    T* dst = out.data() + p * OH * OW;
    for (std::size_t u = 0; u < kernel_h; ++u)
      for (std::size_t v = 0; v < kernel_w; ++v) {
        const T k = kernel[u * kernel_w + v];
        for (std::size_t i = 0; i < OH; ++i) {
          const T* s = src + (i + u) * W + v;
          T* d = dst + i * OW;
          for (std::size_t j = 0; j < OW; ++j) d[j] += k * s[j];
        }
      }
  }
  auto kern = std::make_shared<std::vector<T>>(std::move(kernel));
  return make_result<T>("correlate2d", std::move(out_shape), std::move(out), {x},
                        [kern, planes, H, W, OH, OW, kernel_h, kernel_w](Node<T>& self) {
                          T* gx = detail::grad_of(self, 0);
                          for (std::size_t p = 0; p < planes; ++p) {
                            T* gsrc = gx + p * H * W;
                            const T* g = self.grad.data() + p * OH * OW;
                            for (std::size_t u = 0; u < kernel_h; ++u)
                              for (std::size_t v = 0; v < kernel_w; ++v) {
                                const T k = (*kern)[u * kernel_w + v];
                                for (std::size_t i = 0; i < OH; ++i) {
                                  T* s = gsrc + (i + u) * W + v;
                                  const T* gi = g + i * OW;
                                  for (std::size_t j = 0; j < OW; ++j) s[j] += k * gi[j];
                                }
                              }
                          }
                        });
}

}  // namespace crt::ad
