#include "zsr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "zsr/error.hpp"

namespace zsr::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
bool tracking(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!active_tape()) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void check_finite(const char* op, const BasicTensor<T>& t) {
  if (!strict_mode()) return;
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input value");
  }
}

template <typename T>
void touch(const BasicTensor<T>& t) {
  if (t.requires_grad()) t.ensure_grad();
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void bad_shape(const char* op, const Shape& a, const char* expect) {
  throw ShapeError(std::string(op) + ": unexpected shape " + shape_str(a) + " (expected " +
                   expect + ")");
}

template <typename T>
void require_defined(const char* op, const BasicTensor<T>& t) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

template <typename T>
void record(BasicTensor<T>& out, std::function<void()> rule) {
  out.set_requires_grad(true);
  active_tape()->record(std::move(rule));
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.rank() < 1 || b.rank() != 2) shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t k = a.shape().back();
  const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != bk) shape_mismatch("matmul", a.shape(), b.shape());
  check_finite("matmul", a);
  check_finite("matmul", b);
  const std::size_t m = a.numel() / k;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  auto out = BasicTensor<T>::zeros(out_shape);
  ConstMatMap<T> A(a.ptr(), m, k);
  MatMap<T> C(out.ptr(), m, n);
  if (transpose_b) {
    ConstMatMap<T> B(b.ptr(), n, k);
    C.noalias() = A * B.transpose();
  } else {
    ConstMatMap<T> B(b.ptr(), k, n);
    C.noalias() = A * B;
  }
  if (tracking<T>({&a, &b})) {
    record(out, [a, b, out, m, k, n, transpose_b]() mutable {
      touch(a);
      touch(b);
      if (!out.has_grad()) return;
      ConstMatMap<T> G(out.grad().data(), m, n);
      ConstMatMap<T> A(a.ptr(), m, k);
      if (a.requires_grad()) {
        MatMap<T> dA(a.grad().data(), m, k);
        if (transpose_b) {
          ConstMatMap<T> B(b.ptr(), n, k);
          dA.noalias() += G * B;
        } else {
          ConstMatMap<T> B(b.ptr(), k, n);
          dA.noalias() += G * B.transpose();
        }
      }
      if (b.requires_grad()) {
        if (transpose_b) {
          MatMap<T> dB(b.grad().data(), n, k);
          dB.noalias() += G.transpose() * A;
        } else {
          MatMap<T> dB(b.grad().data(), k, n);
          dB.noalias() += A.transpose() * G;
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_b) {
  require_defined("bmm", a);
  require_defined("bmm", b);
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    shape_mismatch("bmm", a.shape(), b.shape());
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (k != bk) shape_mismatch("bmm", a.shape(), b.shape());
  check_finite("bmm", a);
  check_finite("bmm", b);
  auto out = BasicTensor<T>::zeros({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatMap<T> A(a.ptr() + i * m * k, m, k);
    MatMap<T> C(out.ptr() + i * m * n, m, n);
    if (transpose_b) {
      ConstMatMap<T> B(b.ptr() + i * n * k, n, k);
      C.noalias() = A * B.transpose();
    } else {
      ConstMatMap<T> B(b.ptr() + i * k * n, k, n);
      C.noalias() = A * B;
    }
  }
  if (tracking<T>({&a, &b})) {
    record(out, [a, b, out, batch, m, k, n, transpose_b]() mutable {
      touch(a);
      touch(b);
      if (!out.has_grad()) return;
      for (std::size_t i = 0; i < batch; ++i) {
        ConstMatMap<T> G(out.grad().data() + i * m * n, m, n);
        ConstMatMap<T> A(a.ptr() + i * m * k, m, k);
        if (a.requires_grad()) {
          MatMap<T> dA(a.grad().data() + i * m * k, m, k);
          if (transpose_b) {
            ConstMatMap<T> B(b.ptr() + i * n * k, n, k);
            dA.noalias() += G * B;
          } else {
            ConstMatMap<T> B(b.ptr() + i * k * n, k, n);
            dA.noalias() += G * B.transpose();
          }
        }
        if (b.requires_grad()) {
          if (transpose_b) {
            MatMap<T> dB(b.grad().data() + i * n * k, n, k);
            dB.noalias() += G.transpose() * A;
          } else {
            MatMap<T> dB(b.grad().data() + i * k * n, k, n);
            dB.noalias() += A.transpose() * G;
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Shared body for same-shape binary elementwise ops. `da`/`db` give the
// partial derivatives given (a_i, b_i).
template <typename T, typename Fwd, typename Da, typename Db>
BasicTensor<T> binary(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd,
                      Da da, Db db) {
  require_defined(op, a);
  require_defined(op, b);
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
  check_finite(op, a);
  check_finite(op, b);
  auto out = BasicTensor<T>::zeros(a.shape());
  const std::size_t n = a.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  if (tracking<T>({&a, &b})) {
    record(out, [a, b, out, n, da, db]() mutable {
      touch(a);
      touch(b);
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad().data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(a.ptr()[i], b.ptr()[i]);
      }
      if (b.requires_grad()) {
        T* gb = b.grad().data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * db(a.ptr()[i], b.ptr()[i]);
      }
    });
  }
  return out;
}

// Shared body for unary elementwise ops; `deriv(x, y)` gets input and output.
template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary(const char* op, const BasicTensor<T>& a, Fwd fwd, Deriv deriv) {
  require_defined(op, a);
  check_finite(op, a);
  auto out = BasicTensor<T>::zeros(a.shape());
  const std::size_t n = a.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  if (tracking<T>({&a})) {
    record(out, [a, out, n, deriv]() mutable {
      touch(a);
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* ga = a.grad().data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * deriv(a.ptr()[i], out.ptr()[i]);
    });
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& a, const BasicTensor<T>& bias) {
  require_defined("add_bias", a);
  require_defined("add_bias", bias);
  const Shape& sa = a.shape();
  const Shape& sb = bias.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    shape_mismatch("add_bias", sa, sb);
  }
  check_finite("add_bias", a);
  check_finite("add_bias", bias);
  const std::size_t inner = bias.numel();
  const std::size_t outer = a.numel() / inner;
  auto out = BasicTensor<T>::zeros(sa);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* pa = a.ptr() + o * inner;
    T* po = out.ptr() + o * inner;
    const T* pb = bias.ptr();
    for (std::size_t i = 0; i < inner; ++i) po[i] = pa[i] + pb[i];
  }
  if (tracking<T>({&a, &bias})) {
    record(out, [a, bias, out, inner, outer]() mutable {
      touch(a);
      touch(bias);
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad().data();
        for (std::size_t i = 0; i < inner * outer; ++i) ga[i] += g[i];
      }
      if (bias.requires_grad()) {
        T* gb = bias.grad().data();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) gb[i] += g[o * inner + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double s) {
  const T f = static_cast<T>(s);
  return unary<T>(
      "scale", a, [f](T x) { return x * f; }, [f](T, T) { return f; });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, double lo, double hi) {
  if (!(lo <= hi)) throw ValidationError("clamp: lo > hi");
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  return unary<T>(
      "clamp", a, [l, h](T x) { return std::clamp(x, l, h); },
      [l, h](T x, T) { return (x >= l && x <= h) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> sign(const BasicTensor<T>& a) {
  return unary<T>(
      "sign", a, [](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); },
      [](T, T) { return T(0); });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  return unary<T>(
      "gelu", a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(kC * (x + kA * x * x * x))); },
      [](T x, T) {
        const T t = std::tanh(kC * (x + kA * x * x * x));
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * kC * (T(1) + T(3) * kA * x * x);
      });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  return unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a) {
  require_defined("softmax", a);
  check_finite("softmax", a);
  const std::size_t n = last_dim(a.shape());
  const std::size_t rows = a.numel() / n;
  auto out = BasicTensor<T>::zeros(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.ptr() + r * n;
    T* y = out.ptr() + r * n;
    const T mx = *std::max_element(x, x + n);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      total += y[i];
    }
    const T inv = T(1) / total;
    for (std::size_t i = 0; i < n; ++i) y[i] *= inv;
  }
  if (tracking<T>({&a})) {
    record(out, [a, out, n, rows]() mutable {
      touch(a);
      if (!out.has_grad()) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = out.ptr() + r * n;
        const T* g = out.grad().data() + r * n;
        T* ga = a.grad().data() + r * n;
        T dot = 0;
        for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
        for (std::size_t i = 0; i < n; ++i) ga[i] += y[i] * (g[i] - dot);
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& a) {
  require_defined("log_softmax", a);
  check_finite("log_softmax", a);
  const std::size_t n = last_dim(a.shape());
  const std::size_t rows = a.numel() / n;
  auto out = BasicTensor<T>::zeros(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.ptr() + r * n;
    T* y = out.ptr() + r * n;
    const T mx = *std::max_element(x, x + n);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(x[i] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - lse;
  }
  if (tracking<T>({&a})) {
    record(out, [a, out, n, rows]() mutable {
      touch(a);
      if (!out.has_grad()) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = out.ptr() + r * n;
        const T* g = out.grad().data() + r * n;
        T* ga = a.grad().data() + r * n;
        T total = 0;
        for (std::size_t i = 0; i < n; ++i) total += g[i];
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] - std::exp(y[i]) * total;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& a, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta) {
  require_defined("layer_norm", a);
  const std::size_t n = last_dim(a.shape());
  if (gamma.shape() != Shape{n}) shape_mismatch("layer_norm", a.shape(), gamma.shape());
  if (beta.shape() != Shape{n}) shape_mismatch("layer_norm", a.shape(), beta.shape());
  check_finite("layer_norm", a);
  const std::size_t rows = a.numel() / n;
  auto out = BasicTensor<T>::zeros(a.shape());
  // Normalized input and reciprocal std per row, kept for the backward rule.
  std::vector<T> xhat(a.numel());
  std::vector<T> rstd(rows);
  const T eps = static_cast<T>(kLayerNormEps);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.ptr() + r * n;
    T mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += x[i];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    T* xh = xhat.data() + r * n;
    T* y = out.ptr() + r * n;
    for (std::size_t i = 0; i < n; ++i) {
      xh[i] = (x[i] - mu) * rstd[r];
      y[i] = xh[i] * gamma.ptr()[i] + beta.ptr()[i];
    }
  }
  if (tracking<T>({&a, &gamma, &beta})) {
    record(out, [a, gamma, beta, out, n, rows, xhat = std::move(xhat),
                 rstd = std::move(rstd)]() mutable {
      touch(a);
      touch(gamma);
      touch(beta);
      if (!out.has_grad()) return;
      const T inv_n = T(1) / static_cast<T>(n);
      std::vector<T> dxh(n);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = out.grad().data() + r * n;
        const T* xh = xhat.data() + r * n;
        if (gamma.requires_grad()) {
          T* gg = gamma.grad().data();
          for (std::size_t i = 0; i < n; ++i) gg[i] += g[i] * xh[i];
        }
        if (beta.requires_grad()) {
          T* gb = beta.grad().data();
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
        if (a.requires_grad()) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t i = 0; i < n; ++i) {
            dxh[i] = g[i] * gamma.ptr()[i];
            mean_d += dxh[i];
            mean_dx += dxh[i] * xh[i];
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          T* ga = a.grad().data() + r * n;
          for (std::size_t i = 0; i < n; ++i) ga[i] += rstd[r] * (dxh[i] - mean_d - xh[i] * mean_dx);
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& a) {
  require_defined("l2_normalize", a);
  check_finite("l2_normalize", a);
  const std::size_t n = last_dim(a.shape());
  const std::size_t rows = a.numel() / n;
  auto out = BasicTensor<T>::zeros(a.shape());
  std::vector<T> norms(rows);
  std::vector<bool> floored(rows);
  const T floor = static_cast<T>(kNormFloor);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.ptr() + r * n;
    T ss = 0;
    for (std::size_t i = 0; i < n; ++i) ss += x[i] * x[i];
    const T nrm = std::sqrt(ss);
    floored[r] = nrm < floor;
    norms[r] = floored[r] ? floor : nrm;
    T* y = out.ptr() + r * n;
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] / norms[r];
  }
  if (tracking<T>({&a})) {
    record(out, [a, out, n, rows, norms = std::move(norms),
                 floored = std::move(floored)]() mutable {
      touch(a);
      if (!out.has_grad()) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = out.ptr() + r * n;
        const T* g = out.grad().data() + r * n;
        T* ga = a.grad().data() + r * n;
        if (floored[r]) {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / norms[r];
          continue;
        }
        T dot = 0;
        for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
        for (std::size_t i = 0; i < n; ++i) ga[i] += (g[i] - y[i] * dot) / norms[r];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> cosine_similarity_matrix(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_defined("cosine_similarity_matrix", a);
  require_defined("cosine_similarity_matrix", b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    shape_mismatch("cosine_similarity_matrix", a.shape(), b.shape());
  }
  return matmul(l2_normalize(a), l2_normalize(b), /*transpose_b=*/true);
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& a, std::span<const std::uint32_t> indices) {
  require_defined("gather_rows", a);
  if (a.rank() < 1) bad_shape("gather_rows", a.shape(), "rank >= 1");
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t rows = a.dim(0);
  const std::size_t width = a.numel() / rows;
  for (auto i : indices) {
    if (i >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       shape_str(a.shape()));
    }
  }
  Shape s = a.shape();
  s[0] = indices.size();
  auto out = BasicTensor<T>::zeros(s);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(a.ptr() + indices[r] * width, width, out.ptr() + r * width);
  }
  if (tracking<T>({&a})) {
    std::vector<std::uint32_t> idx(indices.begin(), indices.end());
    record(out, [a, out, width, idx = std::move(idx)]() mutable {
      touch(a);
      if (!out.has_grad()) return;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const T* g = out.grad().data() + r * width;
        T* ga = a.grad().data() + idx[r] * width;
        for (std::size_t i = 0; i < width; ++i) ga[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> select_per_row(const BasicTensor<T>& a, std::span<const std::uint32_t> indices) {
  require_defined("select_per_row", a);
  if (a.rank() != 2) bad_shape("select_per_row", a.shape(), "[N, C]");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (indices.size() != rows) {
    shape_mismatch("select_per_row", a.shape(), Shape{indices.size()});
  }
  for (auto i : indices) {
    if (i >= cols) {
      throw ShapeError("select_per_row: index " + std::to_string(i) + " out of range for " +
                       shape_str(a.shape()));
    }
  }
  auto out = BasicTensor<T>::zeros({rows});
  for (std::size_t r = 0; r < rows; ++r) out.ptr()[r] = a.ptr()[r * cols + indices[r]];
  if (tracking<T>({&a})) {
    std::vector<std::uint32_t> idx(indices.begin(), indices.end());
    record(out, [a, out, cols, idx = std::move(idx)]() mutable {
      touch(a);
      if (!out.has_grad()) return;
      for (std::size_t r = 0; r < idx.size(); ++r) a.grad()[r * cols + idx[r]] += out.grad()[r];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  require_defined("sum", a);
  check_finite("sum", a);
  T total = 0;
  for (T v : a.data()) total += v;
  auto out = BasicTensor<T>::scalar(total);
  if (tracking<T>({&a})) {
    record(out, [a, out]() mutable {
      touch(a);
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (T& v : a.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  require_defined("mean", a);
  check_finite("mean", a);
  T total = 0;
  for (T v : a.data()) total += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  auto out = BasicTensor<T>::scalar(total * inv);
  if (tracking<T>({&a})) {
    record(out, [a, out, inv]() mutable {
      touch(a);
      if (!out.has_grad()) return;
      const T g = out.grad()[0] * inv;
      for (T& v : a.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  require_defined("reshape", a);
  if (shape_numel(shape) != a.numel()) shape_mismatch("reshape", a.shape(), shape);
  auto out = BasicTensor<T>::from_data(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (tracking<T>({&a})) {
    record(out, [a, out]() mutable {
      touch(a);
      if (!out.has_grad()) return;
      auto ga = a.grad();
      auto g = out.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

namespace {

// A layout op is a fixed permutation: out[i] = in[src[i]]. Forward copies,
// backward scatters.
template <typename T>
BasicTensor<T> permute_by(const BasicTensor<T>& a, Shape shape, std::vector<std::uint32_t> src) {
  auto out = BasicTensor<T>::zeros(std::move(shape));
  T* po = out.ptr();
  const T* pa = a.ptr();
  for (std::size_t i = 0; i < src.size(); ++i) po[i] = pa[src[i]];
  if (tracking<T>({&a})) {
    record(out, [a, out, src = std::move(src)]() mutable {
      touch(a);
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* ga = a.grad().data();
      for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += g[i];
    });
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& images, std::size_t patch) {
  require_defined("patchify", images);
  if (images.rank() != 4) bad_shape("patchify", images.shape(), "[N, C, H, W]");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (patch == 0 || h % patch || w % patch) {
    throw ShapeError("patchify: image " + shape_str(images.shape()) +
                     " not divisible by patch size " + std::to_string(patch));
  }
  check_finite("patchify", images);
  const std::size_t gh = h / patch, gw = w / patch;
  const std::size_t feat = c * patch * patch;
  std::vector<std::uint32_t> src(images.numel());
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < patch; ++y)
            for (std::size_t x = 0; x < patch; ++x)
              src[o++] = static_cast<std::uint32_t>(((b * c + ch) * h + py * patch + y) * w +
                                                    px * patch + x);
  return permute_by(images, {n, gh * gw, feat}, std::move(src));
}

template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& qkv, std::size_t part, std::size_t heads) {
  require_defined("split_heads", qkv);
  if (qkv.rank() != 3 || qkv.dim(2) % (3 * heads) || part > 2) {
    bad_shape("split_heads", qkv.shape(), "[N, T, 3*d] with d divisible by heads");
  }
  const std::size_t n = qkv.dim(0), t = qkv.dim(1), d = qkv.dim(2) / 3, dh = d / heads;
  std::vector<std::uint32_t> src(n * t * d);
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t hh = 0; hh < heads; ++hh)
      for (std::size_t tt = 0; tt < t; ++tt)
        for (std::size_t e = 0; e < dh; ++e)
          src[o++] = static_cast<std::uint32_t>((b * t + tt) * 3 * d + part * d + hh * dh + e);
  return permute_by(qkv, {n * heads, t, dh}, std::move(src));
}

template <typename T>
BasicTensor<T> merge_heads(const BasicTensor<T>& a, std::size_t heads) {
  require_defined("merge_heads", a);
  if (a.rank() != 3 || heads == 0 || a.dim(0) % heads) {
    bad_shape("merge_heads", a.shape(), "[N*heads, T, dh]");
  }
  const std::size_t n = a.dim(0) / heads, t = a.dim(1), dh = a.dim(2);
  std::vector<std::uint32_t> src(a.numel());
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t tt = 0; tt < t; ++tt)
      for (std::size_t hh = 0; hh < heads; ++hh)
        for (std::size_t e = 0; e < dh; ++e)
          src[o++] = static_cast<std::uint32_t>(((b * heads + hh) * t + tt) * dh + e);
  return permute_by(a, {n, t, heads * dh}, std::move(src));
}

template <typename T>
BasicTensor<T> concat_tokens(const BasicTensor<T>& x, const BasicTensor<T>& shared, bool front) {
  require_defined("concat_tokens", x);
  require_defined("concat_tokens", shared);
  if (x.rank() != 3 || shared.rank() != 2 || shared.dim(1) != x.dim(2)) {
    shape_mismatch("concat_tokens", x.shape(), shared.shape());
  }
  check_finite("concat_tokens", x);
  check_finite("concat_tokens", shared);
  const std::size_t n = x.dim(0), t = x.dim(1), d = x.dim(2), k = shared.dim(0);
  auto out = BasicTensor<T>::zeros({n, t + k, d});
  const std::size_t x_off = front ? k : 0;
  const std::size_t s_off = front ? 0 : t;
  for (std::size_t b = 0; b < n; ++b) {
    T* ob = out.ptr() + b * (t + k) * d;
    std::copy_n(x.ptr() + b * t * d, t * d, ob + x_off * d);
    std::copy_n(shared.ptr(), k * d, ob + s_off * d);
  }
  if (tracking<T>({&x, &shared})) {
    record(out, [x, shared, out, n, t, d, k, x_off, s_off]() mutable {
      touch(x);
      touch(shared);
      if (!out.has_grad()) return;
      for (std::size_t b = 0; b < n; ++b) {
        const T* gb = out.grad().data() + b * (t + k) * d;
        if (x.requires_grad()) {
          T* gx = x.grad().data() + b * t * d;
          for (std::size_t i = 0; i < t * d; ++i) gx[i] += gb[x_off * d + i];
        }
        if (shared.requires_grad()) {
          T* gs = shared.grad().data();
          for (std::size_t i = 0; i < k * d; ++i) gs[i] += gb[s_off * d + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> select_token(const BasicTensor<T>& x, std::size_t index) {
  require_defined("select_token", x);
  if (x.rank() != 3 || index >= x.dim(1)) bad_shape("select_token", x.shape(), "[N, T, d]");
  const std::size_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
  std::vector<std::uint32_t> src(n * d);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t e = 0; e < d; ++e)
      src[b * d + e] = static_cast<std::uint32_t>((b * t + index) * d + e);
  return permute_by(x, {n, d}, std::move(src));
}

#define ZSR_INSTANTIATE_OPS(T)                                                                  \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&, bool);           \
  template BasicTensor<T> bmm(const BasicTensor<T>&, const BasicTensor<T>&, bool);              \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                 \
  template BasicTensor<T> clamp(const BasicTensor<T>&, double, double);                         \
  template BasicTensor<T> sign(const BasicTensor<T>&);                                          \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                          \
  template BasicTensor<T> log(const BasicTensor<T>&);                                           \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                       \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&);                                   \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                     const BasicTensor<T>&);                                    \
  template BasicTensor<T> l2_normalize(const BasicTensor<T>&);                                  \
  template BasicTensor<T> cosine_similarity_matrix(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const std::uint32_t>);   \
  template BasicTensor<T> select_per_row(const BasicTensor<T>&, std::span<const std::uint32_t>); \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                           \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                          \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                \
  template BasicTensor<T> patchify(const BasicTensor<T>&, std::size_t);                         \
  template BasicTensor<T> split_heads(const BasicTensor<T>&, std::size_t, std::size_t);         \
  template BasicTensor<T> merge_heads(const BasicTensor<T>&, std::size_t);                      \
  template BasicTensor<T> concat_tokens(const BasicTensor<T>&, const BasicTensor<T>&, bool);    \
  template BasicTensor<T> select_token(const BasicTensor<T>&, std::size_t);

ZSR_INSTANTIATE_OPS(float)
ZSR_INSTANTIATE_OPS(double)

#undef ZSR_INSTANTIATE_OPS

}  // namespace zsr::ops
