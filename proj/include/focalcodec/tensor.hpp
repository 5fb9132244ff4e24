#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "focalcodec/common.hpp"

namespace focalcodec {

// Dense row-major float32 tensor. Copies share storage (handle semantics);
// use clone() for a deep copy. The optional grad buffer is allocated lazily
// by taped ops and always matches the data shape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::int64_t> shape) {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->data.assign(static_cast<std::size_t>(numel_of(t.s_->shape)), 0.0f);
    return t;
  }

  static Tensor full(std::vector<std::int64_t> shape, float value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.s_->data.begin(), t.s_->data.end(), value);
    return t;
  }

  static Tensor from(std::vector<std::int64_t> shape, std::vector<float> values) {
    const std::int64_t n = numel_of(shape);
    check(static_cast<std::int64_t>(values.size()) == n, "tensor: ", values.size(),
          " values for shape of ", n, " elements");
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->data = std::move(values);
    return t;
  }

  static Tensor scalar(float value) { return from({1}, {value}); }

  bool defined() const { return static_cast<bool>(s_); }
  const std::vector<std::int64_t>& shape() const { return s_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(s_->shape.size()); }
  std::int64_t dim(std::size_t i) const { return s_->shape[i]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(s_->data.size()); }

  float* data() { return s_->data.data(); }
  const float* data() const { return s_->data.data(); }
  std::span<const float> values() const { return {s_->data.data(), s_->data.size()}; }

  float& at(std::int64_t i) { return s_->data[static_cast<std::size_t>(i)]; }
  float at(std::int64_t i) const { return s_->data[static_cast<std::size_t>(i)]; }

  float item() const {
    check(numel() == 1, "item: tensor has ", numel(), " elements");
    return s_->data[0];
  }

  bool has_grad() const { return defined() && !s_->grad.empty(); }
  float* grad() { return s_->grad.data(); }
  const float* grad() const { return s_->grad.data(); }

  void ensure_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0f);
  }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0f);
  }

  Tensor clone() const {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = s_->shape;
    t.s_->data = s_->data;
    return t;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  bool all_finite() const {
    for (float v : s_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  struct Storage {
    std::vector<std::int64_t> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until a taped op touches the tensor
  };

  static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
    check(!shape.empty(), "tensor: rank-0 shapes are not supported");
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
      check(d >= 0, "tensor: negative dimension ", d);
      n *= d;
    }
    return n;
  }

  std::shared_ptr<Storage> s_;
};

// Wengert list recorded during a taped forward pass. Ops push one closure
// each in execution order; backward() replays them in reverse. A tape is
// single-use: backward() twice without reset() is an error.
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  void backward(Tensor& loss) {
    check(!spent_, "backward: tape already consumed; reset() first");
    check(loss.numel() == 1, "backward: loss must be scalar, got ", loss.numel(),
          " elements");
    spent_ = true;
    loss.ensure_grad();
    loss.grad()[0] = 1.0f;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  void reset() {
    steps_.clear();
    spent_ = false;
  }

  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
  bool spent_ = false;
};

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

// Truncated-normal (std 0.02) projection init shared by all model stacks.
inline Tensor init_weight(std::vector<std::int64_t> shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.at(i) = static_cast<float>(rng.trunc_normal(0.02));
  return t;
}

enum class PaddingMode { kZeros, kCircular };

struct ConvSpec {
  std::int64_t kernel_size = 1;
  std::int64_t stride = 1;
  std::int64_t groups = 1;
  bool transposed = false;
  PaddingMode padding_mode = PaddingMode::kZeros;
};

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), op, ": shape mismatch between operands");
}

}  // namespace detail

// ---- elementwise and broadcast arithmetic ----------------------------------

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::check_same_shape(a, b, "add");
  Tensor y = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y.at(i) = a.at(i) + b.at(i);
  if (tape) {
    Tensor ya = a, yb = b, yy = y;
    ya.ensure_grad();
    yb.ensure_grad();
    yy.ensure_grad();
    tape->record([ya, yb, yy]() mutable {
      for (std::int64_t i = 0; i < yy.numel(); ++i) {
        ya.grad()[i] += yy.grad()[i];
        yb.grad()[i] += yy.grad()[i];
      }
    });
  }
  return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::check_same_shape(a, b, "sub");
  Tensor y = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y.at(i) = a.at(i) - b.at(i);
  if (tape) {
    Tensor ya = a, yb = b, yy = y;
    ya.ensure_grad();
    yb.ensure_grad();
    yy.ensure_grad();
    tape->record([ya, yb, yy]() mutable {
      for (std::int64_t i = 0; i < yy.numel(); ++i) {
        ya.grad()[i] += yy.grad()[i];
        yb.grad()[i] -= yy.grad()[i];
      }
    });
  }
  return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::check_same_shape(a, b, "mul");
  Tensor y = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y.at(i) = a.at(i) * b.at(i);
  if (tape) {
    Tensor ya = a, yb = b, yy = y;
    ya.ensure_grad();
    yb.ensure_grad();
    yy.ensure_grad();
    tape->record([ya, yb, yy]() mutable {
      for (std::int64_t i = 0; i < yy.numel(); ++i) {
        ya.grad()[i] += yy.grad()[i] * yb.at(i);
        yb.grad()[i] += yy.grad()[i] * ya.at(i);
      }
    });
  }
  return y;
}

inline Tensor scale(const Tensor& a, float c, Tape* tape = nullptr) {
  Tensor y = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y.at(i) = a.at(i) * c;
  if (tape) {
    Tensor ya = a, yy = y;
    ya.ensure_grad();
    yy.ensure_grad();
    tape->record([ya, yy, c]() mutable {
      for (std::int64_t i = 0; i < yy.numel(); ++i) ya.grad()[i] += yy.grad()[i] * c;
    });
  }
  return y;
}

// x[T, C] + v[C] per row
inline Tensor add_row(const Tensor& x, const Tensor& v, Tape* tape = nullptr) {
  check(x.rank() == 2 && v.rank() == 1 && x.dim(1) == v.dim(0),
        "add_row: expected [T, C] + [C], got C=", x.rank() == 2 ? x.dim(1) : -1,
        " vs ", v.dim(0));
  const std::int64_t T = x.dim(0), C = x.dim(1);
  Tensor y = Tensor::zeros({T, C});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t c = 0; c < C; ++c) y.at(t * C + c) = x.at(t * C + c) + v.at(c);
  if (tape) {
    Tensor yx = x, yv = v, yy = y;
    yx.ensure_grad();
    yv.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yv, yy, T, C]() mutable {
      for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t c = 0; c < C; ++c) {
          yx.grad()[t * C + c] += yy.grad()[t * C + c];
          yv.grad()[c] += yy.grad()[t * C + c];
        }
    });
  }
  return y;
}

// x[T, C] * v[C] per row (layer scales, Snake alpha, channel gains)
inline Tensor mul_row(const Tensor& x, const Tensor& v, Tape* tape = nullptr) {
  check(x.rank() == 2 && v.rank() == 1 && x.dim(1) == v.dim(0),
        "mul_row: expected [T, C] * [C]");
  const std::int64_t T = x.dim(0), C = x.dim(1);
  Tensor y = Tensor::zeros({T, C});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t c = 0; c < C; ++c) y.at(t * C + c) = x.at(t * C + c) * v.at(c);
  if (tape) {
    Tensor yx = x, yv = v, yy = y;
    yx.ensure_grad();
    yv.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yv, yy, T, C]() mutable {
      for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t c = 0; c < C; ++c) {
          yx.grad()[t * C + c] += yy.grad()[t * C + c] * yv.at(c);
          yv.grad()[c] += yy.grad()[t * C + c] * yx.at(t * C + c);
        }
    });
  }
  return y;
}

// x[T, C] * g[T] (or g[T, 1]) broadcast across channels
inline Tensor mul_col(const Tensor& x, const Tensor& g, Tape* tape = nullptr) {
  const bool col = g.rank() == 2 && g.dim(1) == 1;
  check(x.rank() == 2 && (g.rank() == 1 || col) && g.dim(0) == x.dim(0),
        "mul_col: expected [T, C] * [T]");
  const std::int64_t T = x.dim(0), C = x.dim(1);
  Tensor y = Tensor::zeros({T, C});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t c = 0; c < C; ++c) y.at(t * C + c) = x.at(t * C + c) * g.at(t);
  if (tape) {
    Tensor yx = x, yg = g, yy = y;
    yx.ensure_grad();
    yg.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yg, yy, T, C]() mutable {
      for (std::int64_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
          yx.grad()[t * C + c] += yy.grad()[t * C + c] * yg.at(t);
          acc += static_cast<double>(yy.grad()[t * C + c]) * yx.at(t * C + c);
        }
        yg.grad()[t] += static_cast<float>(acc);
      }
    });
  }
  return y;
}

// ---- shape ops --------------------------------------------------------------

inline Tensor transpose(const Tensor& x, Tape* tape = nullptr) {
  check(x.rank() == 2, "transpose: expected rank-2 tensor, got rank ", x.rank());
  const std::int64_t R = x.dim(0), C = x.dim(1);
  Tensor y = Tensor::zeros({C, R});
  for (std::int64_t r = 0; r < R; ++r)
    for (std::int64_t c = 0; c < C; ++c) y.at(c * R + r) = x.at(r * C + c);
  if (tape) {
    Tensor yx = x, yy = y;
    yx.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yy, R, C]() mutable {
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < C; ++c) yx.grad()[r * C + c] += yy.grad()[c * R + r];
    });
  }
  return y;
}

inline Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1,
                         Tape* tape = nullptr) {
  check(x.rank() == 2, "slice_cols: expected rank-2 tensor");
  check(0 <= c0 && c0 < c1 && c1 <= x.dim(1), "slice_cols: range [", c0, ", ", c1,
        ") out of bounds for ", x.dim(1), " columns");
  const std::int64_t T = x.dim(0), C = x.dim(1), W = c1 - c0;
  Tensor y = Tensor::zeros({T, W});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t c = 0; c < W; ++c) y.at(t * W + c) = x.at(t * C + c0 + c);
  if (tape) {
    Tensor yx = x, yy = y;
    yx.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yy, T, C, W, c0]() mutable {
      for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t c = 0; c < W; ++c)
          yx.grad()[t * C + c0 + c] += yy.grad()[t * W + c];
    });
  }
  return y;
}

inline Tensor slice_rows(const Tensor& x, std::int64_t r0, std::int64_t r1,
                         Tape* tape = nullptr) {
  check(x.rank() == 2, "slice_rows: expected rank-2 tensor");
  check(0 <= r0 && r0 < r1 && r1 <= x.dim(0), "slice_rows: range [", r0, ", ", r1,
        ") out of bounds for ", x.dim(0), " rows");
  const std::int64_t C = x.dim(1), H = r1 - r0;
  Tensor y = Tensor::zeros({H, C});
  std::copy_n(x.data() + r0 * C, H * C, y.data());
  if (tape) {
    Tensor yx = x, yy = y;
    yx.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yy, r0, H, C]() mutable {
      for (std::int64_t i = 0; i < H * C; ++i) yx.grad()[r0 * C + i] += yy.grad()[i];
    });
  }
  return y;
}

// v[C] replicated to [T, C]
inline Tensor broadcast_row(const Tensor& v, std::int64_t T, Tape* tape = nullptr) {
  check(v.rank() == 1, "broadcast_row: expected rank-1 tensor");
  check(T >= 1, "broadcast_row: T must be >= 1");
  const std::int64_t C = v.dim(0);
  Tensor y = Tensor::zeros({T, C});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t c = 0; c < C; ++c) y.at(t * C + c) = v.at(c);
  if (tape) {
    Tensor yv = v, yy = y;
    yv.ensure_grad();
    yy.ensure_grad();
    tape->record([yv, yy, T, C]() mutable {
      for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::int64_t t = 0; t < T; ++t) acc += yy.grad()[t * C + c];
        yv.grad()[c] += static_cast<float>(acc);
      }
    });
  }
  return y;
}

// ---- reductions -------------------------------------------------------------

inline Tensor sum(const Tensor& x, Tape* tape = nullptr) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += x.at(i);
  Tensor y = Tensor::scalar(static_cast<float>(acc));
  if (tape) {
    Tensor yx = x, yy = y;
    yx.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yy]() mutable {
      const float g = yy.grad()[0];
      for (std::int64_t i = 0; i < yx.numel(); ++i) yx.grad()[i] += g;
    });
  }
  return y;
}

inline Tensor mean_all(const Tensor& x, Tape* tape = nullptr) {
  check(x.numel() > 0, "mean_all: empty tensor");
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += x.at(i);
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor y = Tensor::scalar(static_cast<float>(acc * inv));
  if (tape) {
    Tensor yx = x, yy = y;
    yx.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yy, inv]() mutable {
      const float g = static_cast<float>(yy.grad()[0] * inv);
      for (std::int64_t i = 0; i < yx.numel(); ++i) yx.grad()[i] += g;
    });
  }
  return y;
}

// Mean over time: [T, C] -> [C]; [T] -> scalar.
inline Tensor global_avg_pool(const Tensor& x, Tape* tape = nullptr) {
  check(x.rank() == 1 || x.rank() == 2, "global_avg_pool: expected rank 1 or 2");
  const std::int64_t T = x.dim(0);
  check(T >= 1, "global_avg_pool: empty time axis");
  const std::int64_t C = x.rank() == 2 ? x.dim(1) : 1;
  Tensor y = x.rank() == 2 ? Tensor::zeros({C}) : Tensor::zeros({1});
  const double inv = 1.0 / static_cast<double>(T);
  for (std::int64_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::int64_t t = 0; t < T; ++t) acc += x.at(t * C + c);
    y.at(c) = static_cast<float>(acc * inv);
  }
  if (tape) {
    Tensor yx = x, yy = y;
    yx.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yy, T, C, inv]() mutable {
      for (std::int64_t c = 0; c < C; ++c) {
        const float g = static_cast<float>(yy.grad()[c] * inv);
        for (std::int64_t t = 0; t < T; ++t) yx.grad()[t * C + c] += g;
      }
    });
  }
  return y;
}

// ---- activations and normalization -------------------------------------------

inline Tensor gelu(const Tensor& x, Tape* tape = nullptr) {
  Tensor y = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double v = x.at(i);
    y.at(i) = static_cast<float>(0.5 * v * (1.0 + std::erf(v * 0.7071067811865476)));
  }
  if (tape) {
    Tensor yx = x, yy = y;
    yx.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yy]() mutable {
      for (std::int64_t i = 0; i < yx.numel(); ++i) {
        const double v = yx.at(i);
        const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865476));
        const double pdf = 0.3989422804014327 * std::exp(-0.5 * v * v);
        yx.grad()[i] += yy.grad()[i] * static_cast<float>(cdf + v * pdf);
      }
    });
  }
  return y;
}

inline Tensor sigmoid(const Tensor& x, Tape* tape = nullptr) {
  Tensor y = Tensor::zeros(x.shape());
  auto sig = [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  };
  for (std::int64_t i = 0; i < x.numel(); ++i)
    y.at(i) = static_cast<float>(sig(x.at(i)));
  if (tape) {
    Tensor yx = x, yy = y;
    yx.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yy]() mutable {
      for (std::int64_t i = 0; i < yx.numel(); ++i) {
        const float s = yy.at(i);
        yx.grad()[i] += yy.grad()[i] * s * (1.0f - s);
      }
    });
  }
  return y;
}

// Normalizes each row of [T, C] (or a single [C] vector) over the channel
// axis with learned scale/shift. eps keeps the zero-variance row finite.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         Tape* tape = nullptr, float eps = 1e-5f) {
  const bool vec = x.rank() == 1;
  check(x.rank() == 1 || x.rank() == 2, "layer_norm: expected rank 1 or 2");
  const std::int64_t T = vec ? 1 : x.dim(0);
  const std::int64_t C = vec ? x.dim(0) : x.dim(1);
  check(gamma.rank() == 1 && gamma.dim(0) == C, "layer_norm: scale has ",
        gamma.dim(0), " channels, input has ", C);
  check(beta.rank() == 1 && beta.dim(0) == C, "layer_norm: shift has ", beta.dim(0),
        " channels, input has ", C);
  Tensor y = Tensor::zeros(x.shape());
  Tensor xhat = Tensor::zeros(x.shape());   // kept for the backward pass
  Tensor inv_std = Tensor::zeros({T});
  for (std::int64_t t = 0; t < T; ++t) {
    double mean = 0.0;
    for (std::int64_t c = 0; c < C; ++c) mean += x.at(t * C + c);
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      const double d = x.at(t * C + c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(C);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std.at(t) = static_cast<float>(inv);
    for (std::int64_t c = 0; c < C; ++c) {
      const double h = (x.at(t * C + c) - mean) * inv;
      xhat.at(t * C + c) = static_cast<float>(h);
      y.at(t * C + c) = static_cast<float>(h * gamma.at(c) + beta.at(c));
    }
  }
  if (tape) {
    Tensor yx = x, yg = gamma, yb = beta, yy = y;
    yx.ensure_grad();
    yg.ensure_grad();
    yb.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yg, yb, yy, xhat, inv_std, T, C]() mutable {
      for (std::int64_t t = 0; t < T; ++t) {
        double mean_a = 0.0, mean_ah = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
          const double a = static_cast<double>(yg.at(c)) * yy.grad()[t * C + c];
          mean_a += a;
          mean_ah += a * xhat.at(t * C + c);
        }
        mean_a /= static_cast<double>(C);
        mean_ah /= static_cast<double>(C);
        for (std::int64_t c = 0; c < C; ++c) {
          const double a = static_cast<double>(yg.at(c)) * yy.grad()[t * C + c];
          const double h = xhat.at(t * C + c);
          yx.grad()[t * C + c] +=
              static_cast<float>((a - mean_a - h * mean_ah) * inv_std.at(t));
          yg.grad()[c] += static_cast<float>(yy.grad()[t * C + c] * h);
          yb.grad()[c] += yy.grad()[t * C + c];
        }
      }
    });
  }
  return y;
}

// ---- linear -----------------------------------------------------------------

// y = x @ w + b along the last axis. x: [D_in] or [T, D_in]; w: [D_in, D_out].
// Dot products accumulate in 64-bit.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b,
                     Tape* tape = nullptr) {
  check(w.rank() == 2, "linear: weight must be rank 2");
  const std::int64_t Din = w.dim(0), Dout = w.dim(1);
  const bool vec = x.rank() == 1;
  check(vec || x.rank() == 2, "linear: input must be rank 1 or 2");
  const std::int64_t last = vec ? x.dim(0) : x.dim(1);
  check(last == Din, "linear: input feature dim ", last, " does not match weight dim ",
        Din);
  check(b.rank() == 1 && b.dim(0) == Dout, "linear: bias dim ", b.dim(0),
        " does not match output dim ", Dout);
  const std::int64_t T = vec ? 1 : x.dim(0);
  Tensor y = vec ? Tensor::zeros({Dout}) : Tensor::zeros({T, Dout});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t j = 0; j < Dout; ++j) {
      double acc = b.at(j);
      for (std::int64_t k = 0; k < Din; ++k)
        acc += static_cast<double>(x.at(t * Din + k)) * w.at(k * Dout + j);
      y.at(t * Dout + j) = static_cast<float>(acc);
    }
  if (tape) {
    Tensor yx = x, yw = w, yb = b, yy = y;
    yx.ensure_grad();
    yw.ensure_grad();
    yb.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, yw, yb, yy, T, Din, Dout]() mutable {
      for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t k = 0; k < Din; ++k) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < Dout; ++j)
            acc += static_cast<double>(yy.grad()[t * Dout + j]) * yw.at(k * Dout + j);
          yx.grad()[t * Din + k] += static_cast<float>(acc);
        }
      for (std::int64_t k = 0; k < Din; ++k)
        for (std::int64_t j = 0; j < Dout; ++j) {
          double acc = 0.0;
          for (std::int64_t t = 0; t < T; ++t)
            acc += static_cast<double>(yy.grad()[t * Dout + j]) * yx.at(t * Din + k);
          yw.grad()[k * Dout + j] += static_cast<float>(acc);
        }
      for (std::int64_t j = 0; j < Dout; ++j) {
        double acc = 0.0;
        for (std::int64_t t = 0; t < T; ++t) acc += yy.grad()[t * Dout + j];
        yb.grad()[j] += static_cast<float>(acc);
      }
    });
  }
  return y;
}

// ---- 1-D convolution ----------------------------------------------------------

namespace detail {

struct ConvPlan {
  std::int64_t cin, cout, T, Tout, k, stride, groups;
  std::int64_t pad_left = 0;   // forward: left padding; transposed: left crop
  bool circular = false;
};

inline ConvPlan plan_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                          const ConvSpec& spec) {
  check(x.rank() == 2, "conv1d: input must be [C, T]");
  check(w.rank() == 3, "conv1d: weight must be rank 3");
  check(spec.kernel_size >= 1, "conv1d: kernel size must be positive");
  check(spec.stride >= 1, "conv1d: stride must be >= 1");
  if (spec.stride == 1)
    check(spec.kernel_size % 2 == 1, "conv1d: kernel size ", spec.kernel_size,
          " must be odd at stride 1 (symmetric same-padding)");
  if (spec.transposed)
    check(spec.kernel_size >= spec.stride, "conv1d: transposed kernel ",
          spec.kernel_size, " smaller than stride ", spec.stride);
  ConvPlan p;
  p.k = spec.kernel_size;
  p.stride = spec.stride;
  p.groups = spec.groups;
  p.T = x.dim(1);
  p.circular = spec.padding_mode == PaddingMode::kCircular;
  if (p.circular)
    check(spec.stride == 1 && !spec.transposed,
          "conv1d: circular padding requires stride 1, non-transposed");
  if (!spec.transposed) {
    // weight [C_out, C_in / groups, k]
    p.cin = x.dim(0);
    p.cout = w.dim(0);
    check(w.dim(1) * spec.groups == p.cin, "conv1d: weight expects ",
          w.dim(1) * spec.groups, " input channels (dim 1), input has ", p.cin);
    check(w.dim(2) == p.k, "conv1d: weight kernel dim ", w.dim(2), " != spec ", p.k);
    p.Tout = (p.T + p.stride - 1) / p.stride;  // same-padding: ceil(T / stride)
    const std::int64_t pad_total =
        std::max<std::int64_t>(0, (p.Tout - 1) * p.stride + p.k - p.T);
    p.pad_left = pad_total / 2;
  } else {
    // weight [C_in, C_out / groups, k]; output length is exactly T * stride
    p.cin = x.dim(0);
    check(w.dim(0) == p.cin, "conv1d: transposed weight expects ", w.dim(0),
          " input channels (dim 0), input has ", p.cin);
    p.cout = w.dim(1) * spec.groups;
    check(w.dim(2) == p.k, "conv1d: weight kernel dim ", w.dim(2), " != spec ", p.k);
    p.Tout = p.T * p.stride;
    p.pad_left = (p.k - p.stride) / 2;  // symmetric crop of the full output
  }
  check(p.cin % p.groups == 0 && p.cout % p.groups == 0, "conv1d: groups ", p.groups,
        " must divide channel counts ", p.cin, " and ", p.cout);
  check(b.rank() == 1 && b.dim(0) == p.cout, "conv1d: bias dim ", b.dim(0),
        " does not match output channels ", p.cout);
  return p;
}

}  // namespace detail

// 1-D convolution over x[C_in, T]. Forward convs use same-padding so
// T' = ceil(T / stride); transposed convs emit exactly T * stride frames.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
                     const ConvSpec& spec, Tape* tape = nullptr) {
  const detail::ConvPlan p = detail::plan_conv(x, w, b, spec);
  const std::int64_t cin_g = p.cin / p.groups, cout_g = p.cout / p.groups;
  // Input time index feeding output position t at kernel tap kk, or -1.
  const auto src = [p](std::int64_t t, std::int64_t kk) -> std::int64_t {
    std::int64_t tau = t * p.stride - p.pad_left + kk;
    if (p.circular) tau = ((tau % p.T) + p.T) % p.T;
    return (tau < 0 || tau >= p.T) ? -1 : tau;
  };
  // Inverse of src for fixed kk: the output position that read x[., tau], or -1.
  const auto inv_src = [p](std::int64_t tau, std::int64_t kk) -> std::int64_t {
    const std::int64_t num = tau + p.pad_left - kk;
    if (p.circular) return ((num % p.T) + p.T) % p.T;  // stride 1, Tout == T
    if (num % p.stride != 0) return -1;
    const std::int64_t t = num / p.stride;
    return (t < 0 || t >= p.Tout) ? -1 : t;
  };
  // Transposed: output position written by input tau at tap kk, or -1.
  const auto dst = [p](std::int64_t tau, std::int64_t kk) -> std::int64_t {
    const std::int64_t t = tau * p.stride + kk - p.pad_left;
    return (t < 0 || t >= p.Tout) ? -1 : t;
  };
  Tensor y = Tensor::zeros({p.cout, p.Tout});
  if (!spec.transposed) {
    for (std::int64_t co = 0; co < p.cout; ++co) {
      const std::int64_t g = co / cout_g;
      for (std::int64_t t = 0; t < p.Tout; ++t) {
        double acc = b.at(co);
        for (std::int64_t ci = 0; ci < cin_g; ++ci) {
          const std::int64_t xin = g * cin_g + ci;
          for (std::int64_t kk = 0; kk < p.k; ++kk) {
            const std::int64_t tau = src(t, kk);
            if (tau < 0) continue;
            acc += static_cast<double>(x.at(xin * p.T + tau)) *
                   w.at((co * cin_g + ci) * p.k + kk);
          }
        }
        y.at(co * p.Tout + t) = static_cast<float>(acc);
      }
    }
  } else {
    for (std::int64_t g = 0; g < p.groups; ++g)
      for (std::int64_t co = 0; co < cout_g; ++co) {
        const std::int64_t yout = g * cout_g + co;
        for (std::int64_t t = 0; t < p.Tout; ++t) {
          double acc = b.at(yout);
          for (std::int64_t ci = 0; ci < cin_g; ++ci) {
            const std::int64_t xin = g * cin_g + ci;
            for (std::int64_t kk = 0; kk < p.k; ++kk) {
              const std::int64_t num = t + p.pad_left - kk;
              if (num % p.stride != 0) continue;
              const std::int64_t tau = num / p.stride;
              if (tau < 0 || tau >= p.T) continue;
              acc += static_cast<double>(x.at(xin * p.T + tau)) *
                     w.at((xin * cout_g + co) * p.k + kk);
            }
          }
          y.at(yout * p.Tout + t) = static_cast<float>(acc);
        }
      }
  }
  if (tape) {
    Tensor yx = x, yw = w, yb = b, yy = y;
    yx.ensure_grad();
    yw.ensure_grad();
    yb.ensure_grad();
    yy.ensure_grad();
    const bool transposed = spec.transposed;
    tape->record([yx, yw, yb, yy, p, cin_g, cout_g, transposed, src, inv_src,
                  dst]() mutable {
      for (std::int64_t co = 0; co < p.cout; ++co) {
        double acc = 0.0;
        for (std::int64_t t = 0; t < p.Tout; ++t) acc += yy.grad()[co * p.Tout + t];
        yb.grad()[co] += static_cast<float>(acc);
      }
      if (!transposed) {
        for (std::int64_t g = 0; g < p.groups; ++g)
          for (std::int64_t ci = 0; ci < cin_g; ++ci) {
            const std::int64_t xin = g * cin_g + ci;
            for (std::int64_t tau = 0; tau < p.T; ++tau) {
              double acc = 0.0;
              for (std::int64_t co = 0; co < cout_g; ++co) {
                const std::int64_t yout = g * cout_g + co;
                for (std::int64_t kk = 0; kk < p.k; ++kk) {
                  const std::int64_t t = inv_src(tau, kk);
                  if (t < 0) continue;
                  acc += static_cast<double>(yy.grad()[yout * p.Tout + t]) *
                         yw.at((yout * cin_g + ci) * p.k + kk);
                }
              }
              yx.grad()[xin * p.T + tau] += static_cast<float>(acc);
            }
            for (std::int64_t co = 0; co < cout_g; ++co) {
              const std::int64_t yout = g * cout_g + co;
              for (std::int64_t kk = 0; kk < p.k; ++kk) {
                double acc = 0.0;
                for (std::int64_t t = 0; t < p.Tout; ++t) {
                  const std::int64_t tau = src(t, kk);
                  if (tau < 0) continue;
                  acc += static_cast<double>(yy.grad()[yout * p.Tout + t]) *
                         yx.at(xin * p.T + tau);
                }
                yw.grad()[(yout * cin_g + ci) * p.k + kk] += static_cast<float>(acc);
              }
            }
          }
      } else {
        for (std::int64_t g = 0; g < p.groups; ++g)
          for (std::int64_t ci = 0; ci < cin_g; ++ci) {
            const std::int64_t xin = g * cin_g + ci;
            for (std::int64_t tau = 0; tau < p.T; ++tau) {
              double acc = 0.0;
              for (std::int64_t co = 0; co < cout_g; ++co) {
                const std::int64_t yout = g * cout_g + co;
                for (std::int64_t kk = 0; kk < p.k; ++kk) {
                  const std::int64_t t = dst(tau, kk);
                  if (t < 0) continue;
                  acc += static_cast<double>(yy.grad()[yout * p.Tout + t]) *
                         yw.at((xin * cout_g + co) * p.k + kk);
                }
              }
              yx.grad()[xin * p.T + tau] += static_cast<float>(acc);
            }
            for (std::int64_t co = 0; co < cout_g; ++co)
              for (std::int64_t kk = 0; kk < p.k; ++kk) {
                double acc = 0.0;
                for (std::int64_t tau = 0; tau < p.T; ++tau) {
                  const std::int64_t t = dst(tau, kk);
                  if (t < 0) continue;
                  acc += static_cast<double>(
                             yy.grad()[(g * cout_g + co) * p.Tout + t]) *
                         yx.at(xin * p.T + tau);
                }
                yw.grad()[(xin * cout_g + co) * p.k + kk] += static_cast<float>(acc);
              }
          }
      }
    });
  }
  return y;
}

// ---- finite-difference oracle -------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::int64_t evaluated = 0;
  std::int64_t excluded = 0;
};

// Central-difference check of d(loss)/dx against the tape. loss_fn must
// rebuild the loss from the current contents of x on every call; it gets a
// tape on the analytic pass and nullptr on perturbed evaluations.
// exclude_mask (optional, one byte per coordinate) skips coordinates where
// the comparison is meaningless, e.g. within eps of a sign boundary.
// precise_eval, when given, replaces the perturbed forward evaluations with
// an independent (typically 64-bit) computation of the same scalar.
inline GradCheckResult finite_diff_check(
    const std::function<Tensor(Tape*)>& loss_fn, Tensor& x, double eps,
    const std::vector<std::uint8_t>& exclude_mask = {},
    const std::function<double()>& precise_eval = nullptr) {
  check(eps >= 1e-5 && eps <= 1e-2, "finite_diff_check: eps ", eps,
        " outside [1e-5, 1e-2]");
  check(exclude_mask.empty() ||
            static_cast<std::int64_t>(exclude_mask.size()) == x.numel(),
        "finite_diff_check: mask size mismatch");
  const auto eval = [&]() -> double {
    return precise_eval ? precise_eval()
                        : static_cast<double>(loss_fn(nullptr).item());
  };
  x.ensure_grad();
  x.zero_grad();
  Tape tape;
  Tensor loss = loss_fn(&tape);
  check(std::isfinite(loss.item()), "finite_diff_check: non-finite loss");
  tape.backward(loss);
  std::vector<float> analytic(x.grad(), x.grad() + x.numel());

  GradCheckResult result;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    if (!exclude_mask.empty() && exclude_mask[static_cast<std::size_t>(i)]) {
      ++result.excluded;
      continue;
    }
    const float saved = x.at(i);
    const float xp = static_cast<float>(saved + eps);
    const float xm = static_cast<float>(saved - eps);
    x.at(i) = xp;
    const double f_plus = eval();
    x.at(i) = xm;
    const double f_minus = eval();
    x.at(i) = saved;
    check(std::isfinite(f_plus) && std::isfinite(f_minus),
          "finite_diff_check: non-finite perturbed loss at coordinate ", i);
    // Divide by the span actually applied after float rounding.
    const double numeric =
        (f_plus - f_minus) / (static_cast<double>(xp) - static_cast<double>(xm));
    const double a = analytic[static_cast<std::size_t>(i)];
    const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.evaluated;
  }
  return result;
}

}  // namespace focalcodec
