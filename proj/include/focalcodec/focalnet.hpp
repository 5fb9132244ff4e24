#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "focalcodec/tensor.hpp"

namespace focalcodec {

struct FocalModulationConfig {
  std::int64_t dim = 0;
  int focal_levels = 2;
  std::int64_t focal_window = 7;
  std::int64_t focal_factor = 2;
  float layer_scale_init = 1e-4f;
  std::int64_t mlp_ratio = 4;
  PaddingMode padding_mode = PaddingMode::kZeros;

  // 7, 13, ... for the default (window 7, factor 2) config; always odd.
  std::int64_t level_kernel(int level) const {
    std::int64_t k = focal_window - 1;
    for (int i = 1; i < level; ++i) k *= focal_factor;
    return k + 1;
  }

  void validate() const {
    check(dim >= 1, "focal config: dim must be positive");
    check(focal_levels >= 1, "focal config: need at least one focal level");
    check(focal_window >= 3 && focal_window % 2 == 1,
          "focal config: focal_window must be odd and >= 3, got ", focal_window);
    check(focal_factor >= 1, "focal config: focal_factor must be >= 1");
    for (int l = 1; l <= focal_levels; ++l)
      check(level_kernel(l) % 2 == 1, "focal config: level ", l, " kernel ",
            level_kernel(l), " is even");
    check(layer_scale_init > 0.0f, "focal config: layer_scale_init must be > 0");
    check(mlp_ratio >= 1, "focal config: mlp_ratio must be >= 1");
  }
};

// Snake activation x + sin^2(alpha x) / alpha with a learned per-channel alpha.
inline Tensor snake(const Tensor& x, const Tensor& alpha, Tape* tape = nullptr) {
  check(x.rank() == 2 && alpha.rank() == 1 && alpha.dim(0) == x.dim(1),
        "snake: expected x[T, C] with alpha[C]");
  const std::int64_t T = x.dim(0), C = x.dim(1);
  for (std::int64_t c = 0; c < C; ++c)
    check(alpha.at(c) > 0.0f, "snake: alpha must be positive, channel ", c, " is ",
          alpha.at(c));
  Tensor y = Tensor::zeros({T, C});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t c = 0; c < C; ++c) {
      const double a = alpha.at(c);
      const double v = x.at(t * C + c);
      const double s = std::sin(a * v);
      y.at(t * C + c) = static_cast<float>(v + s * s / a);
    }
  if (tape) {
    Tensor yx = x, ya = alpha, yy = y;
    yx.ensure_grad();
    ya.ensure_grad();
    yy.ensure_grad();
    tape->record([yx, ya, yy, T, C]() mutable {
      for (std::int64_t c = 0; c < C; ++c) {
        const double a = ya.at(c);
        double acc_a = 0.0;
        for (std::int64_t t = 0; t < T; ++t) {
          const double v = yx.at(t * C + c);
          const double g = yy.grad()[t * C + c];
          const double s = std::sin(a * v);
          const double s2 = std::sin(2.0 * a * v);
          yx.grad()[t * C + c] += static_cast<float>(g * (1.0 + s2));
          acc_a += g * (s2 * v / a - s * s / (a * a));
        }
        ya.grad()[c] += static_cast<float>(acc_a);
      }
    });
  }
  return y;
}

struct FocalBlockParams {
  Tensor norm1_gamma, norm1_beta;
  // One linear map emits the query, the level-0 context, and one gate logit
  // per focal level plus one for the global level.
  Tensor pre_w, pre_b;
  std::vector<Tensor> ctx_w, ctx_b;  // depthwise convs, kernel grows per level
  Tensor h_w, h_b;                   // modulation projection
  Tensor out_w, out_b;               // output projection
  Tensor layer_scale1;
  Tensor norm2_gamma, norm2_beta;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor layer_scale2;

  static FocalBlockParams init(const FocalModulationConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::int64_t C = cfg.dim;
    const std::int64_t pre_out = 2 * C + cfg.focal_levels + 1;
    const std::int64_t hidden = cfg.mlp_ratio * C;
    FocalBlockParams p;
    p.norm1_gamma = Tensor::full({C}, 1.0f);
    p.norm1_beta = Tensor::zeros({C});
    p.pre_w = init_weight({C, pre_out}, rng);
    p.pre_b = Tensor::zeros({pre_out});
    for (int l = 1; l <= cfg.focal_levels; ++l) {
      p.ctx_w.push_back(init_weight({C, 1, cfg.level_kernel(l)}, rng));
      p.ctx_b.push_back(Tensor::zeros({C}));
    }
    p.h_w = init_weight({C, C}, rng);
    p.h_b = Tensor::zeros({C});
    p.out_w = init_weight({C, C}, rng);
    p.out_b = Tensor::zeros({C});
    p.layer_scale1 = Tensor::full({C}, cfg.layer_scale_init);
    p.norm2_gamma = Tensor::full({C}, 1.0f);
    p.norm2_beta = Tensor::zeros({C});
    p.mlp_w1 = init_weight({C, hidden}, rng);
    p.mlp_b1 = Tensor::zeros({hidden});
    p.mlp_w2 = init_weight({hidden, C}, rng);
    p.mlp_b2 = Tensor::zeros({C});
    p.layer_scale2 = Tensor::full({C}, cfg.layer_scale_init);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".norm1.gamma", norm1_gamma);
    fn(prefix + ".norm1.beta", norm1_beta);
    fn(prefix + ".pre.w", pre_w);
    fn(prefix + ".pre.b", pre_b);
    for (std::size_t l = 0; l < ctx_w.size(); ++l) {
      fn(prefix + ".ctx" + std::to_string(l) + ".w", ctx_w[l]);
      fn(prefix + ".ctx" + std::to_string(l) + ".b", ctx_b[l]);
    }
    fn(prefix + ".h.w", h_w);
    fn(prefix + ".h.b", h_b);
    fn(prefix + ".out.w", out_w);
    fn(prefix + ".out.b", out_b);
    fn(prefix + ".ls1", layer_scale1);
    fn(prefix + ".norm2.gamma", norm2_gamma);
    fn(prefix + ".norm2.beta", norm2_beta);
    fn(prefix + ".mlp.w1", mlp_w1);
    fn(prefix + ".mlp.b1", mlp_b1);
    fn(prefix + ".mlp.w2", mlp_w2);
    fn(prefix + ".mlp.b2", mlp_b2);
    fn(prefix + ".ls2", layer_scale2);
  }
};

namespace detail {

// Depthwise conv along time for channel-last data: [T, C] -> [T, C].
inline Tensor depthwise_time_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                                  PaddingMode mode, Tape* tape) {
  ConvSpec spec{.kernel_size = w.dim(2),
                .stride = 1,
                .groups = x.dim(1),
                .transposed = false,
                .padding_mode = mode};
  return transpose(conv1d(transpose(x, tape), w, b, spec, tape), tape);
}

}  // namespace detail

// Focal modulation over a [T, dim] sequence: a hierarchy of gated depthwise
// contexts plus a gated global average, multiplied into a per-frame query.
// Cost is linear in T.
inline Tensor focal_modulation(const Tensor& x, const FocalBlockParams& p,
                               const FocalModulationConfig& cfg,
                               Tape* tape = nullptr) {
  cfg.validate();
  check(x.rank() == 2 && x.dim(1) == cfg.dim, "focal_modulation: expected [T, ",
        cfg.dim, "] input");
  check(x.dim(0) >= 1, "focal_modulation: empty sequence");
  const std::int64_t T = x.dim(0), C = cfg.dim;
  const int L = cfg.focal_levels;

  Tensor pre = linear(x, p.pre_w, p.pre_b, tape);
  Tensor query = slice_cols(pre, 0, C, tape);
  Tensor ctx = slice_cols(pre, C, 2 * C, tape);
  Tensor gates = slice_cols(pre, 2 * C, 2 * C + L + 1, tape);

  Tensor modulator;
  for (int l = 0; l < L; ++l) {
    ctx = gelu(detail::depthwise_time_conv(ctx, p.ctx_w[static_cast<std::size_t>(l)],
                                           p.ctx_b[static_cast<std::size_t>(l)],
                                           cfg.padding_mode, tape),
               tape);
    Tensor gated = mul_col(ctx, slice_cols(gates, l, l + 1, tape), tape);
    modulator = l == 0 ? gated : add(modulator, gated, tape);
  }
  Tensor pooled = broadcast_row(global_avg_pool(ctx, tape), T, tape);
  modulator = add(modulator, mul_col(pooled, slice_cols(gates, L, L + 1, tape), tape),
                  tape);
  Tensor mod = linear(modulator, p.h_w, p.h_b, tape);
  return linear(mul(query, mod, tape), p.out_w, p.out_b, tape);
}

// Pre-norm residual block: x + ls1 * modulation(norm(x)), then the MLP arm.
inline Tensor focal_block(const Tensor& x, const FocalBlockParams& p,
                          const FocalModulationConfig& cfg, Tape* tape = nullptr) {
  Tensor h1 = layer_norm(x, p.norm1_gamma, p.norm1_beta, tape);
  Tensor x1 =
      add(x, mul_row(focal_modulation(h1, p, cfg, tape), p.layer_scale1, tape), tape);
  Tensor h2 = layer_norm(x1, p.norm2_gamma, p.norm2_beta, tape);
  Tensor m = linear(gelu(linear(h2, p.mlp_w1, p.mlp_b1, tape), tape), p.mlp_w2,
                    p.mlp_b2, tape);
  return add(x1, mul_row(m, p.layer_scale2, tape), tape);
}

// Down/upscaling unit: projection (linear, or strided conv when the temporal
// factor is 2), Snake activation, then a focal block at the output width.
struct ScaleBlockParams {
  std::int64_t in_dim = 0;
  std::int64_t out_dim = 0;
  std::int64_t factor = 1;  // temporal factor, 1 or 2
  bool upsample = false;
  Tensor proj_w, proj_b;
  Tensor alpha;  // Snake, one per output channel
  FocalModulationConfig block_cfg;
  FocalBlockParams block;

  static constexpr std::int64_t kTemporalKernel = 4;  // 2x the stride

  static ScaleBlockParams init(std::int64_t in_dim, std::int64_t out_dim,
                               std::int64_t factor, bool upsample,
                               const FocalModulationConfig& base_cfg, Rng& rng) {
    check(factor == 1 || factor == 2, "scale block: temporal factor must be 1 or 2");
    ScaleBlockParams p;
    p.in_dim = in_dim;
    p.out_dim = out_dim;
    p.factor = factor;
    p.upsample = upsample;
    if (factor == 1)
      p.proj_w = init_weight({in_dim, out_dim}, rng);
    else if (!upsample)
      p.proj_w = init_weight({out_dim, in_dim, kTemporalKernel}, rng);
    else
      p.proj_w = init_weight({in_dim, out_dim, kTemporalKernel}, rng);
    p.proj_b = Tensor::zeros({out_dim});
    p.alpha = Tensor::full({out_dim}, 1.0f);
    p.block_cfg = base_cfg;
    p.block_cfg.dim = out_dim;
    p.block = FocalBlockParams::init(p.block_cfg, rng);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".proj.w", proj_w);
    fn(prefix + ".proj.b", proj_b);
    fn(prefix + ".alpha", alpha);
    block.visit(prefix + ".block", fn);
  }
};

inline Tensor focal_downscale(const Tensor& x, const ScaleBlockParams& p,
                              Tape* tape = nullptr) {
  check(!p.upsample, "focal_downscale: block was initialized for upsampling");
  check(x.rank() == 2 && x.dim(1) == p.in_dim, "focal_downscale: expected [T, ",
        p.in_dim, "] input");
  Tensor y;
  if (p.factor == 1) {
    y = linear(x, p.proj_w, p.proj_b, tape);
  } else {
    check(x.dim(0) % 2 == 0, "focal_downscale: length ", x.dim(0),
          " not divisible by 2; pad the sequence to an even length first");
    ConvSpec spec{.kernel_size = ScaleBlockParams::kTemporalKernel, .stride = 2};
    y = transpose(conv1d(transpose(x, tape), p.proj_w, p.proj_b, spec, tape), tape);
  }
  y = snake(y, p.alpha, tape);
  return focal_block(y, p.block, p.block_cfg, tape);
}

inline Tensor focal_upscale(const Tensor& x, const ScaleBlockParams& p,
                            Tape* tape = nullptr) {
  check(p.upsample, "focal_upscale: block was initialized for downsampling");
  check(x.rank() == 2 && x.dim(1) == p.in_dim, "focal_upscale: expected [T, ",
        p.in_dim, "] input");
  Tensor y;
  if (p.factor == 1) {
    y = linear(x, p.proj_w, p.proj_b, tape);
  } else {
    ConvSpec spec{.kernel_size = ScaleBlockParams::kTemporalKernel,
                  .stride = 2,
                  .transposed = true};
    y = transpose(conv1d(transpose(x, tape), p.proj_w, p.proj_b, spec, tape), tape);
  }
  y = snake(y, p.alpha, tape);
  return focal_block(y, p.block, p.block_cfg, tape);
}

}  // namespace focalcodec
