#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "focalcodec/tensor.hpp"

namespace focalcodec {

// Token into the implicit codebook {-1/sqrt(L), +1/sqrt(L)}^L.
// Bit d (d = 0 least significant) is set iff dimension d is positive.
using CodeIndex = std::uint32_t;

struct BsqConfig {
  std::int64_t latent_dim = 13;
  float temperature = 0.1f;   // softness of the entropy-loss bit assignments
  float entropy_weight = 0.1f;

  std::int64_t codebook_size() const { return std::int64_t{1} << latent_dim; }

  void validate() const {
    check(latent_dim >= 1 && latent_dim <= 24, "bsq: latent_dim ", latent_dim,
          " outside [1, 24]");
    check(temperature > 0.0f, "bsq: temperature must be > 0");
    check(entropy_weight >= 0.0f, "bsq: entropy_weight must be >= 0");
  }
};

namespace detail {

// Order-independent sum: identical multisets give bitwise-identical results,
// which makes batch reductions permutation-invariant.
inline double sorted_sum(std::vector<double>& xs) {
  std::sort(xs.begin(), xs.end());
  double acc = 0.0;
  for (double v : xs) acc += v;
  return acc;
}

inline double stable_sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Bernoulli entropy in nats from the logit: softplus(z) - z * sigmoid(z).
inline double bernoulli_entropy_from_logit(double z) {
  const double sp = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return sp - z * stable_sigmoid(z);
}

inline double bernoulli_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log(p) - (1.0 - p) * std::log1p(-p);
}

}  // namespace detail

// Row-wise projection onto the unit hypersphere: u = v / ||v||_2. With
// guard_eps > 0 the norm is sqrt(sum v^2 + eps), keeping zero latents finite
// during training; at the default (strict) setting a zero row is an error.
inline Tensor project_to_sphere(const Tensor& v, Tape* tape = nullptr,
                                double guard_eps = 0.0) {
  check(v.rank() == 1 || v.rank() == 2, "project_to_sphere: expected [L] or [T, L]");
  const std::int64_t T = v.rank() == 2 ? v.dim(0) : 1;
  const std::int64_t L = v.rank() == 2 ? v.dim(1) : v.dim(0);
  Tensor u = Tensor::zeros(v.shape());
  std::vector<double> inv_norm(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    double sumsq = 0.0;
    for (std::int64_t d = 0; d < L; ++d) {
      const double x = v.at(t * L + d);
      sumsq += x * x;
    }
    if (guard_eps <= 0.0)
      check(sumsq > 0.0, "project_to_sphere: zero vector in row ", t);
    const double inv = 1.0 / std::sqrt(sumsq + guard_eps);
    inv_norm[static_cast<std::size_t>(t)] = inv;
    for (std::int64_t d = 0; d < L; ++d)
      u.at(t * L + d) = static_cast<float>(v.at(t * L + d) * inv);
  }
  if (tape) {
    Tensor yv = v, yu = u;
    yv.ensure_grad();
    yu.ensure_grad();
    tape->record([yv, yu, inv_norm, T, L]() mutable {
      for (std::int64_t t = 0; t < T; ++t) {
        const double inv = inv_norm[static_cast<std::size_t>(t)];
        double dot = 0.0;
        for (std::int64_t d = 0; d < L; ++d)
          dot += static_cast<double>(yu.grad()[t * L + d]) * yv.at(t * L + d);
        for (std::int64_t d = 0; d < L; ++d)
          yv.grad()[t * L + d] += static_cast<float>(
              yu.grad()[t * L + d] * inv - yv.at(t * L + d) * dot * inv * inv * inv);
      }
    });
  }
  return u;
}

// Per-dimension binarization to +/- 1/sqrt(L), with sign(0) mapped to +1 so
// every output lies on the hypersphere.
inline Tensor binary_quantize(const Tensor& u) {
  check(u.rank() == 1 || u.rank() == 2, "binary_quantize: expected [L] or [T, L]");
  const std::int64_t L = u.rank() == 2 ? u.dim(1) : u.dim(0);
  const float mag = static_cast<float>(1.0 / std::sqrt(static_cast<double>(L)));
  Tensor q = Tensor::zeros(u.shape());
  for (std::int64_t i = 0; i < u.numel(); ++i)
    q.at(i) = u.at(i) >= 0.0f ? mag : -mag;
  return q;
}

// Straight-through binarization: forward is binary_quantize, backward passes
// the incoming gradient through unchanged.
inline Tensor binarize_ste(const Tensor& u, Tape* tape = nullptr) {
  Tensor q = binary_quantize(u);
  if (tape) {
    Tensor yu = u, yq = q;
    yu.ensure_grad();
    yq.ensure_grad();
    tape->record([yu, yq]() mutable {
      for (std::int64_t i = 0; i < yu.numel(); ++i) yu.grad()[i] += yq.grad()[i];
    });
  }
  return q;
}

inline CodeIndex code_index(std::span<const float> code) {
  const std::int64_t L = static_cast<std::int64_t>(code.size());
  check(L >= 1 && L <= 24, "code_index: dimension ", L, " outside [1, 24]");
  const double mag = 1.0 / std::sqrt(static_cast<double>(L));
  CodeIndex idx = 0;
  for (std::int64_t d = 0; d < L; ++d) {
    check(std::abs(std::abs(static_cast<double>(code[static_cast<std::size_t>(d)])) -
                   mag) <= 1e-6,
          "code_index: component ", d, " is not +/- 1/sqrt(L)");
    if (code[static_cast<std::size_t>(d)] > 0.0f) idx |= CodeIndex{1} << d;
  }
  return idx;
}

inline void index_to_code(CodeIndex idx, std::int64_t latent_dim,
                          std::span<float> out) {
  check(latent_dim >= 1 && latent_dim <= 24, "index_to_code: bad latent_dim");
  check(static_cast<std::int64_t>(out.size()) == latent_dim,
        "index_to_code: output span size mismatch");
  check(idx < (CodeIndex{1} << latent_dim), "index_to_code: index ", idx,
        " out of range for latent_dim ", latent_dim);
  const float mag = static_cast<float>(1.0 / std::sqrt(static_cast<double>(latent_dim)));
  for (std::int64_t d = 0; d < latent_dim; ++d)
    out[static_cast<std::size_t>(d)] = (idx >> d) & 1 ? mag : -mag;
}

inline Tensor indices_to_codes(std::span<const CodeIndex> indices,
                               std::int64_t latent_dim) {
  Tensor codes = Tensor::zeros({static_cast<std::int64_t>(indices.size()), latent_dim});
  for (std::size_t t = 0; t < indices.size(); ++t)
    index_to_code(indices[t], latent_dim,
                  std::span<float>(codes.data() + static_cast<std::int64_t>(t) * latent_dim,
                                   static_cast<std::size_t>(latent_dim)));
  return codes;
}

struct BsqQuantized {
  Tensor sphere;                   // row-normalized latents u
  Tensor codes;                    // binarized codes, +/- 1/sqrt(L)
  std::vector<CodeIndex> indices;  // one token per row
};

// Quantize a [T, L] latent batch: normalize rows, binarize with the
// straight-through rule, and read off the implicit-codebook tokens.
inline BsqQuantized quantize_ste(const Tensor& v, Tape* tape = nullptr,
                                 double guard_eps = 0.0) {
  check(v.rank() == 2, "quantize_ste: expected [T, L]");
  const std::int64_t T = v.dim(0), L = v.dim(1);
  BsqQuantized out;
  out.sphere = project_to_sphere(v, tape, guard_eps);
  out.codes = binarize_ste(out.sphere, tape);
  out.indices.reserve(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t)
    out.indices.push_back(code_index(
        std::span<const float>(out.codes.data() + t * L, static_cast<std::size_t>(L))));
  return out;
}

// Factorized entropy loss over soft bit assignments
// p[n,d] = sigmoid(2 u[n,d] / (sqrt(L) tau)):
//   E_n[sum_d H(p[n,d])] - sum_d H(E_n[p[n,d]])
// in nats. The first term sharpens individual assignments, the second spreads
// the batch across the codebook. Batch reductions are order-independent, so
// the value is bitwise invariant under permutations of the rows.
inline Tensor entropy_loss(const Tensor& u_batch, const BsqConfig& cfg,
                           Tape* tape = nullptr) {
  cfg.validate();
  check(u_batch.rank() == 2, "entropy_loss: expected [N, L]");
  const std::int64_t N = u_batch.dim(0), L = u_batch.dim(1);
  check(N >= 1, "entropy_loss: empty batch");
  check(L == cfg.latent_dim, "entropy_loss: latent dim ", L, " != config ",
        cfg.latent_dim);
  const double c = 2.0 / (std::sqrt(static_cast<double>(L)) * cfg.temperature);

  std::vector<double> p(static_cast<std::size_t>(N * L));
  std::vector<double> row_entropy(static_cast<std::size_t>(N), 0.0);
  for (std::int64_t n = 0; n < N; ++n) {
    double acc = 0.0;
    for (std::int64_t d = 0; d < L; ++d) {
      const double z = c * u_batch.at(n * L + d);
      p[static_cast<std::size_t>(n * L + d)] = detail::stable_sigmoid(z);
      acc += detail::bernoulli_entropy_from_logit(z);
    }
    row_entropy[static_cast<std::size_t>(n)] = acc;
  }

  std::vector<double> mean_p(static_cast<std::size_t>(L));
  for (std::int64_t d = 0; d < L; ++d) {
    std::vector<double> column(static_cast<std::size_t>(N));
    for (std::int64_t n = 0; n < N; ++n)
      column[static_cast<std::size_t>(n)] = p[static_cast<std::size_t>(n * L + d)];
    mean_p[static_cast<std::size_t>(d)] =
        detail::sorted_sum(column) / static_cast<double>(N);
  }

  const double term1 = detail::sorted_sum(row_entropy) / static_cast<double>(N);
  double term2 = 0.0;
  for (std::int64_t d = 0; d < L; ++d)
    term2 += detail::bernoulli_entropy(mean_p[static_cast<std::size_t>(d)]);
  Tensor loss = Tensor::scalar(static_cast<float>(term1 - term2));

  if (tape) {
    Tensor yu = u_batch, yl = loss;
    yu.ensure_grad();
    yl.ensure_grad();
    tape->record([yu, yl, p, mean_p, c, N, L]() mutable {
      const double g = yl.grad()[0];
      for (std::int64_t d = 0; d < L; ++d) {
        const double pb =
            std::clamp(mean_p[static_cast<std::size_t>(d)], 1e-12, 1.0 - 1e-12);
        const double mean_logit = std::log(pb) - std::log1p(-pb);
        for (std::int64_t n = 0; n < N; ++n) {
          const double pnd = p[static_cast<std::size_t>(n * L + d)];
          const double z = c * yu.at(n * L + d);
          // d(term1 - term2)/du = (c/N) p(1-p) (mean_logit - z)
          yu.grad()[n * L + d] += static_cast<float>(
              g * (c / static_cast<double>(N)) * pnd * (1.0 - pnd) *
              (mean_logit - z));
        }
      }
    });
  }
  return loss;
}

struct CodebookStats {
  double code_usage = 0.0;
  double normalized_entropy = 0.0;
};

// code_usage: fraction of the codebook emitted at least once.
// normalized_entropy: empirical token entropy / log(codebook size).
inline CodebookStats codebook_stats(std::span<const CodeIndex> indices,
                                    std::int64_t codebook_size) {
  check(!indices.empty(), "codebook_stats: empty index list");
  check(codebook_size >= 2, "codebook_stats: codebook size must be >= 2");
  std::unordered_map<CodeIndex, std::int64_t> counts;
  for (CodeIndex idx : indices) {
    check(static_cast<std::int64_t>(idx) < codebook_size, "codebook_stats: token ",
          idx, " out of range for codebook of ", codebook_size);
    ++counts[idx];
  }
  const double total = static_cast<double>(indices.size());
  double entropy = 0.0;
  for (const auto& [_, count] : counts) {
    const double q = static_cast<double>(count) / total;
    entropy -= q * std::log(q);
  }
  CodebookStats stats;
  stats.code_usage =
      static_cast<double>(counts.size()) / static_cast<double>(codebook_size);
  stats.normalized_entropy =
      std::clamp(entropy / std::log(static_cast<double>(codebook_size)), 0.0, 1.0);
  return stats;
}

}  // namespace focalcodec
