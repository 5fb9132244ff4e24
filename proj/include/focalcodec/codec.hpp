#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "focalcodec/bsq.hpp"
#include "focalcodec/focalnet.hpp"

namespace focalcodec {

enum class Variant : std::uint8_t { kFc50 = 0, kFc25 = 1, kFc12_5 = 2 };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFc50: return "fc50";
    case Variant::kFc25: return "fc25";
    case Variant::kFc12_5: return "fc12_5";
  }
  fail("unknown variant id ", static_cast<int>(v));
}

inline Variant variant_from_name(const std::string& name) {
  if (name == "fc50") return Variant::kFc50;
  if (name == "fc25") return Variant::kFc25;
  if (name == "fc12_5") return Variant::kFc12_5;
  fail("unknown variant '", name, "' (expected fc50, fc25 or fc12_5)");
}

struct CodecConfig {
  Variant variant = Variant::kFc50;
  std::int64_t input_dim = 1024;
  std::array<std::int64_t, 3> hidden_dims{1024, 512, 256};
  std::int64_t latent_dim = 13;
  std::array<std::int64_t, 3> downsample_factors{1, 1, 1};
  double feature_rate_hz = 50.0;
  std::int64_t sample_rate = 16000;

  std::int64_t total_downsample() const {
    return downsample_factors[0] * downsample_factors[1] * downsample_factors[2];
  }
  double token_rate_hz() const {
    return feature_rate_hz / static_cast<double>(total_downsample());
  }
  std::int64_t codebook_size() const { return std::int64_t{1} << latent_dim; }

  static CodecConfig for_variant(Variant v) {
    CodecConfig cfg;
    cfg.variant = v;
    switch (v) {
      case Variant::kFc50: cfg.downsample_factors = {1, 1, 1}; break;
      case Variant::kFc25: cfg.downsample_factors = {2, 1, 1}; break;
      case Variant::kFc12_5: cfg.downsample_factors = {2, 2, 1}; break;
    }
    return cfg;
  }

  // Desk-scale knob: same topology at a fraction of the width.
  CodecConfig scaled(std::int64_t width_divisor, std::int64_t latent) const {
    check(width_divisor >= 1, "config: width divisor must be >= 1");
    CodecConfig cfg = *this;
    cfg.input_dim = std::max<std::int64_t>(1, input_dim / width_divisor);
    for (auto& d : cfg.hidden_dims) d = std::max<std::int64_t>(1, d / width_divisor);
    cfg.latent_dim = latent;
    return cfg;
  }

  void validate() const {
    check(input_dim >= 1, "config: input_dim must be positive");
    for (auto d : hidden_dims) check(d >= 1, "config: hidden dims must be positive");
    check(latent_dim >= 1 && latent_dim <= 24, "config: latent_dim ", latent_dim,
          " outside [1, 24]");
    for (auto f : downsample_factors)
      check(f == 1 || f == 2, "config: downsample factors must be 1 or 2, got ", f);
    check(feature_rate_hz > 0.0, "config: feature rate must be positive");
  }
};

inline double bitrate_bps(const CodecConfig& cfg) {
  // token rate x log2(codebook size); the codebook size is 2^latent_dim
  return cfg.token_rate_hz() * static_cast<double>(cfg.latent_dim);
}

// Number of tokens emitted for T input frames.
inline std::int64_t encoded_length(std::int64_t frames, const CodecConfig& cfg) {
  const std::int64_t f = cfg.total_downsample();
  return (frames + f - 1) / f;
}

struct CodecModel {
  CodecConfig config;
  BsqConfig quantizer;
  std::array<ScaleBlockParams, 3> compressor;
  Tensor comp_out_w, comp_out_b;  // hidden_dims[2] -> latent_dim
  Tensor decomp_in_w, decomp_in_b;
  std::array<ScaleBlockParams, 3> decompressor;
  Tensor decomp_out_w, decomp_out_b;  // input_dim -> input_dim

  static CodecModel init(const CodecConfig& cfg, std::uint64_t seed,
                         const FocalModulationConfig& focal_base = {}) {
    cfg.validate();
    Rng rng(seed);
    CodecModel m;
    m.config = cfg;
    m.quantizer.latent_dim = cfg.latent_dim;
    for (int i = 0; i < 3; ++i) {
      const std::int64_t in = i == 0 ? cfg.input_dim : cfg.hidden_dims[i - 1];
      m.compressor[static_cast<std::size_t>(i)] = ScaleBlockParams::init(
          in, cfg.hidden_dims[static_cast<std::size_t>(i)],
          cfg.downsample_factors[static_cast<std::size_t>(i)], false, focal_base, rng);
    }
    m.comp_out_w = init_weight({cfg.hidden_dims[2], cfg.latent_dim}, rng);
    m.comp_out_b = Tensor::zeros({cfg.latent_dim});
    m.decomp_in_w = init_weight({cfg.latent_dim, cfg.hidden_dims[2]}, rng);
    m.decomp_in_b = Tensor::zeros({cfg.hidden_dims[2]});
    // the decompressor mirrors the compressor stack in reverse
    for (int j = 0; j < 3; ++j) {
      const int i = 2 - j;
      const std::int64_t in = cfg.hidden_dims[static_cast<std::size_t>(i)];
      const std::int64_t out = i == 0 ? cfg.input_dim : cfg.hidden_dims[i - 1];
      m.decompressor[static_cast<std::size_t>(j)] = ScaleBlockParams::init(
          in, out, cfg.downsample_factors[static_cast<std::size_t>(i)], true,
          focal_base, rng);
    }
    m.decomp_out_w = init_weight({cfg.input_dim, cfg.input_dim}, rng);
    m.decomp_out_b = Tensor::zeros({cfg.input_dim});
    return m;
  }

  void visit_params(const ParamVisitor& fn) {
    for (std::size_t i = 0; i < 3; ++i)
      compressor[i].visit("compressor." + std::to_string(i), fn);
    fn("compressor.out.w", comp_out_w);
    fn("compressor.out.b", comp_out_b);
    fn("decompressor.in.w", decomp_in_w);
    fn("decompressor.in.b", decomp_in_b);
    for (std::size_t j = 0; j < 3; ++j)
      decompressor[j].visit("decompressor." + std::to_string(j), fn);
    fn("decompressor.out.w", decomp_out_w);
    fn("decompressor.out.b", decomp_out_b);
  }
};

// Right-pads the time axis to a multiple of `multiple` by repeating the
// last frame.
inline Tensor pad_edge_rows(const Tensor& x, std::int64_t multiple) {
  const std::int64_t T = x.dim(0), C = x.dim(1);
  const std::int64_t target = (T + multiple - 1) / multiple * multiple;
  if (target == T) return x;
  Tensor y = Tensor::zeros({target, C});
  std::copy_n(x.data(), T * C, y.data());
  for (std::int64_t t = T; t < target; ++t)
    std::copy_n(x.data() + (T - 1) * C, C, y.data() + t * C);
  return y;
}

// Compressor stack on pre-padded features: [T_pad, input_dim] -> latents.
inline Tensor run_compressor(const Tensor& features, const CodecModel& model,
                             Tape* tape = nullptr) {
  Tensor x = features;
  for (const auto& block : model.compressor) x = focal_downscale(x, block, tape);
  return linear(x, model.comp_out_w, model.comp_out_b, tape);
}

// Quantized codes [T', latent] -> features at the 50 Hz frame rate.
inline Tensor run_decompressor(const Tensor& codes, const CodecModel& model,
                               Tape* tape = nullptr) {
  Tensor x = linear(codes, model.decomp_in_w, model.decomp_in_b, tape);
  for (const auto& block : model.decompressor) x = focal_upscale(x, block, tape);
  return linear(x, model.decomp_out_w, model.decomp_out_b, tape);
}

inline std::vector<CodeIndex> encode(const Tensor& features, const CodecModel& model) {
  check(features.rank() == 2 && features.dim(1) == model.config.input_dim,
        "encode: expected [T, ", model.config.input_dim, "] features");
  check(features.dim(0) >= 1, "encode: empty feature sequence");
  check(features.all_finite(), "encode: features contain non-finite values");
  Tensor padded = pad_edge_rows(features, model.config.total_downsample());
  Tensor latents = run_compressor(padded, model);
  return quantize_ste(latents).indices;
}

inline Tensor decode_features(std::span<const CodeIndex> tokens,
                              const CodecModel& model) {
  const std::int64_t K = model.config.codebook_size();
  for (std::size_t i = 0; i < tokens.size(); ++i)
    check(static_cast<std::int64_t>(tokens[i]) < K, "decode: token at position ", i,
          " is ", tokens[i], ", out of range for codebook of ", K);
  check(!tokens.empty(), "decode: empty token stream");
  Tensor codes = indices_to_codes(tokens, model.config.latent_dim);
  return run_decompressor(codes, model);
}

// Replaces each frame with the mean of its k nearest reference frames by
// cosine similarity; ties broken toward the lower reference index.
inline Tensor knn_convert(const Tensor& source, const Tensor& reference,
                          std::int64_t k = 4) {
  check(source.rank() == 2 && reference.rank() == 2 &&
            source.dim(1) == reference.dim(1),
        "knn_convert: feature dims do not match");
  const std::int64_t T = source.dim(0), R = reference.dim(0), D = source.dim(1);
  check(k >= 1, "knn_convert: k must be >= 1");
  check(R >= k, "knn_convert: reference pool of ", R, " frames is smaller than k=", k);

  const auto unit_rows = [D](const Tensor& x, const char* what) {
    const std::int64_t n = x.dim(0);
    std::vector<double> out(static_cast<std::size_t>(n * D));
    for (std::int64_t t = 0; t < n; ++t) {
      double sumsq = 0.0;
      for (std::int64_t d = 0; d < D; ++d) {
        const double v = x.at(t * D + d);
        sumsq += v * v;
      }
      check(sumsq > 0.0, "knn_convert: zero-norm ", what, " frame ", t);
      const double inv = 1.0 / std::sqrt(sumsq);
      for (std::int64_t d = 0; d < D; ++d)
        out[static_cast<std::size_t>(t * D + d)] = x.at(t * D + d) * inv;
    }
    return out;
  };
  const std::vector<double> src_unit = unit_rows(source, "source");
  const std::vector<double> ref_unit = unit_rows(reference, "reference");

  Tensor out = Tensor::zeros({T, D});
  parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
    std::vector<std::pair<double, std::int64_t>> best;
    for (std::int64_t t = lo; t < hi; ++t) {
      best.clear();
      for (std::int64_t r = 0; r < R; ++r) {
        double sim = 0.0;
        for (std::int64_t d = 0; d < D; ++d)
          sim += src_unit[static_cast<std::size_t>(t * D + d)] *
                 ref_unit[static_cast<std::size_t>(r * D + d)];
        const std::pair<double, std::int64_t> cand{sim, r};
        // keep the k best by (similarity desc, index asc)
        const auto better = [](const auto& a, const auto& b) {
          return a.first > b.first || (a.first == b.first && a.second < b.second);
        };
        if (static_cast<std::int64_t>(best.size()) < k) {
          best.push_back(cand);
          std::sort(best.begin(), best.end(), better);
        } else if (better(cand, best.back())) {
          best.back() = cand;
          std::sort(best.begin(), best.end(), better);
        }
      }
      for (std::int64_t d = 0; d < D; ++d) {
        double acc = 0.0;
        for (const auto& match : best) acc += reference.at(match.second * D + d);
        out.at(t * D + d) = static_cast<float>(acc / static_cast<double>(k));
      }
    }
  });
  return out;
}

}  // namespace focalcodec
