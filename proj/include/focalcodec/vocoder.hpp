#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "focalcodec/tensor.hpp"

namespace focalcodec {

struct StftConfig {
  std::int64_t n_fft = 1024;
  std::int64_t hop = 320;

  std::int64_t bins() const { return n_fft / 2 + 1; }
  std::int64_t pad() const { return (n_fft - hop) / 2; }

  void validate() const {
    check(n_fft >= 2 && (n_fft & (n_fft - 1)) == 0, "stft: n_fft ", n_fft,
          " must be a power of two");
    check(hop >= 1 && hop <= n_fft, "stft: hop ", hop, " outside [1, n_fft]");
    check((n_fft - hop) % 2 == 0, "stft: n_fft - hop must be even");
  }
};

struct VocoderConfig {
  std::int64_t n_blocks = 8;
  std::int64_t hidden = 512;
  std::int64_t ffn = 1536;
  std::int64_t kernel = 7;
  std::int64_t n_fft = 1024;
  std::int64_t hop = 320;
  std::int64_t sample_rate = 16000;
  std::int64_t n_mels = 80;
  std::int64_t feature_dim = 1024;
  float layer_scale_init = 1e-6f;
  float log_mag_clamp = 2.0f;  // magnitudes capped at exp(2)

  StftConfig stft() const { return {n_fft, hop}; }

  void validate() const {
    stft().validate();
    check(hop * 50 == sample_rate, "vocoder: hop ", hop, " x 50 != sample rate ",
          sample_rate);
    check(n_blocks >= 1 && hidden >= 1 && ffn >= 1 && feature_dim >= 1,
          "vocoder: dimensions must be positive");
    check(kernel >= 1 && kernel % 2 == 1, "vocoder: kernel must be odd");
    check(n_mels >= 1, "vocoder: n_mels must be positive");
  }

  VocoderConfig scaled(std::int64_t width_divisor,
                       std::int64_t blocks = 8) const {
    VocoderConfig cfg = *this;
    cfg.hidden = std::max<std::int64_t>(1, hidden / width_divisor);
    cfg.ffn = std::max<std::int64_t>(1, ffn / width_divisor);
    cfg.feature_dim = std::max<std::int64_t>(1, feature_dim / width_divisor);
    cfg.n_blocks = blocks;
    return cfg;
  }
};

namespace detail {

inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * 3.141592653589793 /
                       static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse)
    for (auto& v : a) v /= static_cast<double>(n);
}

// Periodic Hann window.
inline std::vector<double> hann_window(std::int64_t n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * 3.141592653589793 * static_cast<double>(i) /
                             static_cast<double>(n));
  return w;
}

// Reflect-padded sample access.
inline double reflect_at(std::span<const float> x, std::int64_t i) {
  const std::int64_t n = static_cast<std::int64_t>(x.size());
  if (i < 0) i = -i;
  if (i >= n) i = 2 * (n - 1) - i;
  return x[static_cast<std::size_t>(i)];
}

}  // namespace detail

struct ComplexSpectrogram {
  std::int64_t frames = 0;
  std::int64_t bins = 0;
  std::vector<std::complex<float>> data;  // row-major [frames, bins]

  std::complex<float>& at(std::int64_t f, std::int64_t b) {
    return data[static_cast<std::size_t>(f * bins + b)];
  }
  std::complex<float> at(std::int64_t f, std::int64_t b) const {
    return data[static_cast<std::size_t>(f * bins + b)];
  }
};

// Centered STFT with reflect padding of (n_fft - hop) / 2 on both sides, so a
// signal of N samples (N a multiple of hop) yields exactly N / hop frames.
inline ComplexSpectrogram stft(std::span<const float> wave, const StftConfig& cfg) {
  cfg.validate();
  const std::int64_t n = static_cast<std::int64_t>(wave.size());
  check(n >= cfg.n_fft, "stft: signal of ", n, " samples shorter than n_fft ",
        cfg.n_fft);
  const std::int64_t pad = cfg.pad();
  const std::int64_t frames = (n + 2 * pad - cfg.n_fft) / cfg.hop + 1;
  const std::vector<double> window = detail::hann_window(cfg.n_fft);

  ComplexSpectrogram spec;
  spec.frames = frames;
  spec.bins = cfg.bins();
  spec.data.resize(static_cast<std::size_t>(frames * spec.bins));
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.n_fft));
  for (std::int64_t f = 0; f < frames; ++f) {
    const std::int64_t start = f * cfg.hop - pad;
    for (std::int64_t i = 0; i < cfg.n_fft; ++i)
      buf[static_cast<std::size_t>(i)] = {
          detail::reflect_at(wave, start + i) * window[static_cast<std::size_t>(i)],
          0.0};
    detail::fft_inplace(buf, false);
    for (std::int64_t b = 0; b < spec.bins; ++b)
      spec.at(f, b) = {static_cast<float>(buf[static_cast<std::size_t>(b)].real()),
                       static_cast<float>(buf[static_cast<std::size_t>(b)].imag())};
  }
  return spec;
}

// Overlap-add inverse with squared-window-sum normalization, cropped so the
// output is exactly frames x hop samples. Normalized OLA reconstructs the
// input for any hop, which a plain Hann OLA at hop 320 / window 1024 does not.
inline std::vector<float> istft(const ComplexSpectrogram& spec, const StftConfig& cfg) {
  cfg.validate();
  check(spec.bins == cfg.bins(), "istft: spectrogram has ", spec.bins,
        " bins, config expects ", cfg.bins());
  check(spec.frames >= 1, "istft: empty spectrogram");
  const std::int64_t pad = cfg.pad();
  const std::int64_t full = (spec.frames - 1) * cfg.hop + cfg.n_fft;
  const std::vector<double> window = detail::hann_window(cfg.n_fft);

  std::vector<double> acc(static_cast<std::size_t>(full), 0.0);
  std::vector<double> wsum(static_cast<std::size_t>(full), 0.0);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.n_fft));
  for (std::int64_t f = 0; f < spec.frames; ++f) {
    for (std::int64_t b = 0; b < spec.bins; ++b) {
      const std::complex<float> v = spec.at(f, b);
      buf[static_cast<std::size_t>(b)] = {v.real(), v.imag()};
    }
    for (std::int64_t b = spec.bins; b < cfg.n_fft; ++b)
      buf[static_cast<std::size_t>(b)] =
          std::conj(buf[static_cast<std::size_t>(cfg.n_fft - b)]);
    detail::fft_inplace(buf, true);
    const std::int64_t start = f * cfg.hop;
    for (std::int64_t i = 0; i < cfg.n_fft; ++i) {
      const double w = window[static_cast<std::size_t>(i)];
      acc[static_cast<std::size_t>(start + i)] +=
          buf[static_cast<std::size_t>(i)].real() * w;
      wsum[static_cast<std::size_t>(start + i)] += w * w;
    }
  }
  std::vector<float> out(static_cast<std::size_t>(spec.frames * cfg.hop));
  for (std::int64_t i = 0; i < spec.frames * cfg.hop; ++i) {
    const double den = wsum[static_cast<std::size_t>(i + pad)];
    out[static_cast<std::size_t>(i)] = static_cast<float>(
        den > 1e-12 ? acc[static_cast<std::size_t>(i + pad)] / den : 0.0);
  }
  return out;
}

// Triangular filters on the HTK mel scale, spanning 0 to Nyquist. Rows are
// not area-normalized.
inline Tensor mel_filterbank(std::int64_t n_mels, std::int64_t n_fft,
                             std::int64_t sample_rate) {
  const std::int64_t bins = n_fft / 2 + 1;
  const auto hz_to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  const auto mel_to_hz = [](double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
  };
  const double mel_max = hz_to_mel(static_cast<double>(sample_rate) / 2.0);
  std::vector<double> centers(static_cast<std::size_t>(n_mels + 2));
  for (std::int64_t m = 0; m < n_mels + 2; ++m)
    centers[static_cast<std::size_t>(m)] =
        mel_to_hz(mel_max * static_cast<double>(m) / static_cast<double>(n_mels + 1));

  Tensor fb = Tensor::zeros({n_mels, bins});
  for (std::int64_t m = 0; m < n_mels; ++m) {
    const double lo = centers[static_cast<std::size_t>(m)];
    const double mid = centers[static_cast<std::size_t>(m + 1)];
    const double hi = centers[static_cast<std::size_t>(m + 2)];
    for (std::int64_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * static_cast<double>(sample_rate) /
                       static_cast<double>(n_fft);
      double w = 0.0;
      if (f >= lo && f <= mid && mid > lo) w = (f - lo) / (mid - lo);
      else if (f > mid && f <= hi && hi > mid) w = (hi - f) / (hi - mid);
      fb.at(m * bins + b) = static_cast<float>(std::max(0.0, w));
    }
  }
  return fb;
}

// Log-Mel spectrogram of a waveform: mel-weighted magnitudes with a floor
// clamp at 1e-5 before the log.
inline Tensor log_mel(std::span<const float> wave, const VocoderConfig& cfg) {
  cfg.validate();
  const ComplexSpectrogram spec = stft(wave, cfg.stft());
  const Tensor fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate);
  Tensor out = Tensor::zeros({spec.frames, cfg.n_mels});
  for (std::int64_t f = 0; f < spec.frames; ++f)
    for (std::int64_t m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      for (std::int64_t b = 0; b < spec.bins; ++b)
        acc += static_cast<double>(fb.at(m * spec.bins + b)) *
               std::abs(std::complex<double>(spec.at(f, b).real(), spec.at(f, b).imag()));
      out.at(f * cfg.n_mels + m) = static_cast<float>(std::log(std::max(acc, 1e-5)));
    }
  return out;
}

struct ConvNeXtBlockParams {
  Tensor dw_w, dw_b;  // depthwise conv over time, [C, 1, kernel]
  Tensor norm_gamma, norm_beta;
  Tensor pw1_w, pw1_b;  // C -> ffn
  Tensor pw2_w, pw2_b;  // ffn -> C
  Tensor layer_scale;

  static ConvNeXtBlockParams init(std::int64_t dim, std::int64_t ffn,
                                  std::int64_t kernel, float ls_init, Rng& rng) {
    ConvNeXtBlockParams p;
    p.dw_w = init_weight({dim, 1, kernel}, rng);
    p.dw_b = Tensor::zeros({dim});
    p.norm_gamma = Tensor::full({dim}, 1.0f);
    p.norm_beta = Tensor::zeros({dim});
    p.pw1_w = init_weight({dim, ffn}, rng);
    p.pw1_b = Tensor::zeros({ffn});
    p.pw2_w = init_weight({ffn, dim}, rng);
    p.pw2_b = Tensor::zeros({dim});
    p.layer_scale = Tensor::full({dim}, ls_init);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".dw.w", dw_w);
    fn(prefix + ".dw.b", dw_b);
    fn(prefix + ".norm.gamma", norm_gamma);
    fn(prefix + ".norm.beta", norm_beta);
    fn(prefix + ".pw1.w", pw1_w);
    fn(prefix + ".pw1.b", pw1_b);
    fn(prefix + ".pw2.w", pw2_w);
    fn(prefix + ".pw2.b", pw2_b);
    fn(prefix + ".ls", layer_scale);
  }
};

inline Tensor convnext_block(const Tensor& x, const ConvNeXtBlockParams& p,
                             Tape* tape = nullptr) {
  ConvSpec spec{.kernel_size = p.dw_w.dim(2), .stride = 1, .groups = x.dim(1)};
  Tensor d = transpose(conv1d(transpose(x, tape), p.dw_w, p.dw_b, spec, tape), tape);
  d = layer_norm(d, p.norm_gamma, p.norm_beta, tape);
  d = linear(gelu(linear(d, p.pw1_w, p.pw1_b, tape), tape), p.pw2_w, p.pw2_b, tape);
  return add(x, mul_row(d, p.layer_scale, tape), tape);
}

struct VocoderModel {
  VocoderConfig config;
  Tensor in_w, in_b;  // feature_dim -> hidden
  std::vector<ConvNeXtBlockParams> blocks;
  Tensor final_gamma, final_beta;
  Tensor head_w, head_b;  // hidden -> 2 * bins (log-magnitudes, phases)

  static VocoderModel init(const VocoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    VocoderModel m;
    m.config = cfg;
    m.in_w = init_weight({cfg.feature_dim, cfg.hidden}, rng);
    m.in_b = Tensor::zeros({cfg.hidden});
    for (std::int64_t i = 0; i < cfg.n_blocks; ++i)
      m.blocks.push_back(ConvNeXtBlockParams::init(cfg.hidden, cfg.ffn, cfg.kernel,
                                                   cfg.layer_scale_init, rng));
    m.final_gamma = Tensor::full({cfg.hidden}, 1.0f);
    m.final_beta = Tensor::zeros({cfg.hidden});
    const std::int64_t bins = cfg.stft().bins();
    m.head_w = init_weight({cfg.hidden, 2 * bins}, rng);
    m.head_b = Tensor::zeros({2 * bins});
    return m;
  }

  void visit_params(const ParamVisitor& fn) {
    fn("vocoder.in.w", in_w);
    fn("vocoder.in.b", in_b);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].visit("vocoder.block." + std::to_string(i), fn);
    fn("vocoder.final.gamma", final_gamma);
    fn("vocoder.final.beta", final_beta);
    fn("vocoder.head.w", head_w);
    fn("vocoder.head.b", head_b);
  }
};

// Features at 50 Hz -> waveform, exactly hop samples per frame. The head
// predicts log-magnitudes (clamped above) and phase angles per bin; the
// waveform comes out of the normalized-OLA inverse STFT.
inline std::vector<float> synthesize(const Tensor& features, const VocoderModel& m) {
  const VocoderConfig& cfg = m.config;
  check(features.rank() == 2 && features.dim(1) == cfg.feature_dim,
        "synthesize: expected [T, ", cfg.feature_dim, "] features");
  check(features.dim(0) >= 1, "synthesize: empty feature sequence");
  Tensor x = linear(features, m.in_w, m.in_b);
  for (const auto& block : m.blocks) x = convnext_block(x, block);
  x = layer_norm(x, m.final_gamma, m.final_beta);
  Tensor head = linear(x, m.head_w, m.head_b);

  const std::int64_t T = features.dim(0);
  const std::int64_t bins = cfg.stft().bins();
  ComplexSpectrogram spec;
  spec.frames = T;
  spec.bins = bins;
  spec.data.resize(static_cast<std::size_t>(T * bins));
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t b = 0; b < bins; ++b) {
      const double log_mag =
          std::min(static_cast<double>(head.at(t * 2 * bins + b)),
                   static_cast<double>(cfg.log_mag_clamp));
      const double mag = std::exp(log_mag);
      const double phase = head.at(t * 2 * bins + bins + b);
      spec.at(t, b) = {static_cast<float>(mag * std::cos(phase)),
                       static_cast<float>(mag * std::sin(phase))};
    }
  return istft(spec, cfg.stft());
}

}  // namespace focalcodec
