#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "focalcodec/codec.hpp"
#include "focalcodec/stream.hpp"
#include "focalcodec/vocoder.hpp"

using namespace focalcodec;

namespace {

std::vector<float> random_wave(std::int64_t n, Rng& rng) {
  std::vector<float> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = static_cast<float>(rng.uniform(-0.8, 0.8));
  return x;
}

Tensor random_features(std::int64_t T, std::int64_t D, Rng& rng) {
  Tensor t = Tensor::zeros({T, D});
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.at(i) = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("stft round trip reconstructs the interior") {
  Rng rng(61);
  const StftConfig cfg;
  const std::vector<float> x = random_wave(16000, rng);
  const auto spec = stft(x, cfg);
  REQUIRE(spec.frames == 50);
  REQUIRE(spec.bins == 513);
  const auto y = istft(spec, cfg);
  REQUIRE(y.size() == x.size());
  double max_err = 0.0;
  for (std::size_t i = 1024; i + 1024 < x.size(); ++i)
    max_err = std::max(max_err, std::abs(static_cast<double>(x[i]) - y[i]));
  CHECK(max_err < 1e-4);
}

TEST_CASE("pure tone lands in the right bin") {
  const StftConfig cfg;
  std::vector<float> x(16000);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>(
        std::sin(2.0 * 3.141592653589793 * 1000.0 * static_cast<double>(i) / 16000.0));
  const auto spec = stft(x, cfg);
  // 1000 Hz / (16000 / 1024) = bin 64
  const std::int64_t mid = spec.frames / 2;
  std::int64_t peak = 0;
  double best = 0.0;
  for (std::int64_t b = 0; b < spec.bins; ++b) {
    const double mag = std::abs(
        std::complex<double>(spec.at(mid, b).real(), spec.at(mid, b).imag()));
    if (mag > best) {
      best = mag;
      peak = b;
    }
  }
  CHECK(peak == 64);
}

TEST_CASE("zero signal round trips to silence") {
  const StftConfig cfg;
  std::vector<float> x(6400, 0.0f);
  const auto spec = stft(x, cfg);
  for (const auto& v : spec.data) {
    CHECK(v.real() == 0.0f);
    CHECK(v.imag() == 0.0f);
  }
  for (float v : istft(spec, cfg)) CHECK(v == 0.0f);
}

TEST_CASE("stft rejects signals shorter than a window") {
  CHECK_THROWS_AS(stft(std::vector<float>(512, 0.0f), StftConfig{}), Error);
}

TEST_CASE("log mel spectrogram") {
  VocoderConfig cfg;

  SECTION("zero signal clamps to the floor") {
    std::vector<float> x(3200, 0.0f);
    Tensor mel = log_mel(x, cfg);
    const float floor_val = std::log(1e-5f);
    for (std::int64_t i = 0; i < mel.numel(); ++i)
      CHECK_THAT(mel.at(i), Catch::Matchers::WithinAbs(floor_val, 1e-6));
  }

  SECTION("filterbank rows are nonempty with compact support") {
    Tensor fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate);
    for (std::int64_t m = 0; m < cfg.n_mels; ++m) {
      double total = 0.0;
      std::int64_t first = -1, last = -1;
      for (std::int64_t b = 0; b < fb.dim(1); ++b) {
        const float v = fb.at(m * fb.dim(1) + b);
        REQUIRE(v >= 0.0f);
        total += v;
        if (v > 0.0f) {
          if (first < 0) first = b;
          last = b;
        }
      }
      CHECK(total > 0.0);
      CHECK(last - first < fb.dim(1) / 2);  // support is a narrow band
    }
  }

  SECTION("a 10x louder signal raises every bin by at most log(100)") {
    Rng rng(62);
    std::vector<float> x = random_wave(4800, rng);
    std::vector<float> loud = x;
    for (auto& v : loud) v *= 10.0f;
    Tensor quiet_mel = log_mel(x, cfg);
    Tensor loud_mel = log_mel(loud, cfg);
    for (std::int64_t i = 0; i < quiet_mel.numel(); ++i) {
      const double diff =
          static_cast<double>(loud_mel.at(i)) - quiet_mel.at(i);
      CHECK(diff >= -1e-6);
      CHECK(diff <= std::log(100.0) + 1e-6);
    }
  }
}

TEST_CASE("synthesize emits exactly hop samples per frame") {
  Rng rng(63);
  VocoderConfig cfg = VocoderConfig{}.scaled(32, 2);
  VocoderModel m = VocoderModel::init(cfg, 5);
  for (std::int64_t T : {1, 3, 50}) {
    const auto wave = synthesize(random_features(T, cfg.feature_dim, rng), m);
    REQUIRE(static_cast<std::int64_t>(wave.size()) == T * 320);
  }
}

TEST_CASE("synthesized output is bounded by the magnitude clamp") {
  Rng rng(64);
  VocoderConfig cfg = VocoderConfig{}.scaled(32, 2);
  VocoderModel m = VocoderModel::init(cfg, 6);
  // exaggerated weights to push the head towards the clamp
  m.visit_params([&rng](const std::string&, Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t.at(i) = static_cast<float>(rng.uniform(-2.0, 2.0));
  });
  const auto wave = synthesize(random_features(50, cfg.feature_dim, rng), m);
  for (float v : wave) {
    REQUIRE(std::isfinite(v));
    REQUIRE(std::abs(v) < 100.0f);
  }
}

TEST_CASE("zero weights with a floor head bias give near silence") {
  VocoderConfig cfg = VocoderConfig{}.scaled(32, 2);
  VocoderModel m = VocoderModel::init(cfg, 7);
  m.visit_params([](const std::string&, Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = 0.0f;
  });
  const std::int64_t bins = cfg.stft().bins();
  for (std::int64_t b = 0; b < bins; ++b)
    m.head_b.at(b) = std::log(1e-5f);  // log-magnitude floor
  const auto wave = synthesize(Tensor::zeros({25, cfg.feature_dim}), m);
  double rms = 0.0;
  for (float v : wave) rms += static_cast<double>(v) * v;
  rms = std::sqrt(rms / static_cast<double>(wave.size()));
  CHECK(rms < 1e-3);
}

TEST_CASE("convnext block with zero layer scale is the identity") {
  Rng rng(65);
  ConvNeXtBlockParams p = ConvNeXtBlockParams::init(6, 18, 7, 0.0f, rng);
  Tensor x = random_features(9, 6, rng);
  Tensor y = convnext_block(x, p);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("crossfade weights") {
  // odd overlap puts a sample exactly at the midpoint
  CHECK(crossfade_in_weight(1, 3) == 0.5);
  for (std::int64_t overlap : {3, 250}) {
    for (std::int64_t i = 0; i < overlap; ++i) {
      const double w_in = crossfade_in_weight(i, overlap);
      CHECK(w_in > 0.0);
      CHECK(w_in < 1.0);
      CHECK(w_in + (1.0 - w_in) == 1.0);
    }
  }
}

TEST_CASE("stitching is associative") {
  Rng rng(66);
  const std::int64_t overlap = 5;
  std::vector<float> a = random_wave(40, rng);
  std::vector<float> b = random_wave(30, rng);
  std::vector<float> c = random_wave(35, rng);

  std::vector<float> left = a;
  crossfade_append(left, b, overlap);
  crossfade_append(left, c, overlap);

  std::vector<float> bc = b;
  crossfade_append(bc, c, overlap);
  std::vector<float> right = a;
  crossfade_append(right, bc, overlap);

  REQUIRE(left.size() == right.size());
  for (std::size_t i = 0; i < left.size(); ++i) REQUIRE(left[i] == right[i]);
}

TEST_CASE("streamed decode matches the offline length") {
  Rng rng(67);
  CodecModel codec = CodecModel::init(CodecConfig::for_variant(Variant::kFc25).scaled(128, 4), 8);
  VocoderConfig vcfg = VocoderConfig{}.scaled(128, 2);
  vcfg.feature_dim = codec.config.input_dim;
  VocoderModel vocoder = VocoderModel::init(vcfg, 9);

  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t n_tokens = 4 + rng.uniform_int(40);
    std::vector<CodeIndex> tokens;
    for (std::int64_t i = 0; i < n_tokens; ++i)
      tokens.push_back(static_cast<CodeIndex>(
          rng.uniform_int(codec.config.codebook_size())));
    const auto offline = decode_waveform(tokens, codec, vocoder);

    StreamConfig scfg;
    scfg.chunk_size = 1920;  // 3 tokens at fc25 (640 samples per token)
    scfg.left_context = 4800;
    scfg.overlap = 250;
    const auto streamed = stream_decode(tokens, codec, vocoder, scfg);
    REQUIRE(streamed.size() == offline.size());
  }
}

TEST_CASE("stream configuration is validated") {
  StreamConfig bad;
  bad.chunk_size = 100;
  bad.overlap = 250;  // chunk smaller than overlap
  CHECK_THROWS_AS(bad.validate(), Error);

  Rng rng(68);
  CodecModel codec = CodecModel::init(CodecConfig::for_variant(Variant::kFc50).scaled(128, 4), 8);
  VocoderConfig vcfg = VocoderConfig{}.scaled(128, 2);
  vcfg.feature_dim = codec.config.input_dim;
  VocoderModel vocoder = VocoderModel::init(vcfg, 9);
  std::vector<CodeIndex> tokens{1, 2, 3, 4};
  StreamConfig misaligned;
  misaligned.chunk_size = 500;  // not a multiple of 320 samples per token
  CHECK_THROWS_AS(stream_decode(tokens, codec, vocoder, misaligned), Error);
}
