#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "focalcodec/codec.hpp"
#include "focalcodec/vocoder.hpp"

// File formats (all multi-byte integers little-endian; see docs/FORMATS.md):
//   FCF1  feature file:   magic, u32 frames, u32 dim, f32 payload
//   FCT1  token stream:   magic, u8 version, u8 variant, u16 latent_dim,
//                         u32 sample_rate, u32 count, bit-packed payload
//   FCCK  checkpoint:     magic, u8 version, u32 meta_len, JSON meta,
//                         u32 tensor count, { u16 name_len, name, u8 rank,
//                         u32 dims[], f32 data[] }
//   WAV   RIFF PCM16 mono at 16 kHz only.
namespace focalcodec {

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xff));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v & 0xffff));
    u16(static_cast<std::uint16_t>(v >> 16));
  }
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (static_cast<std::uint16_t>(u8()) << 8));
  }
  std::uint32_t u32() {
    const std::uint32_t lo = u16();
    return lo | (static_cast<std::uint32_t>(u16()) << 16);
  }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::vector<std::uint8_t> raw(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  std::string str(std::size_t n) {
    const auto v = raw(n);
    return {v.begin(), v.end()};
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n) const {
    check(pos_ + n <= bytes_.size(), source_, ": truncated, need ", n,
          " more bytes at offset ", pos_, " of ", bytes_.size());
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string source_;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open '", path, "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "cannot open '", path, "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  check(out.good(), "short write to '", path, "'");
}

}  // namespace detail

// ---- token bit packing ---------------------------------------------------

// Tokens are packed MSB-first, latent_dim bits each, concatenated without
// gaps and zero-padded to a byte boundary.
inline std::vector<std::uint8_t> pack_tokens(std::span<const CodeIndex> tokens,
                                             std::int64_t latent_dim) {
  check(latent_dim >= 1 && latent_dim <= 24, "pack_tokens: bad latent_dim");
  std::vector<std::uint8_t> out((tokens.size() * static_cast<std::size_t>(latent_dim) + 7) / 8,
                                0);
  std::size_t bit = 0;
  for (CodeIndex token : tokens) {
    check(token < (CodeIndex{1} << latent_dim), "pack_tokens: token ", token,
          " exceeds ", latent_dim, " bits");
    for (std::int64_t b = latent_dim - 1; b >= 0; --b, ++bit)
      if ((token >> b) & 1) out[bit / 8] |= static_cast<std::uint8_t>(0x80 >> (bit % 8));
  }
  return out;
}

inline std::vector<CodeIndex> unpack_tokens(std::span<const std::uint8_t> bytes,
                                            std::int64_t count,
                                            std::int64_t latent_dim) {
  check(latent_dim >= 1 && latent_dim <= 24, "unpack_tokens: bad latent_dim");
  check(count >= 0, "unpack_tokens: negative count");
  const std::size_t expected =
      (static_cast<std::size_t>(count * latent_dim) + 7) / 8;
  check(bytes.size() == expected, "unpack_tokens: payload of ", bytes.size(),
        " bytes, expected ", expected, " for ", count, " tokens of ", latent_dim,
        " bits");
  std::vector<CodeIndex> tokens(static_cast<std::size_t>(count), 0);
  std::size_t bit = 0;
  for (auto& token : tokens)
    for (std::int64_t b = 0; b < latent_dim; ++b, ++bit) {
      token <<= 1;
      if (bytes[bit / 8] & (0x80 >> (bit % 8))) token |= 1;
    }
  return tokens;
}

// ---- WAV (RIFF PCM16 mono 16 kHz) -----------------------------------------

inline void write_wav(const std::string& path, std::span<const float> samples,
                      std::uint32_t sample_rate = 16000) {
  detail::ByteWriter w;
  const std::uint32_t data_size = static_cast<std::uint32_t>(samples.size() * 2);
  w.raw("RIFF", 4);
  w.u32(36 + data_size);
  w.raw("WAVE", 4);
  w.raw("fmt ", 4);
  w.u32(16);
  w.u16(1);  // PCM
  w.u16(1);  // mono
  w.u32(sample_rate);
  w.u32(sample_rate * 2);
  w.u16(2);   // block align
  w.u16(16);  // bits per sample
  w.raw("data", 4);
  w.u32(data_size);
  for (float s : samples) {
    long v = std::lround(static_cast<double>(s) * 32768.0);
    v = std::min<long>(32767, std::max<long>(-32768, v));
    w.i16(static_cast<std::int16_t>(v));
  }
  detail::write_file(path, w.bytes());
}

struct WavData {
  std::vector<float> samples;
  std::uint32_t sample_rate = 0;
};

inline WavData read_wav(const std::string& path, std::uint32_t required_rate = 16000) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes, "wav '" + path + "'");
  check(r.str(4) == "RIFF", "wav '", path, "': not a RIFF file");
  r.u32();  // declared size; data chunk is authoritative
  check(r.str(4) == "WAVE", "wav '", path, "': not a WAVE file");

  WavData wav;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::string id = r.str(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      check(size >= 16, "wav '", path, "': fmt chunk too small");
      const std::uint16_t format = r.u16();
      const std::uint16_t channels = r.u16();
      const std::uint32_t rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      const std::uint16_t bits = r.u16();
      check(format == 1, "wav '", path, "': unsupported codec ", format,
            " (PCM required)");
      check(channels == 1, "wav '", path, "': unsupported channel count ", channels,
            " (mono required)");
      check(rate == required_rate, "wav '", path, "': unsupported sample rate ", rate,
            " (", required_rate, " required, no resampling built in)");
      check(bits == 16, "wav '", path, "': unsupported bit depth ", bits,
            " (16 required)");
      wav.sample_rate = rate;
      if (size > 16) r.skip(size - 16);
      have_fmt = true;
    } else if (id == "data") {
      check(have_fmt, "wav '", path, "': data chunk before fmt chunk");
      check(size % 2 == 0, "wav '", path, "': odd data chunk size");
      wav.samples.reserve(size / 2);
      for (std::uint32_t i = 0; i < size / 2; ++i)
        wav.samples.push_back(static_cast<float>(r.i16()) / 32768.0f);
      return wav;
    } else {
      r.skip(size + (size % 2));  // chunks are word-aligned
    }
  }
  fail("wav '", path, "': missing ", have_fmt ? "data" : "fmt", " chunk");
}

// ---- FCF1 feature files ----------------------------------------------------

inline void write_feature_file(const std::string& path, const Tensor& features) {
  check(features.rank() == 2, "feature file: expected a [T, D] tensor");
  detail::ByteWriter w;
  w.raw("FCF1", 4);
  w.u32(static_cast<std::uint32_t>(features.dim(0)));
  w.u32(static_cast<std::uint32_t>(features.dim(1)));
  for (std::int64_t i = 0; i < features.numel(); ++i) w.f32(features.at(i));
  detail::write_file(path, w.bytes());
}

inline Tensor read_feature_file(const std::string& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes, "feature file '" + path + "'");
  check(r.str(4) == "FCF1", "feature file '", path, "': bad magic");
  const std::int64_t T = r.u32();
  const std::int64_t D = r.u32();
  check(r.remaining() == static_cast<std::size_t>(4 * T * D), "feature file '", path,
        "': payload of ", r.remaining(), " bytes, expected ", 4 * T * D);
  Tensor out = Tensor::zeros({T, D});
  for (std::int64_t i = 0; i < T * D; ++i) out.at(i) = r.f32();
  return out;
}

// ---- FCT1 token streams ------------------------------------------------------

struct TokenStream {
  Variant variant = Variant::kFc50;
  std::uint16_t latent_dim = 13;
  std::uint32_t sample_rate = 16000;
  std::vector<CodeIndex> tokens;
};

inline void write_token_stream(const std::string& path, const TokenStream& stream) {
  detail::ByteWriter w;
  w.raw("FCT1", 4);
  w.u8(1);  // version
  w.u8(static_cast<std::uint8_t>(stream.variant));
  w.u16(stream.latent_dim);
  w.u32(stream.sample_rate);
  w.u32(static_cast<std::uint32_t>(stream.tokens.size()));
  const auto payload = pack_tokens(stream.tokens, stream.latent_dim);
  w.raw(payload.data(), payload.size());
  detail::write_file(path, w.bytes());
}

inline TokenStream read_token_stream(const std::string& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes, "token stream '" + path + "'");
  check(r.str(4) == "FCT1", "token stream '", path, "': bad magic");
  const std::uint8_t version = r.u8();
  check(version == 1, "token stream '", path, "': unsupported version ",
        static_cast<int>(version));
  TokenStream stream;
  const std::uint8_t variant = r.u8();
  check(variant <= 2, "token stream '", path, "': unknown variant id ",
        static_cast<int>(variant));
  stream.variant = static_cast<Variant>(variant);
  stream.latent_dim = r.u16();
  stream.sample_rate = r.u32();
  const std::uint32_t count = r.u32();
  const std::size_t expected =
      (static_cast<std::size_t>(count) * stream.latent_dim + 7) / 8;
  check(r.remaining() == expected, "token stream '", path, "': payload of ",
        r.remaining(), " bytes, expected ", expected);
  stream.tokens = unpack_tokens(r.raw(expected), count, stream.latent_dim);
  return stream;
}

// ---- FCCK checkpoints ---------------------------------------------------------

namespace detail {

inline void write_checkpoint(const std::string& path, const nlohmann::json& meta,
                             std::vector<std::pair<std::string, Tensor>>& tensors) {
  ByteWriter w;
  w.raw("FCCK", 4);
  w.u8(1);  // version
  const std::string meta_str = meta.dump();
  w.u32(static_cast<std::uint32_t>(meta_str.size()));
  w.raw(meta_str.data(), meta_str.size());
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (auto& [name, t] : tensors) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::int64_t d = 0; d < t.rank(); ++d)
      w.u32(static_cast<std::uint32_t>(t.dim(static_cast<std::size_t>(d))));
    for (std::int64_t i = 0; i < t.numel(); ++i) w.f32(t.at(i));
  }
  write_file(path, w.bytes());
}

struct CheckpointData {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline CheckpointData read_checkpoint(const std::string& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, "checkpoint '" + path + "'");
  check(r.str(4) == "FCCK", "checkpoint '", path, "': bad magic");
  const std::uint8_t version = r.u8();
  check(version == 1, "checkpoint '", path, "': unsupported version ",
        static_cast<int>(version));
  CheckpointData data;
  const std::uint32_t meta_len = r.u32();
  data.meta = nlohmann::json::parse(r.str(meta_len));
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    std::vector<std::int64_t> shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(r.u32());
    Tensor t = Tensor::zeros(shape);
    for (std::int64_t j = 0; j < t.numel(); ++j) t.at(j) = r.f32();
    data.tensors.emplace_back(name, std::move(t));
  }
  check(r.remaining() == 0, "checkpoint '", path, "': ", r.remaining(),
        " trailing bytes");
  return data;
}

// Copies stored tensors into the freshly initialized model parameters.
template <class Model>
void restore_params(Model& model, const CheckpointData& data, const std::string& path) {
  std::size_t cursor = 0;
  model.visit_params([&](const std::string& name, Tensor& t) {
    check(cursor < data.tensors.size(), "checkpoint '", path,
          "': missing tensor '", name, "'");
    const auto& [stored_name, stored] = data.tensors[cursor++];
    check(stored_name == name, "checkpoint '", path, "': expected tensor '", name,
          "', found '", stored_name, "'");
    check(stored.shape() == t.shape(), "checkpoint '", path, "': tensor '", name,
          "' has mismatched shape");
    std::copy_n(stored.data(), stored.numel(), t.data());
  });
  check(cursor == data.tensors.size(), "checkpoint '", path, "': ",
        data.tensors.size() - cursor, " unexpected extra tensors");
}

}  // namespace detail

inline void save_codec_checkpoint(const std::string& path, CodecModel& model) {
  const CodecConfig& c = model.config;
  nlohmann::json meta{
      {"kind", "codec"},
      {"variant", variant_name(c.variant)},
      {"input_dim", c.input_dim},
      {"hidden_dims", c.hidden_dims},
      {"latent_dim", c.latent_dim},
      {"downsample_factors", c.downsample_factors},
      {"feature_rate_hz", c.feature_rate_hz},
      {"sample_rate", c.sample_rate},
      {"temperature", model.quantizer.temperature},
      {"entropy_weight", model.quantizer.entropy_weight},
  };
  std::vector<std::pair<std::string, Tensor>> tensors;
  model.visit_params(
      [&tensors](const std::string& name, Tensor& t) { tensors.emplace_back(name, t); });
  detail::write_checkpoint(path, meta, tensors);
}

inline CodecModel load_codec_checkpoint(const std::string& path) {
  const auto data = detail::read_checkpoint(path);
  check(data.meta.value("kind", "") == "codec", "checkpoint '", path,
        "': not a codec checkpoint");
  CodecConfig cfg = CodecConfig::for_variant(
      variant_from_name(data.meta.at("variant").get<std::string>()));
  cfg.input_dim = data.meta.at("input_dim").get<std::int64_t>();
  cfg.hidden_dims = data.meta.at("hidden_dims").get<std::array<std::int64_t, 3>>();
  cfg.latent_dim = data.meta.at("latent_dim").get<std::int64_t>();
  cfg.downsample_factors =
      data.meta.at("downsample_factors").get<std::array<std::int64_t, 3>>();
  cfg.feature_rate_hz = data.meta.at("feature_rate_hz").get<double>();
  cfg.sample_rate = data.meta.at("sample_rate").get<std::int64_t>();
  CodecModel model = CodecModel::init(cfg, 0);
  model.quantizer.temperature = data.meta.at("temperature").get<float>();
  model.quantizer.entropy_weight = data.meta.at("entropy_weight").get<float>();
  detail::restore_params(model, data, path);
  return model;
}

inline void save_vocoder_checkpoint(const std::string& path, VocoderModel& model) {
  const VocoderConfig& c = model.config;
  nlohmann::json meta{
      {"kind", "vocoder"},   {"n_blocks", c.n_blocks},
      {"hidden", c.hidden},  {"ffn", c.ffn},
      {"kernel", c.kernel},  {"n_fft", c.n_fft},
      {"hop", c.hop},        {"sample_rate", c.sample_rate},
      {"n_mels", c.n_mels},  {"feature_dim", c.feature_dim},
      {"layer_scale_init", c.layer_scale_init},
      {"log_mag_clamp", c.log_mag_clamp},
  };
  std::vector<std::pair<std::string, Tensor>> tensors;
  model.visit_params(
      [&tensors](const std::string& name, Tensor& t) { tensors.emplace_back(name, t); });
  detail::write_checkpoint(path, meta, tensors);
}

inline VocoderModel load_vocoder_checkpoint(const std::string& path) {
  const auto data = detail::read_checkpoint(path);
  check(data.meta.value("kind", "") == "vocoder", "checkpoint '", path,
        "': not a vocoder checkpoint");
  VocoderConfig cfg;
  cfg.n_blocks = data.meta.at("n_blocks").get<std::int64_t>();
  cfg.hidden = data.meta.at("hidden").get<std::int64_t>();
  cfg.ffn = data.meta.at("ffn").get<std::int64_t>();
  cfg.kernel = data.meta.at("kernel").get<std::int64_t>();
  cfg.n_fft = data.meta.at("n_fft").get<std::int64_t>();
  cfg.hop = data.meta.at("hop").get<std::int64_t>();
  cfg.sample_rate = data.meta.at("sample_rate").get<std::int64_t>();
  cfg.n_mels = data.meta.at("n_mels").get<std::int64_t>();
  cfg.feature_dim = data.meta.at("feature_dim").get<std::int64_t>();
  cfg.layer_scale_init = data.meta.at("layer_scale_init").get<float>();
  cfg.log_mag_clamp = data.meta.at("log_mag_clamp").get<float>();
  VocoderModel model = VocoderModel::init(cfg, 0);
  detail::restore_params(model, data, path);
  return model;
}

// ---- metrics ------------------------------------------------------------------

// Real-time factor: audio seconds produced per wall-clock second; > 1 means
// faster than real time.
inline double measure_rtf(double audio_duration_s, double wall_time_s) {
  check(wall_time_s > 0.0, "rtf: wall time must be positive, got ", wall_time_s);
  return audio_duration_s / wall_time_s;
}

}  // namespace focalcodec
