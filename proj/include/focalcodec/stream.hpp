#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "focalcodec/codec.hpp"
#include "focalcodec/vocoder.hpp"

namespace focalcodec {

struct StreamConfig {
  std::int64_t chunk_size = 8000;     // samples decoded per step
  std::int64_t left_context = 48000;  // samples of history re-decoded per chunk
  std::int64_t overlap = 250;         // samples crossfaded between chunks

  void validate() const {
    check(chunk_size >= 1, "stream: chunk_size must be positive");
    check(overlap >= 0, "stream: overlap must be >= 0");
    check(overlap < chunk_size, "stream: chunk of ", chunk_size,
          " samples is smaller than the overlap of ", overlap);
    check(left_context >= 0, "stream: left_context must be >= 0");
  }
};

// Linear fade-in weight for sample i of an overlap region; the matching
// fade-out is 1 - w, so the pair sums to 1 at every overlapped sample.
inline double crossfade_in_weight(std::int64_t i, std::int64_t overlap) {
  return static_cast<double>(i + 1) / static_cast<double>(overlap + 1);
}

// Appends seg to acc, blending the last `overlap` samples of acc with the
// first `overlap` samples of seg by a linear crossfade.
inline void crossfade_append(std::vector<float>& acc, std::span<const float> seg,
                             std::int64_t overlap) {
  check(overlap >= 0, "stitch: negative overlap");
  check(overlap <= static_cast<std::int64_t>(acc.size()) &&
            overlap <= static_cast<std::int64_t>(seg.size()),
        "stitch: overlap of ", overlap, " exceeds a segment");
  const std::size_t base = acc.size() - static_cast<std::size_t>(overlap);
  for (std::int64_t i = 0; i < overlap; ++i) {
    const double w = crossfade_in_weight(i, overlap);
    acc[base + static_cast<std::size_t>(i)] = static_cast<float>(
        acc[base + static_cast<std::size_t>(i)] * (1.0 - w) +
        seg[static_cast<std::size_t>(i)] * w);
  }
  acc.insert(acc.end(), seg.begin() + overlap, seg.end());
}

// Offline decode: tokens -> features -> waveform.
inline std::vector<float> decode_waveform(std::span<const CodeIndex> tokens,
                                          const CodecModel& codec,
                                          const VocoderModel& vocoder) {
  return synthesize(decode_features(tokens, codec), vocoder);
}

// Chunk-wise decode. Each chunk is re-decoded together with up to
// left_context samples of preceding tokens, the fresh samples are kept, and
// consecutive chunks are stitched with a linear crossfade over `overlap`
// samples. Output length always equals the offline decode length.
inline std::vector<float> stream_decode(std::span<const CodeIndex> tokens,
                                        const CodecModel& codec,
                                        const VocoderModel& vocoder,
                                        const StreamConfig& cfg) {
  cfg.validate();
  check(!tokens.empty(), "stream: empty token stream");
  const std::int64_t spt = vocoder.config.hop * codec.config.total_downsample();
  check(cfg.chunk_size % spt == 0, "stream: chunk_size ", cfg.chunk_size,
        " is not a multiple of ", spt, " samples per token");
  const std::int64_t n_tokens = static_cast<std::int64_t>(tokens.size());
  const std::int64_t total = n_tokens * spt;
  const std::int64_t ctx_tokens = cfg.left_context / spt;

  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(total));
  for (std::int64_t start = 0; start < total; start += cfg.chunk_size) {
    const std::int64_t end = std::min(start + cfg.chunk_size, total);
    const std::int64_t lead = start == 0 ? 0 : cfg.overlap;
    const std::int64_t start_tok = start / spt;
    // cover both the re-decoded context and the crossfade lead-in
    std::int64_t from_tok = std::min(start_tok - ctx_tokens, (start - lead) / spt);
    from_tok = std::max<std::int64_t>(0, from_tok);
    const std::int64_t to_tok = end / spt;

    const std::vector<float> segment =
        decode_waveform(tokens.subspan(static_cast<std::size_t>(from_tok),
                                       static_cast<std::size_t>(to_tok - from_tok)),
                        codec, vocoder);
    const std::int64_t seg_offset = (start - lead) - from_tok * spt;
    crossfade_append(out,
                     std::span<const float>(segment.data() + seg_offset,
                                            static_cast<std::size_t>(end - (start - lead))),
                     lead);
  }
  return out;
}

}  // namespace focalcodec
