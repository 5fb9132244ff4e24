#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "focalcodec/codec.hpp"

namespace focalcodec {

struct TrainConfig {
  float lr = 5e-4f;
  float beta1 = 0.8f;
  float beta2 = 0.99f;
  float weight_decay = 0.01f;
  float grad_clip_l2 = 5.0f;
  float lr_decay_factor = 0.9f;
  float plateau_margin = 0.0025f;
  int plateau_patience = 3;  // validation evals without improvement before decay
  float recon_weight = 1.0f;
  float entropy_weight = 0.1f;
  float adam_eps = 1e-8f;
  std::int64_t batch_size = 4;
  std::int64_t steps = 200;
  std::int64_t eval_every = 20;
  std::uint64_t seed = 0;
  double latent_guard_eps = 1e-8;  // keeps zero latents finite while training

  void validate() const {
    check(lr > 0.0f && beta1 > 0.0f && beta1 < 1.0f && beta2 > 0.0f && beta2 < 1.0f,
          "train config: bad optimizer parameters");
    check(weight_decay >= 0.0f && grad_clip_l2 > 0.0f, "train config: bad clip/decay");
    check(lr_decay_factor > 0.0f && lr_decay_factor < 1.0f &&
              plateau_margin > 0.0f && plateau_patience >= 1,
          "train config: bad plateau schedule");
    check(recon_weight >= 0.0f && entropy_weight >= 0.0f,
          "train config: loss weights must be >= 0");
    check(batch_size >= 1 && steps >= 1 && eval_every >= 1,
          "train config: bad step counts");
  }
};

struct SyntheticFeatureSpec {
  std::int64_t n_utterances = 16;
  std::int64_t frames_per_utterance = 40;
  std::int64_t feature_dim = 1024;
  std::int64_t n_clusters = 8;
  float noise_std = 0.05f;
  float stay_prob = 0.85f;  // chance of staying on the current cluster
  std::uint64_t seed = 1;
};

using FeatureDataset = std::vector<Tensor>;

// Cluster-walk stand-in for encoder features: each utterance hops between
// Gaussian cluster centers with per-frame noise. Deterministic per seed.
inline FeatureDataset generate_synthetic_features(const SyntheticFeatureSpec& spec) {
  check(spec.n_utterances >= 1 && spec.frames_per_utterance >= 1 &&
            spec.feature_dim >= 1 && spec.n_clusters >= 1,
        "synthetic features: sizes must be positive");
  Rng rng(spec.seed);
  std::vector<std::vector<float>> centers(static_cast<std::size_t>(spec.n_clusters));
  for (auto& center : centers) {
    center.resize(static_cast<std::size_t>(spec.feature_dim));
    for (auto& v : center) v = static_cast<float>(rng.normal());
  }
  FeatureDataset dataset;
  dataset.reserve(static_cast<std::size_t>(spec.n_utterances));
  for (std::int64_t u = 0; u < spec.n_utterances; ++u) {
    Tensor utt = Tensor::zeros({spec.frames_per_utterance, spec.feature_dim});
    std::int64_t cluster = rng.uniform_int(spec.n_clusters);
    for (std::int64_t t = 0; t < spec.frames_per_utterance; ++t) {
      const auto& center = centers[static_cast<std::size_t>(cluster)];
      for (std::int64_t d = 0; d < spec.feature_dim; ++d)
        utt.at(t * spec.feature_dim + d) = static_cast<float>(
            center[static_cast<std::size_t>(d)] + spec.noise_std * rng.normal());
      if (rng.uniform() >= spec.stay_prob) cluster = rng.uniform_int(spec.n_clusters);
    }
    dataset.push_back(std::move(utt));
  }
  return dataset;
}

struct Stage1Parts {
  Tensor total, recon, entropy;
};

// First-stage objective on one utterance: squared-L2 feature reconstruction
// plus the codebook entropy loss on the pre-quantization latents.
inline Stage1Parts stage1_loss_graph(const Tensor& features, const CodecModel& model,
                                     const TrainConfig& cfg, Tape* tape) {
  check(features.rank() == 2 && features.dim(1) == model.config.input_dim,
        "stage1_loss: expected [T, ", model.config.input_dim, "] features");
  check(features.dim(0) >= 1, "stage1_loss: empty utterance");
  const std::int64_t T = features.dim(0);
  Tensor padded = pad_edge_rows(features, model.config.total_downsample());
  Tensor latents = run_compressor(padded, model, tape);
  Tensor sphere = project_to_sphere(latents, tape, cfg.latent_guard_eps);
  Tensor entropy = entropy_loss(sphere, model.quantizer, tape);
  Tensor codes = binarize_ste(sphere, tape);
  Tensor recon_full = run_decompressor(codes, model, tape);
  // padding frames are excluded from the loss
  Tensor recon = recon_full.dim(0) == T ? recon_full
                                        : slice_rows(recon_full, 0, T, tape);
  Tensor diff = sub(recon, features, tape);
  Tensor recon_mse = mean_all(mul(diff, diff, tape), tape);
  Tensor total = add(scale(recon_mse, cfg.recon_weight, tape),
                     scale(entropy, cfg.entropy_weight, tape), tape);
  return {total, recon_mse, entropy};
}

struct Stage1Loss {
  float total = 0.0f, recon = 0.0f, entropy = 0.0f;
};

inline Stage1Loss stage1_loss(const Tensor& features, const CodecModel& model,
                              const TrainConfig& cfg) {
  const Stage1Parts parts = stage1_loss_graph(features, model, cfg, nullptr);
  return {parts.total.item(), parts.recon.item(), parts.entropy.item()};
}

// Adam with decoupled weight decay; moments kept in 64-bit.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, const TrainConfig& cfg)
      : cfg_(cfg), lr_(cfg.lr) {
    for (auto& p : params) {
      p.ensure_grad();
      slots_.push_back(Slot{p,
                            std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0),
                            std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0)});
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  // Global-norm clip; returns the pre-clip norm.
  double clip_gradients() {
    double sumsq = 0.0;
    for (auto& s : slots_)
      for (std::int64_t i = 0; i < s.param.numel(); ++i) {
        const double g = s.param.grad()[i];
        sumsq += g * g;
      }
    const double norm = std::sqrt(sumsq);
    if (norm > cfg_.grad_clip_l2) {
      const double scale = cfg_.grad_clip_l2 / norm;
      for (auto& s : slots_)
        for (std::int64_t i = 0; i < s.param.numel(); ++i)
          s.param.grad()[i] = static_cast<float>(s.param.grad()[i] * scale);
    }
    return norm;
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), t_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), t_);
    for (auto& s : slots_)
      for (std::int64_t i = 0; i < s.param.numel(); ++i) {
        const double g = s.param.grad()[i];
        auto& m = s.m[static_cast<std::size_t>(i)];
        auto& v = s.v[static_cast<std::size_t>(i)];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.adam_eps);
        const double theta = s.param.at(i);
        s.param.at(i) = static_cast<float>(
            theta - lr_ * (update + cfg_.weight_decay * theta));
      }
  }

  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  TrainConfig cfg_;
  std::int64_t t_ = 0;
  float lr_;
};

struct TrainResult {
  std::vector<float> loss_history;     // batch-mean total loss per step
  std::vector<float> recon_history;
  std::vector<float> entropy_history;
  float final_lr = 0.0f;
};

// Stage-1 training loop: AdamW, global-norm clipping, and a
// reduce-on-plateau schedule driven by periodic held-in evaluations.
// Deterministic given the seed.
inline TrainResult train_stage1(const FeatureDataset& dataset, CodecModel& model,
                                const TrainConfig& cfg) {
  cfg.validate();
  check(!dataset.empty(), "train: empty dataset");
  std::vector<Tensor> params;
  model.visit_params([&params](const std::string&, Tensor& t) { params.push_back(t); });
  AdamW opt(params, cfg);
  Rng rng(cfg.seed);

  const auto eval_mean_loss = [&]() {
    double acc = 0.0;
    for (const auto& utt : dataset) acc += stage1_loss(utt, model, cfg).total;
    return acc / static_cast<double>(dataset.size());
  };

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  int stale_evals = 0;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    double total = 0.0, recon = 0.0, entropy = 0.0;
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
      const auto& utt =
          dataset[static_cast<std::size_t>(rng.uniform_int(
              static_cast<std::int64_t>(dataset.size())))];
      Tape tape;
      Stage1Parts parts = stage1_loss_graph(utt, model, cfg, &tape);
      Tensor scaled = scale(parts.total, static_cast<float>(inv_b), &tape);
      tape.backward(scaled);
      total += parts.total.item() * inv_b;
      recon += parts.recon.item() * inv_b;
      entropy += parts.entropy.item() * inv_b;
    }
    check(std::isfinite(total), "train: loss diverged (non-finite) at step ", step,
          "; lower the learning rate or inspect the data");
    opt.clip_gradients();
    opt.step();
    result.loss_history.push_back(static_cast<float>(total));
    result.recon_history.push_back(static_cast<float>(recon));
    result.entropy_history.push_back(static_cast<float>(entropy));

    if ((step + 1) % cfg.eval_every == 0) {
      const double val = eval_mean_loss();
      if (val < best_val - cfg.plateau_margin) {
        best_val = val;
        stale_evals = 0;
      } else if (++stale_evals >= cfg.plateau_patience) {
        opt.set_lr(opt.lr() * cfg.lr_decay_factor);
        stale_evals = 0;
      }
    }
  }
  result.final_lr = opt.lr();
  return result;
}

// Tokens emitted for every utterance of a dataset, concatenated.
inline std::vector<CodeIndex> encode_dataset(const FeatureDataset& dataset,
                                             const CodecModel& model) {
  std::vector<CodeIndex> all;
  for (const auto& utt : dataset) {
    const auto tokens = encode(utt, model);
    all.insert(all.end(), tokens.begin(), tokens.end());
  }
  return all;
}

}  // namespace focalcodec
