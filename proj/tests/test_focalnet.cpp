#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>

#include "focalcodec/focalnet.hpp"

using namespace focalcodec;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, float lo = -1.0f,
                     float hi = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.at(i) = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

FocalModulationConfig toy_config(std::int64_t dim,
                                 PaddingMode mode = PaddingMode::kZeros) {
  FocalModulationConfig cfg;
  cfg.dim = dim;
  cfg.padding_mode = mode;
  return cfg;
}

Tensor rotate_rows(const Tensor& x, std::int64_t s) {
  const std::int64_t T = x.dim(0), C = x.dim(1);
  Tensor y = Tensor::zeros({T, C});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t c = 0; c < C; ++c)
      y.at(((t + s) % T) * C + c) = x.at(t * C + c);
  return y;
}

void zero_all(FocalBlockParams& p) {
  p.visit("", [](const std::string&, Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = 0.0f;
  });
}

}  // namespace

TEST_CASE("level kernels grow exponentially and stay odd") {
  FocalModulationConfig cfg = toy_config(8);
  CHECK(cfg.level_kernel(1) == 7);
  CHECK(cfg.level_kernel(2) == 13);
  CHECK(cfg.level_kernel(3) == 25);
  cfg.focal_window = 6;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.focal_window = 7;
  cfg.layer_scale_init = 0.0f;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("snake closed forms") {
  Tensor alpha = Tensor::from({1}, {1.0f});
  CHECK(snake(Tensor::zeros({1, 1}), alpha).at(0) == 0.0f);

  const float pi = 3.14159265358979f;
  Tensor y = snake(Tensor::from({1, 1}, {pi}), alpha);
  CHECK_THAT(y.at(0), Catch::Matchers::WithinAbs(pi, 1e-6));

  Tensor alpha3 = Tensor::from({1}, {3.0f});
  const double expected = 0.5 + std::sin(1.5) * std::sin(1.5) / 3.0;
  Tensor y2 = snake(Tensor::from({1, 1}, {0.5f}), alpha3);
  CHECK_THAT(y2.at(0), Catch::Matchers::WithinAbs(expected, 1e-6));

  CHECK_THROWS_AS(snake(Tensor::zeros({1, 1}), Tensor::from({1}, {-1.0f})), Error);
}

TEST_CASE("snake gradient vs finite differences") {
  Rng rng(21);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor alpha = random_tensor({3}, rng, 0.5f, 2.0f);
  auto loss_fn = [&](Tape* t) { return mean_all(snake(x, alpha, t), t); };
  auto precise = [&]() {
    double acc = 0.0;
    for (std::int64_t t = 0; t < 4; ++t)
      for (std::int64_t c = 0; c < 3; ++c) {
        const double a = alpha.at(c), v = x.at(t * 3 + c);
        acc += v + std::sin(a * v) * std::sin(a * v) / a;
      }
    return acc / 12.0;
  };
  CHECK(finite_diff_check(loss_fn, x, 1e-3, {}, precise).max_rel_error < 1e-4);
  CHECK(finite_diff_check(loss_fn, alpha, 1e-3, {}, precise).max_rel_error < 1e-4);
}

TEST_CASE("focal modulation with zero weights is zero") {
  Rng rng(22);
  FocalModulationConfig cfg = toy_config(6);
  FocalBlockParams p = FocalBlockParams::init(cfg, rng);
  zero_all(p);
  Tensor x = random_tensor({9, 6}, rng);
  Tensor y = focal_modulation(x, p, cfg);
  for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == 0.0f);
}

TEST_CASE("focal modulation handles a single frame") {
  Rng rng(23);
  FocalModulationConfig cfg = toy_config(5);
  FocalBlockParams p = FocalBlockParams::init(cfg, rng);
  Tensor x = random_tensor({1, 5}, rng);
  Tensor y = focal_modulation(x, p, cfg);
  REQUIRE(y.shape() == x.shape());
  CHECK(y.all_finite());
}

TEST_CASE("focal modulation is shift-equivariant under circular padding") {
  Rng rng(24);
  FocalModulationConfig cfg = toy_config(6, PaddingMode::kCircular);
  FocalBlockParams p = FocalBlockParams::init(cfg, rng);
  // unit-scale weights rather than the 0.02 init, to make deviations visible
  p.visit("", [&rng](const std::string&, Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t.at(i) = static_cast<float>(rng.uniform(-0.5, 0.5));
  });
  Tensor x = random_tensor({17, 6}, rng);
  for (std::int64_t s : {1, 5, 11}) {
    Tensor shifted = focal_modulation(rotate_rows(x, s), p, cfg);
    Tensor expected = rotate_rows(focal_modulation(x, p, cfg), s);
    double max_abs = 0.0;
    for (std::int64_t i = 0; i < shifted.numel(); ++i)
      max_abs = std::max(
          max_abs, std::abs(static_cast<double>(shifted.at(i)) - expected.at(i)));
    CHECK(max_abs < 1e-5);
  }
}

TEST_CASE("focal block with zero layer scales is the identity") {
  Rng rng(25);
  FocalModulationConfig cfg = toy_config(4);
  FocalBlockParams p = FocalBlockParams::init(cfg, rng);
  for (std::int64_t i = 0; i < 4; ++i) {
    p.layer_scale1.at(i) = 0.0f;
    p.layer_scale2.at(i) = 0.0f;
  }
  Tensor x = random_tensor({7, 4}, rng);
  Tensor y = focal_block(x, p, cfg);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("focal block at default init stays near the identity") {
  Rng rng(26);
  FocalModulationConfig cfg = toy_config(8);
  FocalBlockParams p = FocalBlockParams::init(cfg, rng);
  Tensor x = random_tensor({16, 8}, rng);
  Tensor y = focal_block(x, p, cfg);
  double max_dev = 0.0, max_in = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    max_dev = std::max(max_dev, std::abs(static_cast<double>(y.at(i)) - x.at(i)));
    max_in = std::max(max_in, std::abs(static_cast<double>(x.at(i))));
  }
  CHECK(max_dev < 0.05 * max_in);
}

TEST_CASE("gradients flow through modulation and the full block") {
  Rng rng(27);
  FocalModulationConfig cfg = toy_config(5);
  FocalBlockParams p = FocalBlockParams::init(cfg, rng);
  // move weights away from the tiny init so gradients are informative
  p.visit("", [&rng](const std::string& name, Tensor& t) {
    if (name.find("norm") != std::string::npos) return;
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t.at(i) = static_cast<float>(rng.uniform(-0.4, 0.4));
  });
  Tensor x = random_tensor({6, 5}, rng);

  SECTION("focal_modulation") {
    auto loss = [&](Tape* t) { return mean_all(focal_modulation(x, p, cfg, t), t); };
    CHECK(finite_diff_check(loss, x, 1e-2).max_rel_error < 1e-3);
    CHECK(finite_diff_check(loss, p.pre_w, 1e-2).max_rel_error < 1e-3);
    CHECK(finite_diff_check(loss, p.ctx_w[0], 1e-2).max_rel_error < 1e-3);
    CHECK(finite_diff_check(loss, p.h_w, 1e-2).max_rel_error < 1e-3);
  }

  SECTION("focal_block") {
    auto loss = [&](Tape* t) { return mean_all(focal_block(x, p, cfg, t), t); };
    CHECK(finite_diff_check(loss, x, 1e-2).max_rel_error < 1e-3);
    CHECK(finite_diff_check(loss, p.mlp_w1, 1e-2).max_rel_error < 1e-3);
    CHECK(finite_diff_check(loss, p.layer_scale1, 1e-2).max_rel_error < 1e-3);
    CHECK(finite_diff_check(loss, p.norm1_gamma, 1e-2).max_rel_error < 1e-3);
  }
}

TEST_CASE("downscale and upscale obey the shape laws") {
  Rng rng(28);
  FocalModulationConfig base = toy_config(1);

  SECTION("paper dims: 1024 to 512 at factor 2") {
    ScaleBlockParams down = ScaleBlockParams::init(1024, 512, 2, false, base, rng);
    Tensor x = random_tensor({100, 1024}, rng);
    Tensor y = focal_downscale(x, down);
    REQUIRE(y.shape() == std::vector<std::int64_t>{50, 512});
  }

  SECTION("factor 1 keeps T") {
    ScaleBlockParams down = ScaleBlockParams::init(12, 8, 1, false, base, rng);
    Tensor y = focal_downscale(random_tensor({33, 12}, rng), down);
    REQUIRE(y.shape() == std::vector<std::int64_t>{33, 8});
  }

  SECTION("factor composition (2, 2, 1) maps 200 frames to 50") {
    ScaleBlockParams b1 = ScaleBlockParams::init(16, 16, 2, false, base, rng);
    ScaleBlockParams b2 = ScaleBlockParams::init(16, 8, 2, false, base, rng);
    ScaleBlockParams b3 = ScaleBlockParams::init(8, 4, 1, false, base, rng);
    Tensor y = focal_downscale(
        focal_downscale(focal_downscale(random_tensor({200, 16}, rng), b1), b2), b3);
    REQUIRE(y.shape() == std::vector<std::int64_t>{50, 4});
  }

  SECTION("upscale doubles T and remaps channels") {
    ScaleBlockParams up = ScaleBlockParams::init(256, 512, 2, true, base, rng);
    Tensor y = focal_upscale(random_tensor({50, 256}, rng), up);
    REQUIRE(y.shape() == std::vector<std::int64_t>{100, 512});
  }

  SECTION("down then up restores length exactly") {
    ScaleBlockParams down = ScaleBlockParams::init(6, 4, 2, false, base, rng);
    ScaleBlockParams up = ScaleBlockParams::init(4, 6, 2, true, base, rng);
    for (std::int64_t T : {2, 10, 64}) {
      Tensor y = focal_upscale(focal_downscale(random_tensor({T, 6}, rng), down), up);
      REQUIRE(y.dim(0) == T);
      REQUIRE(y.dim(1) == 6);
    }
  }

  SECTION("odd length at factor 2 asks the caller to pad") {
    ScaleBlockParams down = ScaleBlockParams::init(6, 4, 2, false, base, rng);
    try {
      focal_downscale(random_tensor({5, 6}, rng), down);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("pad") != std::string::npos);
    }
  }
}

TEST_CASE("blocks preserve the shape law across sequence lengths") {
  Rng rng(29);
  FocalModulationConfig cfg = toy_config(3);
  FocalBlockParams p = FocalBlockParams::init(cfg, rng);
  for (std::int64_t T : {1, 2, 3, 5, 8, 13, 21, 64, 200, 512}) {
    Tensor x = random_tensor({T, 3}, rng);
    REQUIRE(focal_block(x, p, cfg).shape() == x.shape());
  }
}

TEST_CASE("focal modulation runtime grows linearly in T") {
  Rng rng(30);
  FocalModulationConfig cfg = toy_config(32);
  FocalBlockParams p = FocalBlockParams::init(cfg, rng);
  Tensor x1 = random_tensor({2048, 32}, rng);
  Tensor x2 = random_tensor({4096, 32}, rng);

  auto time_of = [&](const Tensor& x) {
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      Tensor y = focal_modulation(x, p, cfg);
      const auto t1 = std::chrono::steady_clock::now();
      volatile float sink = y.at(0);
      (void)sink;
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
  };

  bool in_range = false;
  for (int attempt = 0; attempt < 3 && !in_range; ++attempt) {
    const double ratio = time_of(x2) / time_of(x1);
    in_range = ratio >= 1.6 && ratio <= 2.6;
  }
  CHECK(in_range);
}
