#include <doctest.h>

#include "helpers.hpp"
#include "splice/errors.hpp"
#include "splice/invert.hpp"

using namespace splice;
using namespace testutil;

namespace {
// Desk-scale inversion: 32-px square, short Adam run on the tiny extractor.
invert::InversionConfig toy_cfg(Index steps, std::uint64_t seed = 0) {
  invert::InversionConfig c;
  c.steps = steps;
  c.lr = 1e-3f;
  c.prior_seed = seed;
  c.output_size = 32;
  return c;
}

Scalar mse(const Tensor& a, const Tensor& b) {
  return (a.array() - b.array()).square().mean();
}
}  // namespace

TEST_CASE("feature selector parsing") {
  auto s = invert::parse_selector("cls");
  CHECK(s.kind == invert::FeatureKind::Cls);
  CHECK(s.layer == 0);  // deepest by default
  s = invert::parse_selector("keys@11");
  CHECK(s.kind == invert::FeatureKind::Keys);
  CHECK(s.layer == 11);
  CHECK(invert::selector_name(invert::parse_selector("selfsim@2")) ==
        "selfsim@2");
  CHECK(invert::selector_name(invert::FeatureSelector{}) == "cls");

  CHECK_THROWS_AS(invert::parse_selector("queries"), ConfigError);
  CHECK_THROWS_AS(invert::parse_selector("cls@zero"), ConfigError);
  CHECK_THROWS_AS(invert::parse_selector("cls@0"), ConfigError);
}

TEST_CASE("inversion config validation") {
  invert::InversionConfig c = toy_cfg(10);
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_cfg(10);
  c.steps = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_cfg(10);
  c.divergence_factor = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero steps returns the prior's initial rendering") {
  auto vit = tiny_vit(100);
  Image target{synth_image(32, 32, 101)};
  auto res = invert::invert_feature(vit, target, toy_cfg(0, 5));
  CHECK(res.trace.size() == 1);
  CHECK(res.final_loss == res.initial_loss);
  CHECK(res.image.shape() == Shape{3, 32, 32});
  CHECK(res.image.array().isFinite().all());

  // Same prior seed, same untouched rendering.
  auto again = invert::invert_feature(vit, target, toy_cfg(0, 5));
  CHECK((res.image.array() == again.image.array()).all());
}

TEST_CASE("global-token inversion converges on a toy run") {
  auto vit = tiny_vit(102);
  Image target{synth_image(32, 32, 103)};
  std::vector<Scalar> cb_losses;
  auto res = invert::invert_feature(
      vit, target, toy_cfg(150, 1),
      [&](Index, Scalar v) { cb_losses.push_back(v); });
  CHECK(res.trace.size() == 151);
  CHECK(cb_losses == res.trace);
  CHECK(res.final_loss < res.initial_loss);
  CHECK(res.final_loss < 0.5f * res.initial_loss);
  CHECK(res.image.array().minCoeff() >= 0);
  CHECK(res.image.array().maxCoeff() <= 1);
}

TEST_CASE("identical prior seeds reproduce the run exactly") {
  auto vit = tiny_vit(104);
  Image target{synth_image(32, 32, 105)};
  auto a = invert::invert_feature(vit, target, toy_cfg(40, 9));
  auto b = invert::invert_feature(vit, target, toy_cfg(40, 9));
  CHECK(a.trace == b.trace);
  CHECK((a.image.array() == b.image.array()).all());
}

TEST_CASE("different seeds both converge but land on different images") {
  auto vit = tiny_vit(106);
  Image target{synth_image(32, 32, 107)};
  auto a = invert::invert_feature(vit, target, toy_cfg(150, 1));
  auto b = invert::invert_feature(vit, target, toy_cfg(150, 2));
  CHECK(a.final_loss < a.initial_loss);
  CHECK(b.final_loss < b.initial_loss);
  // The global token under-constrains pixels: distinct solutions.
  CHECK((a.image.array() - b.image.array()).square().mean() > 1e-4f);
}

TEST_CASE("keys reconstruct the image more faithfully than the global token") {
  auto vit = tiny_vit(108);
  Image target{synth_image(32, 32, 109)};
  auto cfg = toy_cfg(200, 3);
  cfg.selector = invert::parse_selector("keys");
  auto keys_run = invert::invert_feature(vit, target, cfg);
  cfg.selector = invert::parse_selector("cls");
  auto cls_run = invert::invert_feature(vit, target, cfg);
  CHECK(keys_run.final_loss < keys_run.initial_loss);
  CHECK(mse(keys_run.image, target.t) < mse(cls_run.image, target.t));
}

TEST_CASE("pixels-only mode runs without the prior network") {
  auto vit = tiny_vit(110);
  Image target{synth_image(32, 32, 111)};
  auto cfg = toy_cfg(60, 4);
  cfg.pixels_only = true;
  auto res = invert::invert_feature(vit, target, cfg);
  CHECK(res.image.shape() == Shape{3, 32, 32});
  CHECK(res.final_loss < res.initial_loss);
}

TEST_CASE("divergence guard aborts a blown-up run") {
  auto vit = tiny_vit(112);
  Image target{synth_image(32, 32, 113)};
  auto cfg = toy_cfg(2000, 5);
  cfg.lr = 50.0f;  // far past stability
  cfg.divergence_factor = 2;
  cfg.divergence_window = 5;
  CHECK_THROWS_AS(invert::invert_feature(vit, target, cfg), NumericError);
}

TEST_CASE("selector layer beyond model depth is rejected") {
  auto vit = tiny_vit(114);
  Image target{synth_image(32, 32, 115)};
  auto cfg = toy_cfg(1);
  cfg.selector = invert::parse_selector("cls@99");
  CHECK_THROWS_AS(invert::invert_feature(vit, target, cfg), ConfigError);
}

TEST_CASE("per-layer sweep records failures and keeps going") {
  auto vit = tiny_vit(116);
  Image target{synth_image(32, 32, 117)};
  auto multi =
      invert::invert_cls_across_layers(vit, target, {1, 2, 99}, toy_cfg(20, 6));
  CHECK(multi.results.size() == 2);
  CHECK(multi.results.count(1) == 1);
  CHECK(multi.results.count(2) == 1);
  REQUIRE(multi.errors.size() == 1);
  CHECK(multi.errors.count(99) == 1);

  // Seeded determinism across the sweep.
  auto again =
      invert::invert_cls_across_layers(vit, target, {1, 2, 99}, toy_cfg(20, 6));
  CHECK((multi.results.at(2).image.array() ==
         again.results.at(2).image.array())
            .all());
}
