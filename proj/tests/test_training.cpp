#include "doctest.h"

#include "hsdf/training.hpp"
#include "small_scenes.hpp"

using namespace hsdf;
using namespace hsdf::testing;

TEST_CASE("random rooms keep the orbit clear") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Scene s = random_room_scene(rng);
    CHECK(s.primitives.size() >= 3);
    CHECK(s.primitives.size() <= 5);
    for (const Posed& p : interpolate_waypoints(room_orbit(s, 5), 8)) CHECK(scene_sdf(s, p.translation) > 0.3);
  }
}

TEST_CASE("pre-training needs two scenes") {
  auto one = small_scenes(1, 0);
  CHECK_THROWS_AS(pretrain_decoder(one, PretrainConfig{}), Error);
  try {
    pretrain_decoder(one, PretrainConfig{});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientScenes);
  }
}

TEST_CASE("decoder size does not depend on the scene count") {
  PretrainConfig cfg;
  cfg.epochs = 1;
  auto two = small_scenes(2, 1);
  auto three = small_scenes(3, 1);
  const auto a = pretrain_decoder(two, cfg);
  const auto b = pretrain_decoder(three, cfg);
  // (2 levels x 2 features) -> 64 -> 1
  const std::size_t expected = 4 * 64 + 64 + 64 + 1;
  CHECK(a.decoder.parameter_count() == expected);
  CHECK(b.decoder.parameter_count() == expected);
}

TEST_CASE("fine levels get no gradient before activation") {
  PretrainConfig cfg;
  cfg.epochs = 6;
  cfg.activation_epoch = 3;
  auto scenes = small_scenes(2, 2);
  const auto res = pretrain_decoder(scenes, cfg);
  REQUIRE(res.trace.size() == 6);
  for (const PretrainLog& log : res.trace) {
    CHECK(log.level_grad_norm[0] > 0.0);
    if (log.epoch < 3) {
      CHECK(log.active_levels == 1);
      CHECK(log.level_grad_norm[1] == 0.0);
    } else {
      CHECK(log.active_levels == 2);
      CHECK(log.level_grad_norm[1] > 0.0);
    }
  }
}

TEST_CASE("pre-training drops the loss tenfold and is reproducible") {
  PretrainConfig cfg;
  cfg.epochs = 300;
  cfg.activation_epoch = 50;
  cfg.lr = 1e-2;
  auto a_scenes = small_scenes(2, 3);
  auto b_scenes = small_scenes(2, 3);
  const auto a = pretrain_decoder(a_scenes, cfg);
  const auto b = pretrain_decoder(b_scenes, cfg);
  MESSAGE("loss " << a.trace.front().loss << " -> " << a.trace.back().loss);
  CHECK(a.trace.back().loss * 10.0 <= a.trace.front().loss);
  CHECK(a.decoder.w1.value == b.decoder.w1.value);
  CHECK(a.decoder.w2.value == b.decoder.w2.value);
  CHECK(a.trace.back().loss == b.trace.back().loss);
}

TEST_CASE("encoder training") {
  auto scenes = small_scenes(2, 4);
  PretrainConfig pc;
  pc.epochs = 100;
  pc.activation_epoch = 30;
  pc.lr = 1e-2;
  const Decoder dec = pretrain_decoder(scenes, pc).decoder;
  std::vector<Encoder> none;
  EncoderTrainConfig cfg;
  cfg.epochs = 3;

  SUBCASE("needs a decoder") {
    try {
      train_encoder(scenes, 0, none, nullptr, cfg);
      FAIL("expected MissingDecoder");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingDecoder);
    }
  }

  SUBCASE("coarsest level sees the zero-feature field") {
    const SubmapPoints pts = gather_points(scenes[0]);
    const Tensor r = residual_features(pts.x, pts.labels, scenes[0].grid, dec, 0);
    const double base = dec.evaluate(Eigen::RowVectorXd::Zero(dec.input_dim()));
    for (std::size_t i = 0; i < pts.x.size(); ++i)
      if (pts.labels[i].is_near()) CHECK(r(Index(i), 0) == doctest::Approx(base - pts.labels[i].y()).epsilon(1e-12));
  }

  SUBCASE("decoder stays bit-identical and the loss falls") {
    const Decoder before = dec;
    cfg.epochs = 60;
    cfg.lr = 1e-2;
    const auto res = train_encoder(scenes, 0, none, &dec, cfg);
    CHECK(dec.w1.value == before.w1.value);
    CHECK(dec.b1.value == before.b1.value);
    CHECK(dec.w2.value == before.w2.value);
    CHECK(dec.b2.value == before.b2.value);
    MESSAGE("encoder loss " << res.loss.front() << " -> " << res.loss.back());
    CHECK(res.loss.back() < res.loss.front());
    std::vector<Encoder> trained{res.encoder};
    std::mt19937_64 rng(cfg.seed);
    std::vector<Encoder> untrained{Encoder::random(2, rng)};
    for (const Submap& s : scenes)
      CHECK(encoder_loss(s, dec, trained, 0, cfg.costs) < encoder_loss(s, dec, untrained, 0, cfg.costs));
  }

  SUBCASE("levels train in sequence") {
    std::vector<std::vector<double>> losses;
    const auto enc = train_encoders(scenes, &dec, cfg, &losses);
    CHECK(enc.size() == 2);
    CHECK(losses.size() == 2);
    CHECK(losses[1].size() == 3);
    std::vector<Encoder> partial;
    CHECK_THROWS_AS(train_encoder(scenes, 1, partial, &dec, cfg), Error);
  }
}
