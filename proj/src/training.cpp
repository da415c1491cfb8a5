#include "hsdf/training.hpp"

#include <cmath>

namespace hsdf {

Submap capture_submap(const Scene& scene, const CaptureConfig& capture, const GridConfig& grid, std::uint64_t seed,
                      int threads) {
  const std::vector<SimFrame> frames = capture_orbit(scene, capture, seed, threads);
  if (frames.empty()) throw Error(ErrorCode::EmptyObservations, "capture produced no frames");
  std::vector<Submap> one = split_submaps(frames, int(frames.size()), grid);
  return std::move(one.front());
}

std::vector<Submap> training_scenes(int count, const CaptureConfig& capture, const GridConfig& grid,
                                    std::uint64_t seed, int threads) {
  std::vector<Submap> out;
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(seed + std::uint64_t(i));
    const Scene scene = random_room_scene(rng);
    out.push_back(capture_submap(scene, capture, grid, rng(), threads));
    out.back().id = i;
  }
  return out;
}

// --- decoder --------------------------------------------------------------------------

PretrainResult pretrain_decoder(std::vector<Submap>& scenes, const PretrainConfig& cfg) {
  if (scenes.size() < 2) throw Error(ErrorCode::InsufficientScenes, "decoder pre-training needs at least two scenes");
  const int levels = scenes.front().grid.level_count();
  const int d = scenes.front().grid.feature_dim();
  for (const Submap& s : scenes)
    if (s.grid.level_count() != levels || s.grid.feature_dim() != d)
      throw Error(ErrorCode::ShapeMismatch, "training scenes must share the grid layout");

  std::mt19937_64 rng(cfg.seed);
  PretrainResult res{Decoder::mlp(levels * d, cfg.hidden, rng), {}};
  std::vector<Param*> params = res.decoder.params();
  for (Submap& s : scenes) {
    s.grid.fill_normal(cfg.feature_std, rng);
    for (Param* p : s.grid.feature_params()) params.push_back(p);
  }
  Adam adam(params, {.lr = cfg.lr});

  ObjectiveOptions opt;
  opt.train_decoder = true;
  opt.train_poses = false;
  opt.regularize = false;
  std::vector<std::vector<Param>> twists;
  for (const Submap& s : scenes) twists.emplace_back(s.frames.size(), Param(Tensor::Zero(1, 6)));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.active_levels = epoch < cfg.activation_epoch ? 1 : levels;
    adam.zero_grad();
    Tape tape;
    Var loss = tape.scalar(0.0);
    for (std::size_t s = 0; s < scenes.size(); ++s)
      loss = loss + local_objective(tape, scenes[s], res.decoder, twists[s], cfg.costs, opt).data;
    tape.backward(loss);

    PretrainLog log{epoch, loss.scalar(), opt.active_levels, std::vector<double>(std::size_t(levels), 0.0)};
    for (const Submap& s : scenes)
      for (int l = 0; l < levels; ++l) log.level_grad_norm[std::size_t(l)] += s.grid.level(l).features.grad.norm();
    res.trace.push_back(std::move(log));
    adam.step();
  }
  return res;
}

// --- encoders -------------------------------------------------------------------------

namespace {

struct NoisyPoints {
  std::vector<Vec3> x;
  std::vector<LabeledPoint> labels;
};

NoisyPoints noisy_points(const Submap& s, const EncoderTrainConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> rot(0.0, rad(cfg.rot_noise_deg)), tran(0.0, cfg.trans_noise_m);
  NoisyPoints out;
  for (const Frame& f : s.frames) {
    Twistd e;
    for (int i = 0; i < 3; ++i) e(i) = rot(rng);
    for (int i = 3; i < 6; ++i) e(i) = tran(rng);
    const Posed T = f.pose * se3_exp(e);
    for (const LabeledPoint& p : f.points) {
      const Vec3 y = T * p.x;
      if (!s.grid.contains(y)) continue;
      out.x.push_back(y);
      out.labels.push_back(p);
    }
  }
  return out;
}

Tensor rows_of(const std::vector<Vec3>& x) {
  Tensor t(Index(x.size()), 3);
  for (std::size_t i = 0; i < x.size(); ++i) t.row(Index(i)) = x[i].transpose();
  return t;
}

}  // namespace

double encoder_loss(const Submap& scene, const Decoder& decoder, std::vector<Encoder>& encoders, int level,
                    const CostConfig& cfg) {
  Submap s = scene;
  s.grid.zero_features();
  for (int l = 0; l <= level; ++l) s.grid.level(l).features.value = encoder_init(s, decoder, encoders, l);
  return level_objective(s, decoder, level + 1, cfg);
}

Var encoder_objective(Tape& tape, const MultiresGrid& layout, Decoder& decoder, std::vector<Encoder>& prior,
                      Encoder& encoder, int level, const std::vector<Vec3>& x, const std::vector<LabeledPoint>& labels,
                      const CostConfig& cfg) {
  MultiresGrid grid = layout;
  grid.zero_features();
  std::vector<Var> leaves(std::size_t(grid.level_count()));
  for (int l = 0; l < level; ++l) {
    const LatticeGeometry& g = grid.level(l).geometry;
    const Tensor r = residual_features(x, labels, grid, decoder, l);
    grid.level(l).features.value = prior[std::size_t(l)].apply(voxelize(x, r, g), g.dims);
    leaves[std::size_t(l)] = tape.constant(grid.level(l).features.value);
  }
  const LatticeGeometry& g = grid.level(level).geometry;
  const Tensor r = residual_features(x, labels, grid, decoder, level);
  leaves[std::size_t(level)] = encoder.forward(tape, tape.constant(voxelize(x, r, g)), g.dims, true);
  Var h = decoder.forward(tape, field_features(tape, grid, leaves, tape.constant(rows_of(x)), level + 1), false);
  return data_cost(h, labels, cfg);
}

EncoderTrainResult train_encoder(const std::vector<Submap>& scenes, int level, std::vector<Encoder>& prior,
                                 const Decoder* decoder, const EncoderTrainConfig& cfg) {
  if (!decoder) throw Error(ErrorCode::MissingDecoder, "encoder training needs a pre-trained decoder");
  if (scenes.empty()) throw Error(ErrorCode::InsufficientScenes, "no training scenes");
  if (level < 0 || level >= scenes.front().grid.level_count())
    throw Error(ErrorCode::InvalidArgument, "level out of range");
  if (prior.size() < std::size_t(level))
    throw Error(ErrorCode::MissingEncoderWeights, "coarser encoders must be trained first");

  Decoder dec = *decoder;
  std::mt19937_64 rng(cfg.seed);
  EncoderTrainResult res{Encoder::random(scenes.front().grid.feature_dim(), rng), {}};
  Adam adam(res.encoder.params(), {.lr = cfg.lr});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.zero_grad();
    Tape tape;
    Var loss = tape.scalar(0.0);
    for (const Submap& s : scenes) {
      const NoisyPoints pts = noisy_points(s, cfg, rng);
      if (pts.x.empty()) continue;
      loss = loss + encoder_objective(tape, s.grid, dec, prior, res.encoder, level, pts.x, pts.labels, cfg.costs);
    }
    res.loss.push_back(loss.scalar());
    tape.backward(loss);
    adam.step();
  }
  return res;
}

std::vector<Encoder> train_encoders(const std::vector<Submap>& scenes, const Decoder* decoder,
                                    const EncoderTrainConfig& cfg, std::vector<std::vector<double>>* losses) {
  if (!decoder) throw Error(ErrorCode::MissingDecoder, "encoder training needs a pre-trained decoder");
  if (scenes.empty()) throw Error(ErrorCode::InsufficientScenes, "no training scenes");
  std::vector<Encoder> encoders;
  for (int l = 0; l < scenes.front().grid.level_count(); ++l) {
    EncoderTrainConfig level_cfg = cfg;
    level_cfg.seed = cfg.seed + std::uint64_t(l);
    EncoderTrainResult r = train_encoder(scenes, l, encoders, decoder, level_cfg);
    if (losses) losses->push_back(std::move(r.loss));
    encoders.push_back(std::move(r.encoder));
  }
  return encoders;
}

}  // namespace hsdf
