#pragma once

#include <cstdint>
#include <vector>

#include "hsdf/local.hpp"

namespace hsdf {

/// One ground-truth-posed training submap per scene, all frames in one grid.
Submap capture_submap(const Scene& scene, const CaptureConfig& capture, const GridConfig& grid, std::uint64_t seed,
                      int threads = 1);

/// `count` random rooms captured with `capture`; scene i uses seed + i.
std::vector<Submap> training_scenes(int count, const CaptureConfig& capture, const GridConfig& grid,
                                    std::uint64_t seed, int threads = 1);

// --- decoder --------------------------------------------------------------------------

struct PretrainConfig {
  int epochs = 1200;
  /// Epoch at which all finer levels join the coarsest one.
  int activation_epoch = 200;
  double lr = 1e-3;
  int hidden = 64;
  /// Initial feature noise of every scene grid.
  double feature_std = 1e-2;
  std::uint64_t seed = 0;
  CostConfig costs;
};

struct PretrainLog {
  int epoch = 0;
  double loss = 0.0;
  int active_levels = 0;
  /// Gradient norm per level summed over scenes.
  std::vector<double> level_grad_norm;
};

struct PretrainResult {
  Decoder decoder;
  std::vector<PretrainLog> trace;
};

/// Joint Adam over every scene's features and one shared decoder, with poses
/// held at their ground truth. Scene features are overwritten.
PretrainResult pretrain_decoder(std::vector<Submap>& scenes, const PretrainConfig& cfg);

// --- encoders -------------------------------------------------------------------------

struct EncoderTrainConfig {
  int epochs = 1000;
  double lr = 1e-3;
  /// Per-axis standard deviations of the simulated pose noise.
  double rot_noise_deg = 1.0;
  double trans_noise_m = 0.01;
  std::uint64_t seed = 0;
  CostConfig costs;
};

struct EncoderTrainResult {
  Encoder encoder;
  std::vector<double> loss;
};

/// Level objective of one scene after initialising levels 0..level with the
/// encoders, at the scene's current frame poses.
double encoder_loss(const Submap& scene, const Decoder& decoder, std::vector<Encoder>& encoders, int level,
                    const CostConfig& cfg);

/// Data cost of points x (submap frame) when levels below `level` come from
/// the frozen `prior` encoders and `level` from `encoder` on the tape; finer
/// levels are zero. The grid supplies only the layout.
Var encoder_objective(Tape& tape, const MultiresGrid& layout, Decoder& decoder, std::vector<Encoder>& prior,
                      Encoder& encoder, int level, const std::vector<Vec3>& x, const std::vector<LabeledPoint>& labels,
                      const CostConfig& cfg);

/// Trains the encoder of `level` with the decoder and the encoders of coarser
/// levels frozen. Frame poses are perturbed afresh for every scene and epoch.
EncoderTrainResult train_encoder(const std::vector<Submap>& scenes, int level, std::vector<Encoder>& prior,
                                 const Decoder* decoder, const EncoderTrainConfig& cfg);

/// Sequential coarse-to-fine training of one encoder per level.
std::vector<Encoder> train_encoders(const std::vector<Submap>& scenes, const Decoder* decoder,
                                    const EncoderTrainConfig& cfg, std::vector<std::vector<double>>* losses = nullptr);

}  // namespace hsdf
