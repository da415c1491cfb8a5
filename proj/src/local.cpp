#include "hsdf/local.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>

#include "hsdf/io.hpp"

namespace hsdf {

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

Tensor rows_to_tensor(const std::vector<Vec3>& x) {
  Tensor t(Index(x.size()), 3);
  for (std::size_t i = 0; i < x.size(); ++i) t.row(Index(i)) = x[i].transpose();
  return t;
}

Twistd twist_of(const Param& p) { return Twistd(p.value.row(0).transpose()); }

std::vector<Var> feature_leaves(Tape& tape, MultiresGrid& grid, int active, bool trainable) {
  std::vector<Var> leaves;
  for (int l = 0; l < grid.level_count(); ++l)
    leaves.push_back(l < active ? tape.param(grid.level(l).features, trainable) : Var());
  return leaves;
}

}  // namespace

void fold_twist(Posed& pose, const Param& twist) {
  const Twistd e = twist_of(twist);
  if (e.isZero(0.0)) return;
  pose = (pose * se3_exp(e)).orthonormalized();
}

// --- objective ---------------------------------------------------------------------

ObjectiveTerms local_objective(Tape& tape, Submap& submap, Decoder& decoder, std::vector<Param>& twists,
                               const CostConfig& cfg, const ObjectiveOptions& opt) {
  if (twists.size() != submap.frames.size())
    throw Error(ErrorCode::LengthMismatch, "one twist per frame is required");
  if (submap.point_count() == 0) throw Error(ErrorCode::EmptyObservations, "submap has no observations");
  MultiresGrid& grid = submap.grid;
  const int active = opt.active_levels < 0 ? grid.level_count() : opt.active_levels;
  const std::vector<std::size_t> frames =
      opt.frame_subset.empty() ? all_indices(submap.frames.size()) : opt.frame_subset;

  ObjectiveTerms out;
  std::vector<Var> parts;
  std::vector<LabeledPoint> labels;
  out.reg = tape.scalar(0.0);
  for (std::size_t k : frames) {
    const Frame& f = submap.frames.at(k);
    const bool fixed = !opt.train_poses || std::find(opt.fixed_frames.begin(), opt.fixed_frames.end(), k) !=
                                               opt.fixed_frames.end();
    const Posed T = f.pose * se3_exp(twist_of(twists[k]));
    std::vector<Vec3> local, moved;
    auto consider = [&](std::size_t j) {
      const Vec3 y = T * f.points[j].x;
      if (!grid.contains(y)) {
        ++out.skipped;
        return;
      }
      local.push_back(f.points[j].x);
      moved.push_back(y);
      labels.push_back(f.points[j]);
    };
    const std::vector<std::size_t>* rows = opt.point_rows ? &(*opt.point_rows)[k] : nullptr;
    if (rows && !rows->empty()) {
      for (std::size_t j : *rows) consider(j);
    } else {
      for (std::size_t j = 0; j < f.points.size(); ++j) consider(j);
    }
    Var eps;
    if (!fixed) {
      eps = tape.param(twists[k]);
      if (opt.regularize) out.reg = out.reg + trust_region(eps, cfg);
    }
    if (local.empty()) continue;
    out.used += local.size();
    parts.push_back(fixed ? tape.constant(rows_to_tensor(moved))
                          : rigid_transform(eps, f.pose, tape.constant(rows_to_tensor(local))));
  }
  if (parts.empty()) {
    out.data = tape.scalar(0.0);
  } else {
    Var Y = parts.size() == 1 ? parts[0] : concat_rows(parts);
    const auto leaves = feature_leaves(tape, grid, active, opt.train_features);
    Var h = decoder.forward(tape, field_features(tape, grid, leaves, Y, active), opt.train_decoder);
    out.data = data_cost(h, labels, cfg);
  }
  out.total = out.data + out.reg;
  return out;
}

SubmapPoints gather_points(const Submap& submap, bool near_only) {
  SubmapPoints out;
  for (const Frame& f : submap.frames)
    for (const LabeledPoint& p : f.points) {
      if (near_only && !p.is_near()) continue;
      const Vec3 x = f.pose * p.x;
      if (!submap.grid.contains(x)) {
        ++out.skipped;
        continue;
      }
      out.x.push_back(x);
      out.labels.push_back(p);
    }
  return out;
}

double level_objective(const Submap& submap, const Decoder& decoder, int active_levels, const CostConfig& cfg,
                       std::size_t* skipped) {
  const SubmapPoints pts = gather_points(submap, !cfg.use_free_space);
  if (skipped) *skipped = pts.skipped;
  double total = 0.0;
  for (std::size_t i = 0; i < pts.x.size(); ++i)
    total += point_cost(pts.labels[i], eval_field(submap.grid, decoder, pts.x[i], active_levels), cfg);
  return total;
}

// --- closed form -------------------------------------------------------------------

Tensor closed_form_level(const Submap& submap, const Decoder& decoder, int level, ClosedFormStats* stats) {
  if (!decoder.is_linear()) throw Error(ErrorCode::InvalidArgument, "closed-form initialisation needs a linear decoder");
  const MultiresGrid& grid = submap.grid;
  if (level < 0 || level >= grid.level_count()) throw Error(ErrorCode::InvalidArgument, "level out of range");
  const SubmapPoints pts = gather_points(submap, true);
  if (pts.x.empty()) throw Error(ErrorCode::EmptyObservations, "no near-surface observations inside the grid");

  const GridLevel& lv = grid.level(level);
  const int d = grid.feature_dim();
  const Eigen::RowVectorXd theta = decoder.linear_weight().row(0).segment(level * d, d);
  Tensor F = Tensor::Zero(lv.geometry.vertex_count(), d);
  const double theta_sq = theta.squaredNorm();
  if (theta_sq == 0.0) return F;

  // J = K (x) theta^T, so the min-norm solution is F[v] = g[v] theta / |theta|^2
  // with g the min-norm least-squares solution of K g = -r.
  const std::size_t n = pts.x.size();
  std::vector<int> column(std::size_t(lv.geometry.vertex_count()), -1);
  std::vector<Index> vertex_of_column;
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd rhs(static_cast<Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    rhs(Index(j)) = -(eval_field(grid, decoder, pts.x[j], level) - pts.labels[j].y());
    for (const auto& [v, w] : interpolation_row(lv, pts.x[j])) {
      int& c = column[std::size_t(v)];
      if (c < 0) {
        c = int(vertex_of_column.size());
        vertex_of_column.push_back(v);
      }
      triplets.emplace_back(int(j), c, w);
    }
  }
  const Index m = Index(vertex_of_column.size());
  Eigen::SparseMatrix<double> K(Index(n), m);
  K.setFromTriplets(triplets.begin(), triplets.end());

  Eigen::VectorXd g;
  const bool dense = m <= 1200;
  if (dense) {
    const Eigen::MatrixXd A = Eigen::MatrixXd(K.transpose() * K);
    const Eigen::VectorXd b = K.transpose() * rhs;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double cutoff = 1e-10 * lam.cwiseAbs().maxCoeff();
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(m);
    for (Index i = 0; i < m; ++i)
      if (lam(i) > cutoff) inv(i) = 1.0 / lam(i);
    const auto solve = [&](const Eigen::VectorXd& rhs_n) {
      return Eigen::VectorXd(es.eigenvectors() * (inv.asDiagonal() * (es.eigenvectors().transpose() * rhs_n)));
    };
    g = solve(b);
    // one step of corrected semi-normal equations
    const Eigen::VectorXd res = rhs - K * g;
    g += solve(K.transpose() * res);
  } else {
    // CGLS from zero stays in the row space of K, so it heads for the
    // minimum-norm solution; the iteration cap keeps large grids cheap.
    Eigen::LeastSquaresConjugateGradient<Eigen::SparseMatrix<double>, Eigen::IdentityPreconditioner> solver;
    solver.setTolerance(1e-10);
    solver.setMaxIterations(1000);
    solver.compute(K);
    g = solver.solve(rhs);
  }
  for (Index c = 0; c < m; ++c) F.row(vertex_of_column[std::size_t(c)]) = (g(c) / theta_sq) * theta;
  if (stats) *stats = {n, std::size_t(m), dense};
  return F;
}

// --- encoder -------------------------------------------------------------------------

Tensor residual_features(const std::vector<Vec3>& x, const std::vector<LabeledPoint>& labels,
                         const MultiresGrid& grid, const Decoder& decoder, int prior_levels) {
  if (x.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "positions and labels differ in length");
  Tensor r = Tensor::Zero(Index(x.size()), 3);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = eval_field(grid, decoder, x[i], prior_levels);
    const LabeledPoint& p = labels[i];
    if (p.is_near()) {
      r(Index(i), 0) = h - p.y();
    } else {
      r(Index(i), 1) = std::max(h - p.b_hi(), 0.0);
      r(Index(i), 2) = std::max(p.b_lo() - h, 0.0);
    }
  }
  return r;
}

std::vector<Index> nearest_vertices(const LatticeGeometry& g, const std::vector<Vec3>& x) {
  std::vector<Index> out(x.size(), -1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!g.contains(x[i])) continue;
    int ijk[3];
    for (int a = 0; a < 3; ++a) {
      const double u = std::round((x[i](a) - g.origin(a)) / g.cell_size);
      ijk[a] = std::clamp(int(u), 0, g.dims(a) - 1);
    }
    out[i] = g.flat(ijk[0], ijk[1], ijk[2]);
  }
  return out;
}

Tensor voxelize(const std::vector<Vec3>& x, const Tensor& residuals, const LatticeGeometry& g) {
  if (Index(x.size()) != residuals.rows()) throw Error(ErrorCode::LengthMismatch, "voxelize: row mismatch");
  const std::vector<Index> vtx = nearest_vertices(g, x);
  Tensor sum = Tensor::Zero(g.vertex_count(), residuals.cols());
  std::vector<int> count(std::size_t(g.vertex_count()), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (vtx[i] < 0) continue;
    sum.row(vtx[i]) += residuals.row(Index(i));
    ++count[std::size_t(vtx[i])];
  }
  for (Index v = 0; v < g.vertex_count(); ++v)
    if (count[std::size_t(v)] > 0) sum.row(v) /= double(count[std::size_t(v)]);
  return sum;
}

namespace {

Param uniform_param(Index rows, Index cols, Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(rows, cols);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return Param(std::move(t));
}

}  // namespace

Encoder Encoder::random(int feature_dim, std::mt19937_64& rng, bool zero_last_layer) {
  Encoder e;
  e.c1w = uniform_param(6, 27 * 3, 27 * 3, rng);
  e.c1b = uniform_param(1, 6, 27 * 3, rng);
  e.c2w = uniform_param(12, 27 * 6, 27 * 6, rng);
  e.c2b = uniform_param(1, 12, 27 * 6, rng);
  e.m1w = uniform_param(16, 12, 12, rng);
  e.m1b = uniform_param(1, 16, 12, rng);
  e.m2w = uniform_param(feature_dim, 16, 16, rng);
  e.m2b = uniform_param(1, feature_dim, 16, rng);
  if (zero_last_layer) {
    e.m2w.value.setZero();
    e.m2b.value.setZero();
  }
  return e;
}

std::vector<Param*> Encoder::params() { return {&c1w, &c1b, &c2w, &c2b, &m1w, &m1b, &m2w, &m2b}; }

Var Encoder::forward(Tape& tape, Var voxels, const Eigen::Vector3i& dims, bool trainable) {
  Var h = relu(conv3d(voxels, dims, tape.param(c1w, trainable), tape.param(c1b, trainable)));
  h = relu(conv3d(h, dims, tape.param(c2w, trainable), tape.param(c2b, trainable)));
  h = relu(linear(h, tape.param(m1w, trainable), tape.param(m1b, trainable)));
  return linear(h, tape.param(m2w, trainable), tape.param(m2b, trainable));
}

Tensor Encoder::apply(const Tensor& voxels, const Eigen::Vector3i& dims) {
  Tape tape;
  return forward(tape, tape.constant(voxels), dims, false).value();
}

void save_encoders(const std::filesystem::path& path, const std::vector<Encoder>& encoders) {
  BlobWriter w(BlobKind::Encoders);
  w.u32(std::uint32_t(encoders.size()));
  for (const Encoder& e : encoders)
    for (const Param* p : const_cast<Encoder&>(e).params()) w.tensor(p->value);
  w.save(path);
}

std::vector<Encoder> load_encoders(const std::filesystem::path& path) {
  BlobReader r(path, BlobKind::Encoders);
  const std::uint32_t n = r.u32();
  if (n > 64) throw Error(ErrorCode::FormatVersionMismatch, "implausible encoder count");
  std::vector<Encoder> out(n);
  for (Encoder& e : out)
    for (Param* p : e.params()) *p = Param(r.tensor());
  return out;
}

Tensor encoder_init(const Submap& submap, const Decoder& decoder, std::vector<Encoder>& encoders, int level) {
  if (level < 0 || std::size_t(level) >= encoders.size())
    throw Error(ErrorCode::MissingEncoderWeights, "no encoder for level " + std::to_string(level));
  const SubmapPoints pts = gather_points(submap);
  const Tensor r = residual_features(pts.x, pts.labels, submap.grid, decoder, level);
  const LatticeGeometry& g = submap.grid.level(level).geometry;
  Tensor F = encoders[std::size_t(level)].apply(voxelize(pts.x, r, g), g.dims);
  if (F.cols() != submap.grid.feature_dim()) throw Error(ErrorCode::ShapeMismatch, "encoder output dimension");
  return F;
}

std::vector<double> hierarchical_init(Submap& submap, const Decoder& decoder, InitMethod method,
                                      std::vector<Encoder>* encoders, const CostConfig& cfg) {
  submap.grid.zero_features();
  std::vector<double> objective{level_objective(submap, decoder, 0, cfg)};
  for (int l = 0; l < submap.grid.level_count(); ++l) {
    switch (method) {
      case InitMethod::Zero:
        break;
      case InitMethod::ClosedForm:
        submap.grid.level(l).features.value = closed_form_level(submap, decoder, l);
        break;
      case InitMethod::Encoder:
        if (!encoders) throw Error(ErrorCode::MissingEncoderWeights, "encoder initialisation without encoders");
        submap.grid.level(l).features.value = encoder_init(submap, decoder, *encoders, l);
        break;
    }
    objective.push_back(level_objective(submap, decoder, l + 1, cfg));
  }
  return objective;
}

// --- local SLAM ------------------------------------------------------------------------

LocalSlamResult local_slam(Submap& submap, Decoder& decoder, const LocalSlamConfig& cfg) {
  const std::size_t n = submap.frames.size();
  if (n == 0 || submap.point_count() == 0) throw Error(ErrorCode::EmptyObservations, "submap has no observations");
  std::vector<Param> twists(n, Param(Tensor::Zero(1, 6)));
  std::vector<Param*> pose_params;
  for (std::size_t k = 0; k < n; ++k)
    if (!(cfg.fix_first_pose && k == 0)) pose_params.push_back(&twists[k]);
  Adam feat_opt(submap.grid.feature_params(), {.lr = cfg.lr});
  Adam pose_opt(pose_params, {.lr = cfg.pose_lr});

  ObjectiveOptions opt;
  opt.train_poses = !cfg.freeze_poses;
  opt.regularize = !cfg.freeze_poses;
  if (cfg.fix_first_pose) opt.fixed_frames = {0};

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<std::size_t>> rows(n);
  LocalSlamResult res;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.frame_subset.clear();
    if (cfg.frames_per_epoch > 0 && std::size_t(cfg.frames_per_epoch) < n) {
      std::vector<std::size_t> idx = all_indices(n);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(std::size_t(cfg.frames_per_epoch));
      std::sort(idx.begin(), idx.end());
      opt.frame_subset = idx;
    }
    opt.point_rows = nullptr;
    if (cfg.point_fraction < 1.0) {
      std::bernoulli_distribution keep(std::max(cfg.point_fraction, 1e-6));
      for (std::size_t k = 0; k < n; ++k) {
        rows[k].clear();
        for (std::size_t j = 0; j < submap.frames[k].points.size(); ++j)
          if (keep(rng)) rows[k].push_back(j);
        if (rows[k].empty() && !submap.frames[k].points.empty()) rows[k].push_back(0);
      }
      opt.point_rows = &rows;
    }
    feat_opt.zero_grad();
    pose_opt.zero_grad();
    Tape tape;
    ObjectiveTerms terms = local_objective(tape, submap, decoder, twists, cfg.costs, opt);
    res.trace.push_back({epoch, terms.data.scalar(), terms.reg.scalar(), terms.skipped});
    tape.backward(terms.total);
    feat_opt.step();
    if (!cfg.freeze_poses) pose_opt.step();
  }
  for (std::size_t k = 0; k < n; ++k) {
    Frame& f = submap.frames[k];
    fold_twist(f.pose, twists[k]);
    res.poses.push_back(f.pose);
  }
  return res;
}

std::string trace_csv(const std::vector<EpochLog>& trace) {
  std::string out = "epoch,data_cost,reg_cost,skipped_points\n";
  for (const EpochLog& e : trace)
    out += std::to_string(e.epoch) + "," + format_double(e.data_cost) + "," + format_double(e.reg_cost) + "," +
           std::to_string(e.skipped) + "\n";
  return out;
}

// --- incremental mode ---------------------------------------------------------------------

std::vector<LabeledPoint> voxel_downsample(const std::vector<LabeledPoint>& points, double voxel) {
  if (!(voxel > 0)) throw Error(ErrorCode::InvalidArgument, "voxel size must be positive");
  std::map<std::array<std::int64_t, 3>, std::size_t> slot;
  std::vector<LabeledPoint> out;
  std::vector<Vec3> sum;
  std::vector<int> count;
  for (const LabeledPoint& p : points) {
    const std::array<std::int64_t, 3> key{std::int64_t(std::floor(p.x.x() / voxel)),
                                          std::int64_t(std::floor(p.x.y() / voxel)),
                                          std::int64_t(std::floor(p.x.z() / voxel))};
    auto [it, inserted] = slot.emplace(key, out.size());
    if (inserted) {
      out.push_back(p);
      sum.push_back(p.x);
      count.push_back(1);
    } else {
      sum[it->second] += p.x;
      ++count[it->second];
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].x = sum[i] / double(count[i]);
  return out;
}

Posed track_frame(const Submap& submap, Decoder& decoder, const Frame& frame, const Posed& initial,
                  const TrackConfig& cfg) {
  std::vector<LabeledPoint> surface;
  for (const LabeledPoint& p : frame.points)
    if (p.on_surface) surface.push_back(p);
  surface = voxel_downsample(surface, cfg.voxel);
  if (surface.size() < cfg.min_points)
    throw Error(ErrorCode::TooFewPoints, std::to_string(surface.size()) + " surface points after downsampling");
  const MultiresGrid& grid = submap.grid;
  const int L = grid.level_count();

  Param eps(Tensor::Zero(1, 6));
  Adam opt({&eps}, {.lr = cfg.lr});
  for (int it = 0; it < cfg.iters; ++it) {
    const Posed T = initial * se3_exp(twist_of(eps));
    std::vector<Vec3> local;
    std::vector<double> target;
    for (const LabeledPoint& p : surface)
      if (grid.contains(T * p.x)) {
        local.push_back(p.x);
        target.push_back(-p.y());
      }
    if (local.empty()) break;
    opt.zero_grad();
    Tape tape;
    Var e = tape.param(eps);
    Var Y = rigid_transform(e, initial, tape.constant(rows_to_tensor(local)));
    std::vector<Var> leaves;
    for (int l = 0; l < L; ++l) leaves.push_back(tape.constant(grid.level(l).features.value));
    Var h = decoder.forward(tape, field_features(tape, grid, leaves, Y, L), false);
    Tensor t(Index(target.size()), 1);
    for (std::size_t i = 0; i < target.size(); ++i) t(Index(i), 0) = target[i];
    tape.backward(sum(geman_mcclure(add(h, t), cfg.gm_sigma)));
    opt.step();
  }
  return (initial * se3_exp(twist_of(eps))).orthonormalized();
}

std::vector<std::size_t> map_update_frames(std::size_t frame_count) {
  if (frame_count == 0) return {};
  const std::size_t latest = frame_count - 1;
  std::vector<std::size_t> out;
  if (latest >= 1) {
    const double last_hist = double(latest - 1);
    for (int i = 0; i < 10; ++i) {
      const auto idx = std::size_t(std::llround(i * last_hist / 9.0));
      if (out.empty() || out.back() != idx) out.push_back(idx);
    }
  }
  out.push_back(latest);
  return out;
}

namespace {

std::vector<double> map_update_prefix(Submap& submap, Decoder& decoder, const MapUpdateConfig& cfg,
                                      std::size_t frame_count) {
  std::vector<Vec3> xs;
  std::vector<LabeledPoint> labels;
  for (std::size_t k : map_update_frames(frame_count)) {
    const Frame& f = submap.frames[k];
    for (const LabeledPoint& p : voxel_downsample(f.points, cfg.voxel)) {
      const Vec3 x = f.pose * p.x;
      if (!submap.grid.contains(x)) continue;
      xs.push_back(x);
      labels.push_back(p);
    }
  }
  std::vector<double> losses;
  if (xs.empty()) return losses;
  const Tensor P = rows_to_tensor(xs);
  const int L = submap.grid.level_count();
  Adam opt(submap.grid.feature_params(), {.lr = cfg.lr});
  for (int it = 0; it < cfg.iters; ++it) {
    opt.zero_grad();
    Tape tape;
    const auto leaves = feature_leaves(tape, submap.grid, L, true);
    Var h = decoder.forward(tape, field_features(tape, submap.grid, leaves, tape.constant(P), L), false);
    Var loss = data_cost(h, labels, cfg.costs);
    losses.push_back(loss.scalar());
    tape.backward(loss);
    opt.step();
  }
  return losses;
}

}  // namespace

std::vector<double> map_update(Submap& submap, Decoder& decoder, const MapUpdateConfig& cfg) {
  return map_update_prefix(submap, decoder, cfg, submap.frames.size());
}

std::vector<Posed> incremental_slam(Submap& submap, Decoder& decoder, const IncrementalConfig& cfg) {
  const std::size_t n = submap.frames.size();
  std::vector<Posed> est;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0) {
      Posed init = est[k - 1];
      if (cfg.constant_velocity && k >= 2) init = est[k - 1] * (est[k - 2].inverse() * est[k - 1]);
      submap.frames[k].pose = track_frame(submap, decoder, submap.frames[k], init, cfg.track);
    }
    est.push_back(submap.frames[k].pose);
    map_update_prefix(submap, decoder, cfg.map, k + 1);
  }
  return est;
}

}  // namespace hsdf
