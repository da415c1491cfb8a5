#include "hsdf/global.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "hsdf/io.hpp"

namespace hsdf {

namespace {

Tensor rows_of(const std::vector<Vec3>& x) {
  Tensor t(Index(x.size()), 3);
  for (std::size_t i = 0; i < x.size(); ++i) t.row(Index(i)) = x[i].transpose();
  return t;
}

Twistd twist_value(const PoseVar& p) {
  return p.eps.valid() ? Twistd(p.eps.value().row(0).transpose()) : Twistd::Zero();
}

Posed current(const PoseVar& p) { return p.estimate * se3_exp(twist_value(p)); }

/// T_v^-1 T_u, exactly the identity for bitwise equal poses.
Posed relative(const Posed& Tv, const Posed& Tu) {
  if (Tv.rotation == Tu.rotation && Tv.translation == Tu.translation) return Posed::Identity();
  return Tv.inverse() * Tu;
}

Var eps_or_zero(Tape& tape, const PoseVar& p) { return p.eps.valid() ? p.eps : tape.constant(Tensor::Zero(1, 6)); }

/// Points of u (N x 3, submap frame) expressed in v's frame on the tape:
/// Exp(-eps_v) T_hat_v^-1 T_hat_u Exp(eps_u) x.
Var to_v_frame(Tape& tape, const PoseVar& pu, const PoseVar& pv, const Tensor& x) {
  Var a = rigid_transform(eps_or_zero(tape, pu), relative(pv.estimate, pu.estimate), tape.constant(x));
  return pv.eps.valid() ? rigid_transform(pv.eps, Posed::Identity(), a, -1.0) : a;
}

std::vector<Var> constant_leaves(Tape& tape, const MultiresGrid& grid) {
  std::vector<Var> leaves;
  for (const GridLevel& lv : grid.levels()) leaves.push_back(tape.constant(lv.features.value));
  return leaves;
}

/// Rows of `x` (u frame) whose image in v's frame falls inside v's domain.
std::vector<Index> rows_inside(const Submap& v, const Posed& u_to_v, const std::vector<Vec3>& x) {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (v.grid.contains(u_to_v * x[i])) rows.push_back(Index(i));
  return rows;
}

std::vector<Vec3> pick(const std::vector<Vec3>& x, const std::vector<Index>& rows) {
  std::vector<Vec3> out;
  out.reserve(rows.size());
  for (Index r : rows) out.push_back(x[std::size_t(r)]);
  return out;
}

Var feature_distance(Var a, Var b, FeatureDistance dist) {
  switch (dist) {
    case FeatureDistance::L2Squared:
      return sum(square(a - b));
    case FeatureDistance::L1:
      return sum(abs(a - b));
    case FeatureDistance::NegCosine: {
      Var dot = row_sum(a * b);
      Var na = sqrt(row_sum(square(a)) + 1e-12), nb = sqrt(row_sum(square(b)) + 1e-12);
      return -sum(div(dot, na * nb));
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown feature distance");
}

}  // namespace

std::vector<Posed> SubmapGraph::base_poses() const {
  std::vector<Posed> out;
  for (const Submap& s : submaps) out.push_back(s.base_pose);
  return out;
}

void SubmapGraph::set_base_poses(const std::vector<Posed>& poses) {
  if (poses.size() != submaps.size()) throw Error(ErrorCode::LengthMismatch, "one pose per submap is required");
  for (std::size_t i = 0; i < poses.size(); ++i) submaps[i].base_pose = poses[i];
}

std::pair<Vec3, Vec3> world_box(const Submap& s, const Posed& pose) {
  const Vec3 lo = s.grid.lower(), hi = s.grid.upper();
  Vec3 wlo = Vec3::Constant(std::numeric_limits<double>::infinity()), whi = -wlo;
  for (int c = 0; c < 8; ++c) {
    const Vec3 corner((c & 1) ? hi.x() : lo.x(), (c & 2) ? hi.y() : lo.y(), (c & 4) ? hi.z() : lo.z());
    const Vec3 w = pose * corner;
    wlo = wlo.cwiseMin(w);
    whi = whi.cwiseMax(w);
  }
  return {wlo, whi};
}

std::vector<Edge> build_edges(const std::vector<Submap>& submaps, const std::vector<Posed>& poses) {
  if (poses.size() != submaps.size()) throw Error(ErrorCode::LengthMismatch, "one pose per submap is required");
  std::vector<std::pair<Vec3, Vec3>> boxes;
  for (std::size_t i = 0; i < submaps.size(); ++i) boxes.push_back(world_box(submaps[i], poses[i]));
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < boxes.size(); ++u)
    for (std::size_t v = u + 1; v < boxes.size(); ++v) {
      const Vec3 lo = boxes[u].first.cwiseMax(boxes[v].first);
      const Vec3 hi = boxes[u].second.cwiseMin(boxes[v].second);
      if ((hi - lo).minCoeff() > 0.0) edges.emplace_back(int(u), int(v));
    }
  return edges;
}

bool is_connected(std::size_t submap_count, const std::vector<Edge>& edges) {
  if (submap_count == 0) return true;
  std::vector<std::size_t> parent(submap_count);
  std::iota(parent.begin(), parent.end(), std::size_t(0));
  auto root = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (const auto& [u, v] : edges) parent[root(std::size_t(u))] = root(std::size_t(v));
  for (std::size_t i = 1; i < submap_count; ++i)
    if (root(i) != root(0)) return false;
  return true;
}

std::vector<Index> overlap_vertices(const Submap& u, const Submap& v, int level, const Posed& pose_u,
                                    const Posed& pose_v) {
  const LatticeGeometry& g = u.grid.level(level).geometry;
  const Posed u_to_v = relative(pose_v, pose_u);
  std::vector<Index> out;
  for (Index i = 0; i < g.vertex_count(); ++i) {
    const Vec3 z = g.vertex(i);
    if (u.grid.contains(z) && v.grid.contains(u_to_v * z)) out.push_back(i);
  }
  return out;
}

Tensor vertex_features(const Submap& u, int level) {
  const LatticeGeometry& g = u.grid.level(level).geometry;
  Tensor f = Tensor::Zero(g.vertex_count(), u.grid.level_count() * u.grid.feature_dim());
  for (Index i = 0; i < g.vertex_count(); ++i)
    if (u.grid.contains(g.vertex(i))) f.row(i) = grid_features(u.grid, g.vertex(i), level + 1);
  return f;
}

AlignTerm feature_align_cost(Tape& tape, const Submap& u, const Submap& v, int level, const PoseVar& pose_u,
                             const PoseVar& pose_v, FeatureDistance dist, const Tensor* u_features) {
  AlignTerm out;
  const Posed Tu = current(pose_u), Tv = current(pose_v);
  const LatticeGeometry& g = u.grid.level(level).geometry;
  const std::vector<Index> ids = overlap_vertices(u, v, level, Tu, Tv);
  out.used = ids.size();
  if (ids.empty()) {
    out.cost = tape.scalar(0.0);
    return out;
  }
  std::vector<Vec3> z;
  z.reserve(ids.size());
  for (Index i : ids) z.push_back(g.vertex(i));
  const int width = u.grid.level_count() * u.grid.feature_dim();
  Tensor fu(Index(z.size()), width);
  for (std::size_t i = 0; i < z.size(); ++i)
    fu.row(Index(i)) = u_features ? Eigen::RowVectorXd(u_features->row(ids[i]))
                                  : grid_features(u.grid, z[i], level + 1);
  Var q = to_v_frame(tape, pose_u, pose_v, rows_of(z));
  const auto leaves = constant_leaves(tape, v.grid);
  Var fv = field_features(tape, v.grid, leaves, q, level + 1);
  out.cost = feature_distance(tape.constant(fu), fv, dist);
  return out;
}

std::vector<Vec3> sdf_align_points(const Submap& u, const Submap& v, const Posed& pose_u, const Posed& pose_v,
                                   double voxel) {
  const Posed u_to_v = relative(pose_v, pose_u);
  std::vector<LabeledPoint> inside;
  for (const Frame& f : u.frames)
    for (const LabeledPoint& p : f.points) {
      if (!p.is_near()) continue;
      LabeledPoint q = p;
      q.x = f.pose * p.x;
      if (u.grid.contains(q.x) && v.grid.contains(u_to_v * q.x)) inside.push_back(q);
    }
  std::vector<Vec3> out;
  if (inside.empty()) return out;
  for (const LabeledPoint& p : voxel_downsample(inside, voxel))
    if (u.grid.contains(p.x)) out.push_back(p.x);
  return out;
}

AlignTerm sdf_align_cost(Tape& tape, const Submap& u, const Submap& v, const Decoder& decoder,
                         const std::vector<Vec3>& points, const PoseVar& pose_u, const PoseVar& pose_v) {
  AlignTerm out;
  const std::vector<Index> rows = rows_inside(v, relative(current(pose_v), current(pose_u)), points);
  out.used = rows.size();
  out.skipped = points.size() - rows.size();
  if (rows.empty()) {
    out.cost = tape.scalar(0.0);
    return out;
  }
  const std::vector<Vec3> x = pick(points, rows);
  Tensor hu(Index(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) hu(Index(i), 0) = eval_field(u.grid, decoder, x[i]);
  Decoder dec = decoder;
  Var q = to_v_frame(tape, pose_u, pose_v, rows_of(x));
  const auto leaves = constant_leaves(tape, v.grid);
  Var hv = dec.forward(tape, field_features(tape, v.grid, leaves, q, v.grid.level_count()), false);
  out.cost = sum(square(add(-hv, hu)));
  return out;
}

std::pair<std::vector<double>, std::vector<double>> base_pose_errors(const SubmapGraph& graph) {
  std::vector<double> rot, tran;
  if (graph.submaps.empty()) return {rot, tran};
  const Posed gauge = graph.submaps[0].gt_base_pose * graph.submaps[0].base_pose.inverse();
  for (const Submap& s : graph.submaps) {
    const Posed est = gauge * s.base_pose;
    rot.push_back(deg(rotation_angle(Mat3(est.rotation.transpose() * s.gt_base_pose.rotation))));
    tran.push_back((est.translation - s.gt_base_pose.translation).norm());
  }
  return {rot, tran};
}

AlignResult align_submaps(SubmapGraph& graph, const Decoder& decoder, const AlignSchedule& schedule) {
  const std::size_t n = graph.submaps.size();
  if (n == 0) throw Error(ErrorCode::EmptyGraph, "no submaps to align");
  for (int k : schedule.k_f)
    if (k < 0) throw Error(ErrorCode::BadConfig, "negative iteration count");
  if (schedule.k_s < 0) throw Error(ErrorCode::BadConfig, "negative iteration count");
  const int levels = graph.submaps.front().grid.level_count();
  CostConfig rho;
  rho.w_rho = schedule.w_rho;
  rho.tau = schedule.tau;

  AlignResult res;
  auto run_stage = [&](const std::string& name, int iters, auto&& edge_cost) {
    if (iters <= 0) return;
    graph.edges = build_edges(graph.submaps, graph.base_poses());
    std::vector<Param> twists(n, Param(Tensor::Zero(1, 6)));
    std::vector<Param*> free;
    for (std::size_t u = 1; u < n; ++u) free.push_back(&twists[u]);
    Adam adam(free, {.lr = schedule.lr});
    for (int it = 0; it < iters; ++it) {
      adam.zero_grad();
      Tape tape;
      std::vector<PoseVar> pv(n);
      Var objective = tape.scalar(0.0);
      for (std::size_t u = 0; u < n; ++u) {
        pv[u].estimate = graph.submaps[u].base_pose;
        if (u > 0) {
          pv[u].eps = tape.param(twists[u]);
          objective = objective + trust_region(pv[u].eps, rho);
        }
      }
      for (std::size_t e = 0; e < graph.edges.size(); ++e) objective = objective + edge_cost(tape, e, pv);

      AlignLog log{name, it, objective.scalar(), {}, {}};
      {
        SubmapGraph view;
        for (std::size_t u = 0; u < n; ++u) {
          Submap shell;
          shell.base_pose = current(pv[u]);
          shell.gt_base_pose = graph.submaps[u].gt_base_pose;
          view.submaps.push_back(std::move(shell));
        }
        std::tie(log.rot_err_deg, log.tran_err_m) = base_pose_errors(view);
      }
      res.trace.push_back(std::move(log));
      tape.backward(objective);
      adam.step();
    }
    for (std::size_t u = 1; u < n; ++u) fold_twist(graph.submaps[u].base_pose, twists[u]);
  };

  for (int l = 0; l < levels; ++l) {
    const bool enabled = std::size_t(l) >= schedule.level_enabled.size() || schedule.level_enabled[std::size_t(l)];
    const int iters = std::size_t(l) < schedule.k_f.size() ? schedule.k_f[std::size_t(l)] : 0;
    if (!enabled) continue;
    std::vector<std::optional<Tensor>> cache(n);
    run_stage("feature_l" + std::to_string(l), iters, [&](Tape& tape, std::size_t e, const std::vector<PoseVar>& pv) {
      const auto [u, v] = graph.edges[e];
      std::optional<Tensor>& fu = cache[std::size_t(u)];
      if (!fu) fu = vertex_features(graph.submaps[std::size_t(u)], l);
      return feature_align_cost(tape, graph.submaps[std::size_t(u)], graph.submaps[std::size_t(v)], l,
                                pv[std::size_t(u)], pv[std::size_t(v)], schedule.distance, &*fu)
          .cost;
    });
  }

  if (schedule.k_s > 0) {
    const double voxel = graph.submaps.front().grid.level(levels - 1).geometry.cell_size;
    std::vector<std::vector<Vec3>> points;
    const auto edges = build_edges(graph.submaps, graph.base_poses());
    for (const auto& [u, v] : edges)
      points.push_back(sdf_align_points(graph.submaps[std::size_t(u)], graph.submaps[std::size_t(v)],
                                        graph.submaps[std::size_t(u)].base_pose,
                                        graph.submaps[std::size_t(v)].base_pose, voxel));
    run_stage("sdf", schedule.k_s, [&](Tape& tape, std::size_t e, const std::vector<PoseVar>& pv) {
      const auto [u, v] = graph.edges[e];
      return sdf_align_cost(tape, graph.submaps[std::size_t(u)], graph.submaps[std::size_t(v)], decoder, points[e],
                            pv[std::size_t(u)], pv[std::size_t(v)])
          .cost;
    });
  }
  res.poses = graph.base_poses();
  return res;
}

std::string align_report_csv(const std::vector<AlignLog>& trace) {
  std::ostringstream os;
  os << "stage,iteration,objective,submap,rot_err_deg,tran_err_m\n";
  for (const AlignLog& log : trace)
    for (std::size_t u = 0; u < log.rot_err_deg.size(); ++u)
      os << log.stage << ',' << log.iteration << ',' << format_double(log.objective) << ',' << u << ','
         << format_double(log.rot_err_deg[u]) << ',' << format_double(log.tran_err_m[u]) << '\n';
  return os.str();
}

int coverage(const SubmapGraph& graph, const Vec3& x_w) {
  int c = 0;
  for (const Submap& s : graph.submaps) c += s.grid.contains(s.base_pose.inverse() * x_w) ? 1 : 0;
  return c;
}

double fuse_query(const SubmapGraph& graph, const Decoder& decoder, const Vec3& x_w) {
  Eigen::RowVectorXd f;
  double weight = 0.0;
  for (const Submap& s : graph.submaps) {
    const Vec3 x = s.base_pose.inverse() * x_w;
    if (!s.grid.contains(x)) continue;
    const Eigen::RowVectorXd fu = grid_features(s.grid, x, s.grid.level_count());
    if (weight == 0.0) {
      f = fu;
    } else {
      f += fu;
    }
    weight += 1.0;
  }
  if (weight == 0.0) {
    std::ostringstream os;
    os << "no submap covers (" << x_w.transpose() << ")";
    throw Error(ErrorCode::Uncovered, os.str());
  }
  return decoder.evaluate(f / weight);
}

ObjectiveTerms global_objective(Tape& tape, SubmapGraph& graph, Decoder& decoder, std::vector<Param>& base_twists,
                                std::vector<std::vector<Param>>& frame_twists, const CostConfig& cfg,
                                bool train_features) {
  const std::size_t n = graph.submaps.size();
  if (n == 0) throw Error(ErrorCode::EmptyGraph, "no submaps");
  if (base_twists.size() != n || frame_twists.size() != n)
    throw Error(ErrorCode::LengthMismatch, "one twist set per submap is required");

  ObjectiveTerms out;
  out.reg = tape.scalar(0.0);
  std::vector<PoseVar> base(n);
  std::vector<std::vector<Var>> leaves(n);
  for (std::size_t u = 0; u < n; ++u) {
    base[u].estimate = graph.submaps[u].base_pose;
    if (u > 0) {
      base[u].eps = tape.param(base_twists[u]);
      out.reg = out.reg + trust_region(base[u].eps, cfg);
    }
    for (GridLevel& lv : graph.submaps[u].grid.levels()) leaves[u].push_back(tape.param(lv.features, train_features));
  }

  // world positions of every observation
  std::vector<Var> world_parts;
  std::vector<Vec3> world;
  std::vector<LabeledPoint> labels;
  for (std::size_t u = 0; u < n; ++u) {
    Submap& s = graph.submaps[u];
    if (frame_twists[u].size() != s.frames.size()) throw Error(ErrorCode::LengthMismatch, "one twist per frame");
    for (std::size_t k = 0; k < s.frames.size(); ++k) {
      const Frame& f = s.frames[k];
      if (f.points.empty()) continue;
      Var ek;
      if (k > 0) {
        ek = tape.param(frame_twists[u][k]);
        out.reg = out.reg + trust_region(ek, cfg);
      } else {
        ek = tape.constant(Tensor::Zero(1, 6));
      }
      Tensor x(Index(f.points.size()), 3);
      for (std::size_t j = 0; j < f.points.size(); ++j) x.row(Index(j)) = f.points[j].x.transpose();
      Var a = rigid_transform(ek, f.pose, tape.constant(x));
      Var w = rigid_transform(eps_or_zero(tape, base[u]), base[u].estimate, a);
      world_parts.push_back(w);
      for (std::size_t j = 0; j < f.points.size(); ++j) {
        world.push_back(w.value().row(Index(j)).transpose());
        labels.push_back(f.points[j]);
      }
    }
  }
  if (world.empty()) throw Error(ErrorCode::EmptyObservations, "graph has no observations");
  Var W = world_parts.size() == 1 ? world_parts[0] : concat_rows(world_parts);

  // coverage-weighted mean of submap features at the covered observations
  const std::size_t m = world.size();
  std::vector<int> count(m, 0);
  std::vector<std::vector<Index>> rows_in(n);
  for (std::size_t u = 0; u < n; ++u) {
    const Posed inv = current(base[u]).inverse();
    for (std::size_t i = 0; i < m; ++i)
      if (graph.submaps[u].grid.contains(inv * world[i])) {
        rows_in[u].push_back(Index(i));
        ++count[i];
      }
  }
  std::vector<Index> covered, compact(m, -1);
  for (std::size_t i = 0; i < m; ++i)
    if (count[i] > 0) {
      compact[i] = Index(covered.size());
      covered.push_back(Index(i));
    }
  out.skipped = m - covered.size();
  out.used = covered.size();
  if (covered.empty()) {
    out.data = tape.scalar(0.0);
    out.total = out.data + out.reg;
    return out;
  }
  const MultiresGrid& g0 = graph.submaps.front().grid;
  const Index width = Index(g0.level_count() * g0.feature_dim());
  Var acc;
  for (std::size_t u = 0; u < n; ++u) {
    if (rows_in[u].empty()) continue;
    Var q = gather_rows(W, rows_in[u]);
    // Exp(-eps_u) T_hat_u^-1 y
    q = rigid_transform(tape.constant(Tensor::Zero(1, 6)), base[u].estimate.inverse(), q);
    if (base[u].eps.valid()) q = rigid_transform(base[u].eps, Posed::Identity(), q, -1.0);
    Var f = field_features(tape, graph.submaps[u].grid, leaves[u], q, graph.submaps[u].grid.level_count());
    std::vector<Index> dest;
    for (Index r : rows_in[u]) dest.push_back(compact[std::size_t(r)]);
    Var placed = scatter_rows(f, dest, Index(covered.size()));
    acc = acc.valid() ? acc + placed : placed;
  }
  Tensor inv_count(Index(covered.size()), width);
  std::vector<LabeledPoint> used_labels;
  for (std::size_t c = 0; c < covered.size(); ++c) {
    inv_count.row(Index(c)).setConstant(1.0 / double(count[std::size_t(covered[c])]));
    used_labels.push_back(labels[std::size_t(covered[c])]);
  }
  Var h = decoder.forward(tape, mul(acc, inv_count), false);
  out.data = data_cost(h, used_labels, cfg);
  out.total = out.data + out.reg;
  return out;
}

GlobalBaResult global_ba(SubmapGraph& graph, Decoder& decoder, const GlobalBaConfig& cfg) {
  const std::size_t n = graph.submaps.size();
  if (n == 0) throw Error(ErrorCode::EmptyGraph, "no submaps");
  std::vector<Param> base(n, Param(Tensor::Zero(1, 6)));
  std::vector<std::vector<Param>> frames(n);
  std::vector<Param*> feature_params, pose_params;
  for (std::size_t u = 0; u < n; ++u) {
    Submap& s = graph.submaps[u];
    frames[u].assign(s.frames.size(), Param(Tensor::Zero(1, 6)));
    for (Param* p : s.grid.feature_params()) feature_params.push_back(p);
    if (u > 0) pose_params.push_back(&base[u]);
    for (std::size_t k = 1; k < frames[u].size(); ++k) pose_params.push_back(&frames[u][k]);
  }
  Adam feat(feature_params, {.lr = cfg.lr});
  Adam pose(pose_params, {.lr = cfg.pose_lr});
  GlobalBaResult res;
  for (int it = 0; it < cfg.iters; ++it) {
    feat.zero_grad();
    pose.zero_grad();
    Tape tape;
    ObjectiveTerms t = global_objective(tape, graph, decoder, base, frames, cfg.costs);
    res.loss.push_back(t.data.scalar());
    res.skipped = t.skipped;
    tape.backward(t.total);
    feat.step();
    pose.step();
  }
  for (std::size_t u = 0; u < n; ++u) {
    Submap& s = graph.submaps[u];
    fold_twist(s.base_pose, base[u]);
    for (std::size_t k = 0; k < s.frames.size(); ++k) fold_twist(s.frames[k].pose, frames[u][k]);
  }
  return res;
}

}  // namespace hsdf
