#include "hsdf/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "hsdf/config.hpp"
#include "hsdf/eval.hpp"
#include "hsdf/io.hpp"

namespace fs = std::filesystem;

namespace hsdf {

namespace {

std::string pose_str(const Posed& T) {
  std::string out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out += format_double(T.rotation(r, c)) + " ";
  for (int a = 0; a < 3; ++a) out += format_double(T.translation(a)) + (a < 2 ? " " : "");
  return out;
}

Posed parse_pose(const std::string& key, const std::string& text) {
  const std::vector<double> v = parse_numbers(text, key);
  if (v.size() != 12) throw Error(ErrorCode::BadConfig, key + " needs 12 numbers");
  Posed T;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) T.rotation(r, c) = v[std::size_t(3 * r + c)];
  T.translation = Vec3(v[9], v[10], v[11]);
  return T;
}

std::string vec_str(const Vec3& v) {
  return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
}

Vec3 parse_vec(const std::string& key, const std::string& text) {
  const std::vector<double> v = parse_numbers(text, key);
  if (v.size() != 3) throw Error(ErrorCode::BadConfig, key + " needs 3 numbers");
  return Vec3(v[0], v[1], v[2]);
}

std::string frame_file(int index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index << ".ply";
  return os.str();
}

std::string submap_name(std::size_t i) {
  std::ostringstream os;
  os << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

// --- directories ------------------------------------------------------------------

void save_submap_dir(const fs::path& dir, const Submap& s, const Decoder* decoder) {
  Config c;
  c.add("id", std::to_string(s.id));
  c.add("base_pose", pose_str(s.base_pose));
  c.add("gt_base_pose", pose_str(s.gt_base_pose));
  c.add("box_lower", vec_str(s.box_lower));
  c.add("box_upper", vec_str(s.box_upper));
  c.add("grid.feature_dim", std::to_string(s.grid.feature_dim()));
  for (const GridLevel& lv : s.grid.levels()) {
    const LatticeGeometry& g = lv.geometry;
    c.add("grid.level", vec_str(g.origin) + " " + format_double(g.cell_size) + " " + std::to_string(g.dims.x()) +
                            " " + std::to_string(g.dims.y()) + " " + std::to_string(g.dims.z()));
  }
  std::string indices;
  std::vector<Posed> est, gt;
  for (const Frame& f : s.frames) {
    indices += (indices.empty() ? "" : " ") + std::to_string(f.index);
    est.push_back(f.pose);
    gt.push_back(f.gt_pose);
  }
  c.add("frames", indices);
  write_text(dir / "submap.cfg", c.str());
  write_poses(dir / "poses.txt", est);
  write_poses(dir / "gt_poses.txt", gt);
  fs::create_directories(dir / "frames");
  for (const Frame& f : s.frames) write_ply(dir / "frames" / frame_file(f.index), f.points);
  if (decoder) save_grid(dir / "grid.bin", s.grid, *decoder);
}

Submap load_submap_dir(const fs::path& dir, Decoder* decoder, bool* has_grid) {
  const Config c = Config::load(dir / "submap.cfg");
  Submap s;
  s.id = c.get_int("id", 0);
  s.base_pose = parse_pose("base_pose", c.get("base_pose"));
  s.gt_base_pose = parse_pose("gt_base_pose", c.get("gt_base_pose"));
  s.box_lower = parse_vec("box_lower", c.get("box_lower"));
  s.box_upper = parse_vec("box_upper", c.get("box_upper"));

  const bool grid_file = fs::exists(dir / "grid.bin");
  if (has_grid) *has_grid = grid_file;
  if (grid_file) {
    auto [grid, dec] = load_grid(dir / "grid.bin");
    s.grid = std::move(grid);
    if (decoder) *decoder = std::move(dec);
  } else {
    const int d = c.get_int("grid.feature_dim", 4);
    std::vector<GridLevel> levels;
    for (const std::string& line : c.all("grid.level")) {
      const std::vector<double> v = parse_numbers(line, "grid.level");
      if (v.size() != 7) throw Error(ErrorCode::BadConfig, "grid.level needs 7 numbers");
      LatticeGeometry g;
      g.origin = Vec3(v[0], v[1], v[2]);
      g.cell_size = v[3];
      g.dims = Eigen::Vector3i(int(v[4]), int(v[5]), int(v[6]));
      levels.emplace_back(g, d);
    }
    s.grid = MultiresGrid(std::move(levels));
  }

  const std::vector<double> indices = c.get_doubles("frames", {});
  const std::vector<Posed> est = read_poses(dir / "poses.txt");
  const std::vector<Posed> gt = read_poses(dir / "gt_poses.txt");
  if (est.size() != indices.size() || gt.size() != indices.size())
    throw Error(ErrorCode::LengthMismatch, dir.string() + ": pose files disagree with the frame list");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    Frame f;
    f.index = int(indices[k]);
    f.pose = est[k];
    f.gt_pose = gt[k];
    f.points = read_ply(dir / "frames" / frame_file(f.index));
    s.frames.push_back(std::move(f));
  }
  return s;
}

std::vector<fs::path> graph_submap_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, dir.string() + ": not a directory");
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && !name.empty() && std::all_of(name.begin(), name.end(), ::isdigit) &&
        fs::exists(e.path() / "submap.cfg"))
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void save_graph_dir(const fs::path& dir, const SubmapGraph& graph, const Decoder* decoder) {
  for (std::size_t i = 0; i < graph.submaps.size(); ++i)
    save_submap_dir(dir / submap_name(i), graph.submaps[i], decoder);
}

SubmapGraph load_graph_dir(const fs::path& dir, Decoder* decoder, bool* has_grids) {
  SubmapGraph g;
  bool all = true;
  for (const fs::path& p : graph_submap_dirs(dir)) {
    bool has = false;
    Decoder d;
    g.submaps.push_back(load_submap_dir(p, &d, &has));
    if (has && decoder && g.submaps.size() == 1) *decoder = d;
    all = all && has;
  }
  if (g.submaps.empty()) throw Error(ErrorCode::EmptyGraph, dir.string() + " holds no submaps");
  if (has_grids) *has_grids = all;
  g.edges = build_edges(g.submaps, g.base_poses());
  return g;
}

// --- commands ------------------------------------------------------------------------

namespace {

/// State shared by every subcommand: config file, overrides and common flags.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  int threads = 1;
  Config cfg;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_file, "key = value settings file");
    app->add_option("--set", sets, "override one setting, key=value (repeatable)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  }

  /// File values, then --set overrides, then the explicit flags.
  void resolve(CLI::App* app) {
    if (!config_file.empty()) cfg = Config::load(config_file);
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::BadConfig, "--set expects key=value, got " + kv);
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (app->count("--seed")) {
      cfg.set("seed", std::to_string(seed));
    } else {
      seed = cfg.get_u64("seed", 0);
    }
  }
};

std::string csv_series(const std::string& header, const std::vector<double>& v) {
  std::string out = header + "\n";
  for (std::size_t i = 0; i < v.size(); ++i) out += std::to_string(i) + "," + format_double(v[i]) + "\n";
  return out;
}

Decoder fallback_decoder(const MultiresGrid& grid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Decoder::linear(grid.level_count() * grid.feature_dim(), rng);
}

std::vector<Submap> load_scene_dirs(const std::vector<std::string>& dirs) {
  std::vector<Submap> out;
  for (const std::string& d : dirs)
    for (const fs::path& p : graph_submap_dirs(d)) out.push_back(load_submap_dir(p));
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = int(i);
  return out;
}

/// World box covering every submap domain.
std::pair<Vec3, Vec3> graph_bounds(const SubmapGraph& g) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Submap& s : g.submaps) {
    const auto [a, b] = world_box(s, s.base_pose);
    lo = lo.cwiseMin(a);
    hi = hi.cwiseMax(b);
  }
  return {lo, hi};
}

/// Trilinear lookup in a dense field; NaN corners make the point uncovered.
double dense_lookup(const DenseField& f, const Vec3& x) {
  const TrilinearStencil s = trilinear_stencil(f.geometry, x);
  double v = 0.0;
  for (int c = 0; c < 8; ++c) {
    if (s.weight[c] == 0.0) continue;
    const double fv = f.values[std::size_t(s.vertex[c])];
    if (std::isnan(fv)) throw Error(ErrorCode::Uncovered, "field undefined near the query");
    v += s.weight[c] * fv;
  }
  return v;
}

/// A field to evaluate: a dense file or a fused graph.
struct FieldSource {
  std::string field_file, graph_dir, poses_file, decoder_file;

  void add_to(CLI::App* app) {
    auto* f = app->add_option("--field", field_file, "dense field file");
    auto* g = app->add_option("--graph", graph_dir, "graph directory");
    f->excludes(g);
    app->add_option("--poses", poses_file, "base poses overriding the graph's");
    app->add_option("--decoder", decoder_file, "decoder checkpoint");
  }

  bool has_graph() const { return !graph_dir.empty(); }

  struct Loaded {
    Field field;
    Vec3 lower, upper;
    DenseField dense;
    SubmapGraph graph;
    Decoder decoder;
  };

  std::shared_ptr<Loaded> load() const;
};

void apply_poses(SubmapGraph& g, const std::string& poses_file) {
  if (poses_file.empty()) return;
  const std::vector<Posed> p = read_poses(poses_file);
  if (p.size() != g.submaps.size())
    throw Error(ErrorCode::LengthMismatch, poses_file + ": expected " + std::to_string(g.submaps.size()) + " poses");
  g.set_base_poses(p);
  g.edges = build_edges(g.submaps, g.base_poses());
}

SubmapGraph load_mapped_graph(const std::string& dir, const std::string& poses_file, const std::string& decoder_file,
                              Decoder& decoder) {
  bool grids = false;
  SubmapGraph g = load_graph_dir(dir, &decoder, &grids);
  if (!grids) throw Error(ErrorCode::MissingDecoder, dir + ": every submap needs a grid.bin (run local-slam)");
  if (!decoder_file.empty()) decoder = load_decoder(decoder_file);
  apply_poses(g, poses_file);
  return g;
}

std::shared_ptr<FieldSource::Loaded> FieldSource::load() const {
  auto out = std::make_shared<Loaded>();
  if (!field_file.empty()) {
    out->dense = load_dense_field(field_file);
    out->lower = out->dense.geometry.origin;
    out->upper = out->dense.geometry.upper();
    const DenseField* f = &out->dense;
    out->field = [f](const Vec3& x) { return dense_lookup(*f, x); };
  } else if (!graph_dir.empty()) {
    out->graph = load_mapped_graph(graph_dir, poses_file, decoder_file, out->decoder);
    std::tie(out->lower, out->upper) = graph_bounds(out->graph);
    const SubmapGraph* g = &out->graph;
    const Decoder* d = &out->decoder;
    out->field = [g, d](const Vec3& x) { return fuse_query(*g, *d, x); };
  } else {
    throw Error(ErrorCode::BadConfig, "either --field or --graph is required");
  }
  return out;
}

bool defined_at(const Field& f, const Vec3& x) {
  try {
    f(x);
    return true;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Uncovered || e.code() == ErrorCode::OutOfBounds) return false;
    throw;
  }
}

int axis_index(const std::string& axis) {
  if (axis == "x") return 0;
  if (axis == "y") return 1;
  if (axis == "z") return 2;
  throw Error(ErrorCode::BadConfig, "axis must be x, y or z");
}

// gen-scene -----------------------------------------------------------------------

void gen_scene(const Common& c, const std::string& out_dir, std::ostream& out) {
  const Scene scene = scene_config(c.cfg, c.seed);
  const CaptureConfig capture = capture_config(c.cfg);
  const GridConfig grid = grid_config(c.cfg);
  const int every_n = c.cfg.get_int("submap.every_n", 50);
  if (every_n < 1) throw Error(ErrorCode::BadConfig, "submap.every_n must be positive");
  const std::vector<SimFrame> frames = capture_orbit(scene, capture, c.seed, c.threads);

  // pose noise: frame errors inside each submap, then base errors with submap 0 as gauge
  std::mt19937_64 rng(c.seed + 1);
  const double frame_deg = c.cfg.get_double("noise.frame_deg", 0.0), frame_m = c.cfg.get_double("noise.frame_m", 0.0);
  const double base_deg = c.cfg.get_double("noise.base_deg", 0.0), base_m = c.cfg.get_double("noise.base_m", 0.0);
  std::vector<Submap> submaps = split_submaps(frames, every_n, grid);
  for (std::size_t i = 0; i < submaps.size(); ++i) {
    Submap& s = submaps[i];
    if (frame_deg > 0 || frame_m > 0)
      for (std::size_t k = 1; k < s.frames.size(); ++k)
        s.frames[k].pose = perturb_pose(s.frames[k].gt_pose, frame_deg, frame_m, rng);
    if (i > 0 && (base_deg > 0 || base_m > 0)) s.base_pose = perturb_pose(s.gt_base_pose, base_deg, base_m, rng);
  }

  fs::create_directories(out_dir);
  Config scene_cfg = scene_to_config(scene);
  Config all = c.cfg;
  all.set("scene", "custom");
  for (const auto& [k, v] : all.entries())
    if (k.rfind("scene.", 0) != 0 && k != "scene") scene_cfg.add(k, v);
  write_text(fs::path(out_dir) / "scene.cfg", scene_cfg.str());
  SubmapGraph g;
  g.submaps = std::move(submaps);
  save_graph_dir(out_dir, g);
  std::size_t points = 0;
  for (const Submap& s : g.submaps) points += s.point_count();
  out << "frames: " << frames.size() << "\nsubmaps: " << g.submaps.size() << "\npoints: " << points << "\n";
}

// training ----------------------------------------------------------------------

void pretrain(const Common& c, const std::vector<std::string>& scenes, const std::string& out_file,
              std::ostream& out) {
  std::vector<Submap> s = load_scene_dirs(scenes);
  const PretrainResult r = pretrain_decoder(s, pretrain_config(c.cfg));
  save_decoder(out_file, r.decoder);
  std::vector<double> loss;
  for (const PretrainLog& l : r.trace) loss.push_back(l.loss);
  write_text(fs::path(out_file).string() + ".csv", csv_series("epoch,loss", loss));
  out << "scenes: " << s.size() << "\nfinal_loss: " << format_double(loss.empty() ? 0.0 : loss.back()) << "\n";
}

void train_encoders_cmd(const Common& c, const std::vector<std::string>& scenes, const std::string& decoder_file,
                        const std::string& out_dir, std::ostream& out) {
  if (decoder_file.empty()) throw Error(ErrorCode::MissingDecoder, "--decoder is required");
  const Decoder d = load_decoder(decoder_file);
  const std::vector<Submap> s = load_scene_dirs(scenes);
  std::vector<std::vector<double>> losses;
  const std::vector<Encoder> enc = train_encoders(s, &d, encoder_train_config(c.cfg), &losses);
  fs::create_directories(out_dir);
  save_encoders(fs::path(out_dir) / "encoders.bin", enc);
  std::string csv = "level,epoch,loss\n";
  for (std::size_t l = 0; l < losses.size(); ++l)
    for (std::size_t e = 0; e < losses[l].size(); ++e)
      csv += std::to_string(l) + "," + std::to_string(e) + "," + format_double(losses[l][e]) + "\n";
  write_text(fs::path(out_dir) / "losses.csv", csv);
  out << "scenes: " << s.size() << "\nlevels: " << enc.size() << "\n";
}

// local ----------------------------------------------------------------------------

struct LocalArgs {
  std::string submap, decoder, encoders, init = "closed-form", out;
  bool freeze = false;
  int epochs = -1;
};

Decoder submap_decoder(const Submap& s, const std::string& decoder_file, bool has_grid, const Decoder& stored,
                       std::uint64_t seed) {
  if (!decoder_file.empty()) return load_decoder(decoder_file);
  if (has_grid) return stored;
  return fallback_decoder(s.grid, seed);
}

void local_slam_cmd(Common& c, const LocalArgs& a, std::ostream& out) {
  if (a.epochs >= 0) c.cfg.set("local.epochs", std::to_string(a.epochs));
  if (a.freeze) c.cfg.set("local.freeze_poses", "true");
  Decoder stored;
  bool has_grid = false;
  Submap s = load_submap_dir(a.submap, &stored, &has_grid);
  Decoder d = submap_decoder(s, a.decoder, has_grid, stored, c.seed);
  const CostConfig costs = cost_config(c.cfg);

  std::vector<Encoder> enc;
  InitMethod method;
  if (a.init == "zero") {
    method = InitMethod::Zero;
  } else if (a.init == "closed-form") {
    method = InitMethod::ClosedForm;
  } else if (a.init == "encoder") {
    if (a.encoders.empty()) throw Error(ErrorCode::MissingEncoderWeights, "--init encoder needs --encoders");
    enc = load_encoders(fs::path(a.encoders) / "encoders.bin");
    method = InitMethod::Encoder;
  } else {
    throw Error(ErrorCode::BadConfig, "--init must be closed-form, encoder or zero");
  }
  const std::vector<double> init = hierarchical_init(s, d, method, method == InitMethod::Encoder ? &enc : nullptr,
                                                     costs);
  const LocalSlamResult r = local_slam(s, d, local_slam_config(c.cfg));
  save_submap_dir(a.out, s, &d);
  write_text(fs::path(a.out) / "trace.csv", trace_csv(r.trace));
  out << "init_objective: " << format_double(init.back()) << "\n";
  if (!r.trace.empty())
    out << "final_data: " << format_double(r.trace.back().data_cost)
        << "\nfinal_reg: " << format_double(r.trace.back().reg_cost) << "\n";
}

void track_cmd(Common& c, const LocalArgs& a, std::ostream& out) {
  Decoder stored;
  bool has_grid = false;
  Submap s = load_submap_dir(a.submap, &stored, &has_grid);
  Decoder d = submap_decoder(s, a.decoder, has_grid, stored, c.seed);
  if (!has_grid) s.grid.zero_features();
  const std::vector<Posed> est = incremental_slam(s, d, incremental_config(c.cfg));
  save_submap_dir(a.out, s, &d);
  std::vector<Posed> gt;
  for (const Frame& f : s.frames) gt.push_back(f.gt_pose);
  const PoseRmse e = pose_rmse(est, gt);
  out << "frames: " << est.size() << "\nrot_rmse_deg: " << format_double(e.rot_deg)
      << "\ntran_rmse_m: " << format_double(e.tran_m) << "\n";
}

// global ------------------------------------------------------------------------

struct GraphArgs {
  std::string graph, poses, decoder, schedule, out, report;
  int iters = -1;
  double query = 0.1;
};

void align_cmd(Common& c, const GraphArgs& a, std::ostream& out) {
  Config sched = c.cfg;
  if (!a.schedule.empty()) {
    sched = Config::load(a.schedule);
    for (const auto& [k, v] : c.cfg.entries()) sched.set(k, v);
  }
  Decoder d;
  SubmapGraph g = load_mapped_graph(a.graph, a.poses, a.decoder, d);
  const AlignResult r = align_submaps(g, d, align_schedule(sched));
  write_poses(a.out, r.poses);
  if (!a.report.empty()) write_text(a.report, align_report_csv(r.trace));
  const auto [rot, tran] = base_pose_errors(g);
  for (std::size_t u = 0; u < rot.size(); ++u)
    out << "submap_" << u << ": " << format_double(rot[u]) << " deg " << format_double(tran[u]) << " m\n";
}

void fuse_cmd(const GraphArgs& a, std::ostream& out) {
  if (!(a.query > 0)) throw Error(ErrorCode::BadConfig, "--query-grid must be positive");
  Decoder d;
  const SubmapGraph g = load_mapped_graph(a.graph, a.poses, a.decoder, d);
  const auto [lo, hi] = graph_bounds(g);
  DenseField f;
  f.geometry.origin = lo;
  f.geometry.cell_size = a.query;
  for (int i = 0; i < 3; ++i) f.geometry.dims(i) = std::max(2, int(std::ceil((hi(i) - lo(i)) / a.query - 1e-9)) + 1);
  f.values.resize(std::size_t(f.geometry.vertex_count()));
  std::size_t uncovered = 0;
  for (Index v = 0; v < f.geometry.vertex_count(); ++v) {
    const Vec3 x = f.geometry.vertex(v);
    if (coverage(g, x) == 0) {
      f.values[std::size_t(v)] = std::numeric_limits<double>::quiet_NaN();
      ++uncovered;
    } else {
      f.values[std::size_t(v)] = fuse_query(g, d, x);
    }
  }
  save_dense_field(a.out, f);
  out << "samples: " << f.values.size() << "\nuncovered: " << uncovered << "\n";
}

void global_ba_cmd(Common& c, const GraphArgs& a, std::ostream& out) {
  if (a.iters >= 0) c.cfg.set("ba.iters", std::to_string(a.iters));
  Decoder d;
  SubmapGraph g = load_mapped_graph(a.graph, a.poses, a.decoder, d);
  const GlobalBaResult r = global_ba(g, d, global_ba_config(c.cfg));
  save_graph_dir(a.out, g, &d);
  write_text(fs::path(a.out) / "loss.csv", csv_series("iteration,loss", r.loss));
  if (!r.loss.empty())
    out << "initial_loss: " << format_double(r.loss.front()) << "\nfinal_loss: " << format_double(r.loss.back())
        << "\n";
}

// evaluation --------------------------------------------------------------------

void eval_cmd(const Common& c, const FieldSource& src, const std::string& scene_file, const std::string& metrics,
              const std::string& out_file, std::ostream& out) {
  if (scene_file.empty()) throw Error(ErrorCode::BadConfig, "--scene is required");
  const Scene scene = scene_config(Config::load(scene_file), c.seed);
  const auto loaded = src.load();
  const std::size_t n = std::size_t(c.cfg.get_int("eval.samples", 20000));
  const double band = c.cfg.get_double("eval.band", 0.3);

  std::ostringstream report;
  std::string m = metrics;
  std::replace(m.begin(), m.end(), ',', ' ');
  std::istringstream names(m);
  std::string name;
  while (names >> name) {
    if (name == "sdf_mae") {
      const MaeReport r = sdf_mae(loaded->field, scene, n, band, c.seed);
      report << "sdf_mae_m: " << format_double(r.mae) << "\nsdf_mae_samples: " << r.samples
             << "\nsdf_mae_skipped: " << r.skipped << "\n";
    } else if (name == "fscore") {
      const std::size_t k = std::size_t(c.cfg.get_int("eval.surface_points", 4000));
      const SurfaceSample est = surface_points_from_field(loaded->field, loaded->lower, loaded->upper, k, band, c.seed);
      std::vector<Vec3> gt;
      for (const Vec3& x : scene_surface_points(scene, k, c.seed + 1))
        if (defined_at(loaded->field, x)) gt.push_back(x);
      if (est.points.empty() || gt.empty()) throw Error(ErrorCode::EmptySet, "no surface points to compare");
      const FScore f = f_score(est.points, gt, c.cfg.get_double("eval.fscore_threshold", 0.05));
      report << "precision_pct: " << format_double(f.precision) << "\nrecall_pct: " << format_double(f.recall)
             << "\nfscore_pct: " << format_double(f.fscore)
             << "\nchamfer_l1_m: " << format_double(chamfer_l1(est.points, gt)) << "\n";
    } else if (name == "pose_rmse") {
      if (!src.has_graph()) throw Error(ErrorCode::BadConfig, "pose_rmse needs --graph");
      std::vector<Posed> est, gt;
      for (const Submap& s : loaded->graph.submaps)
        for (const Frame& f : s.frames) {
          est.push_back(s.base_pose * f.pose);
          gt.push_back(s.gt_base_pose * f.gt_pose);
        }
      const PoseRmse e = pose_rmse(est, gt);
      report << "rot_rmse_deg: " << format_double(e.rot_deg) << "\ntran_rmse_m: " << format_double(e.tran_m) << "\n";
    } else {
      throw Error(ErrorCode::BadConfig, "unknown metric " + name);
    }
  }
  if (!out_file.empty()) write_text(out_file, report.str());
  out << report.str();
}

void slice_cmd(const FieldSource& src, const std::string& axis, double coord, int res, const std::string& out_file,
               std::ostream& out) {
  if (res < 2) throw Error(ErrorCode::BadConfig, "--res must be at least 2");
  const auto loaded = src.load();
  fs::path pgm = out_file;
  pgm.replace_extension(".pgm");
  const Tensor m = export_slice(loaded->field, axis_index(axis), coord, loaded->lower, loaded->upper, res, out_file,
                                pgm);
  std::size_t undefined = 0;
  for (Index i = 0; i < m.size(); ++i) undefined += std::isnan(m.data()[i]) ? 1 : 0;
  out << "samples: " << m.size() << "\nundefined: " << undefined << "\n";
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadConfig:
    case ErrorCode::InvalidArgument:
      return kExitBadConfig;
    case ErrorCode::IoError:
    case ErrorCode::FormatVersionMismatch:
    case ErrorCode::MissingDecoder:
    case ErrorCode::MissingEncoderWeights:
      return kExitIo;
    case ErrorCode::Uncovered:
      return kExitUncovered;
    default:
      return kExitFailure;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical neural SDF mapping on synthetic scenes", "hsdf"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  Common common;
  std::string out_path, scene_file, metrics = "sdf_mae", axis = "z", decoder_file;
  std::vector<std::string> scene_dirs;
  double coord = 0.0;
  int res = 128;
  LocalArgs la;
  GraphArgs ga;
  FieldSource fs_args;

  auto* gen = app.add_subcommand("gen-scene", "simulate a scene and write its submaps");
  gen->add_option("--out", out_path, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "pre-train the decoder on scene directories");
  pre->add_option("--scenes", scene_dirs, "scene directories")->required()->expected(1, -1);
  pre->add_option("--out", out_path, "decoder checkpoint")->required();
  auto* pre_epochs = pre->add_option("--epochs", la.epochs, "training epochs");

  auto* enc = app.add_subcommand("train-encoders", "train the per-level encoders");
  enc->add_option("--scenes", scene_dirs, "scene directories")->required()->expected(1, -1);
  enc->add_option("--decoder", decoder_file, "decoder checkpoint")->required();
  enc->add_option("--out", out_path, "output directory")->required();
  auto* enc_epochs = enc->add_option("--epochs", la.epochs, "epochs per level");

  auto* loc = app.add_subcommand("local-slam", "initialise and optimise one submap");
  loc->add_option("--submap", la.submap, "submap directory")->required();
  loc->add_option("--decoder", la.decoder, "decoder checkpoint");
  loc->add_option("--encoders", la.encoders, "encoder directory");
  loc->add_option("--init", la.init, "closed-form, encoder or zero")
      ->check(CLI::IsMember({"closed-form", "encoder", "zero"}));
  loc->add_flag("--freeze-poses", la.freeze, "optimise features only");
  loc->add_option("--epochs", la.epochs, "epochs");
  loc->add_option("--out", la.out, "output submap directory")->required();

  auto* trk = app.add_subcommand("track", "incremental tracking and mapping of one submap");
  trk->add_option("--submap", la.submap, "submap directory")->required();
  trk->add_option("--decoder", la.decoder, "decoder checkpoint");
  trk->add_option("--out", la.out, "output submap directory")->required();

  auto* aln = app.add_subcommand("align", "align submap base poses");
  aln->add_option("--graph", ga.graph, "graph directory")->required();
  aln->add_option("--poses", ga.poses, "initial base poses");
  aln->add_option("--decoder", ga.decoder, "decoder checkpoint");
  aln->add_option("--schedule", ga.schedule, "schedule settings file");
  aln->add_option("--report", ga.report, "per-iteration CSV report");
  aln->add_option("--out", ga.out, "aligned base poses")->required();

  auto* fus = app.add_subcommand("fuse", "sample the fused field on a lattice");
  fus->add_option("--graph", ga.graph, "graph directory")->required();
  fus->add_option("--poses", ga.poses, "base poses");
  fus->add_option("--decoder", ga.decoder, "decoder checkpoint");
  fus->add_option("--query-grid", ga.query, "lattice spacing in metres");
  fus->add_option("--out", ga.out, "dense field file")->required();

  auto* gba = app.add_subcommand("global-ba", "joint refinement of all submaps");
  gba->add_option("--graph", ga.graph, "graph directory")->required();
  gba->add_option("--poses", ga.poses, "base poses");
  gba->add_option("--decoder", ga.decoder, "decoder checkpoint");
  gba->add_option("--iters", ga.iters, "iterations");
  gba->add_option("--out", ga.out, "output graph directory")->required();

  auto* evl = app.add_subcommand("eval", "metrics against the analytic scene");
  fs_args.add_to(evl);
  evl->add_option("--scene", scene_file, "scene settings (scene.cfg)")->required();
  evl->add_option("--metrics", metrics, "sdf_mae,fscore,pose_rmse");
  evl->add_option("--out", out_path, "report file");

  auto* slc = app.add_subcommand("slice", "export a planar slice as CSV and PGM");
  FieldSource slice_src;
  slice_src.add_to(slc);
  slc->add_option("--axis", axis, "x, y or z")->check(CLI::IsMember({"x", "y", "z"}));
  slc->add_option("--coord", coord, "plane coordinate")->required();
  slc->add_option("--res", res, "samples per side");
  slc->add_option("--out", out_path, "CSV file")->required();

  for (CLI::App* sub : app.get_subcommands({})) common.add_to(sub);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    common.resolve(sub);
    if (sub == gen) {
      gen_scene(common, out_path, out);
    } else if (sub == pre) {
      if (pre_epochs->count()) common.cfg.set("pretrain.epochs", std::to_string(la.epochs));
      pretrain(common, scene_dirs, out_path, out);
    } else if (sub == enc) {
      if (enc_epochs->count()) common.cfg.set("encoder.epochs", std::to_string(la.epochs));
      train_encoders_cmd(common, scene_dirs, decoder_file, out_path, out);
    } else if (sub == loc) {
      local_slam_cmd(common, la, out);
    } else if (sub == trk) {
      track_cmd(common, la, out);
    } else if (sub == aln) {
      align_cmd(common, ga, out);
    } else if (sub == fus) {
      fuse_cmd(ga, out);
    } else if (sub == gba) {
      global_ba_cmd(common, ga, out);
    } else if (sub == evl) {
      eval_cmd(common, fs_args, scene_file, metrics, out_path, out);
    } else if (sub == slc) {
      slice_cmd(slice_src, axis, coord, res, out_path, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace hsdf
