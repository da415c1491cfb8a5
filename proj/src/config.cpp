#include "hsdf/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "hsdf/io.hpp"

namespace hsdf {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* expected) {
  throw Error(ErrorCode::BadConfig, key + " = '" + value + "' is not " + expected);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) bad(key, v, "a number");
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) bad(key, v, "an integer");
  return out;
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw Error(ErrorCode::BadConfig, origin + ":" + std::to_string(number) + ": expected key = value");
    c.entries_.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) { return parse(read_text(path), path.string()); }

bool Config::has(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
}

std::string Config::get(const std::string& key) const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
    if (it->first == key) return it->second;
  throw Error(ErrorCode::BadConfig, "missing key " + key);
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? to_double(key, get(key)) : fallback;
}

int Config::get_int(const std::string& key, int fallback) const {
  return has(key) ? to_int<int>(key, get(key)) : fallback;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  return has(key) ? to_int<std::uint64_t>(key, get(key)) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(key, v, "a boolean");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  return has(key) ? parse_numbers(get(key), key) : fallback;
}

std::vector<std::string> Config::all(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_)
    if (k == key) out.push_back(v);
  return out;
}

void Config::set(const std::string& key, const std::string& value) {
  std::erase_if(entries_, [&](const auto& e) { return e.first == key; });
  entries_.emplace_back(key, value);
}

void Config::add(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }

void Config::merge(const Config& other) {
  for (const auto& [k, v] : other.entries_) add(k, v);
}

std::string Config::str() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::string s = text;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream in(s);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) out.push_back(to_double(what, tok));
  return out;
}

// --- typed sections -----------------------------------------------------------

CostConfig cost_config(const Config& c) {
  CostConfig k;
  k.w_sdf = c.get_double("cost.w_sdf", k.w_sdf);
  k.beta = c.get_double("cost.beta", k.beta);
  k.near_surface_band = c.get_double("cost.near_surface_band", k.near_surface_band);
  k.w_rho = c.get_double("cost.w_rho", k.w_rho);
  k.tau = c.get_double("cost.tau", k.tau);
  k.gm_sigma = c.get_double("cost.gm_sigma", k.gm_sigma);
  return k;
}

GridConfig grid_config(const Config& c) {
  GridConfig g;
  g.cell_sizes = c.get_doubles("grid.cells", g.cell_sizes);
  g.feature_dim = c.get_int("grid.feature_dim", g.feature_dim);
  g.padding = c.get_double("grid.padding", g.padding);
  if (g.cell_sizes.empty()) throw Error(ErrorCode::BadConfig, "grid.cells is empty");
  return g;
}

SensorModel sensor_config(const Config& c) {
  SensorModel s;
  const std::string type = c.get("sensor.type", "pinhole");
  if (type == "pinhole") {
    s.type = SensorModel::Type::Pinhole;
  } else if (type == "spherical") {
    s.type = SensorModel::Type::Spherical;
  } else {
    bad("sensor.type", type, "pinhole or spherical");
  }
  s.width = c.get_int("sensor.width", s.width);
  s.height = c.get_int("sensor.height", s.height);
  // intrinsics follow the image size unless given
  s.fx = c.get_double("sensor.fx", 0.75 * s.width);
  s.fy = c.get_double("sensor.fy", s.fx);
  s.cx = c.get_double("sensor.cx", 0.5 * s.width);
  s.cy = c.get_double("sensor.cy", 0.5 * s.height);
  s.azimuth_count = c.get_int("sensor.azimuth_count", s.azimuth_count);
  s.elevation_count = c.get_int("sensor.elevation_count", s.elevation_count);
  s.el_min = c.get_double("sensor.el_min", s.el_min);
  s.el_max = c.get_double("sensor.el_max", s.el_max);
  s.max_range = c.get_double("sensor.max_range", s.max_range);
  s.depth_noise = c.get_double("sensor.depth_noise", s.depth_noise);
  return s;
}

LabelConfig label_config(const Config& c) {
  LabelConfig l;
  l.n_near = c.get_int("labels.n_near", l.n_near);
  l.n_free = c.get_int("labels.n_free", l.n_free);
  l.band = c.get_double("labels.band", l.band);
  const std::string mode = c.get("labels.mode", "ray");
  if (mode == "ray") {
    l.mode = LabelMode::RayApprox;
  } else if (mode == "oracle") {
    l.mode = LabelMode::Oracle;
  } else {
    bad("labels.mode", mode, "ray or oracle");
  }
  return l;
}

CaptureConfig capture_config(const Config& c) {
  CaptureConfig k;
  k.sensor = sensor_config(c);
  k.labels = label_config(c);
  k.waypoints = c.get_int("capture.waypoints", k.waypoints);
  k.frames_per_leg = c.get_int("capture.frames_per_leg", k.frames_per_leg);
  k.jitter = c.get_double("capture.jitter", k.jitter);
  k.phase = c.get_double("capture.phase", k.phase);
  return k;
}

LocalSlamConfig local_slam_config(const Config& c) {
  LocalSlamConfig k;
  k.epochs = c.get_int("local.epochs", k.epochs);
  k.lr = c.get_double("local.lr", k.lr);
  k.pose_lr = c.get_double("local.pose_lr", k.pose_lr);
  k.freeze_poses = c.get_bool("local.freeze_poses", k.freeze_poses);
  k.frames_per_epoch = c.get_int("local.frames_per_epoch", k.frames_per_epoch);
  k.point_fraction = c.get_double("local.point_fraction", k.point_fraction);
  k.seed = c.get_u64("seed", k.seed);
  k.costs = cost_config(c);
  return k;
}

IncrementalConfig incremental_config(const Config& c) {
  IncrementalConfig k;
  k.track.iters = c.get_int("track.iters", k.track.iters);
  k.track.lr = c.get_double("track.lr", k.track.lr);
  k.track.voxel = c.get_double("track.voxel", k.track.voxel);
  k.track.gm_sigma = c.get_double("cost.gm_sigma", k.track.gm_sigma);
  k.map.iters = c.get_int("map.iters", k.map.iters);
  k.map.lr = c.get_double("map.lr", k.map.lr);
  k.map.voxel = c.get_double("map.voxel", k.map.voxel);
  k.map.costs = cost_config(c);
  k.constant_velocity = c.get_bool("track.constant_velocity", k.constant_velocity);
  return k;
}

AlignSchedule align_schedule(const Config& c) {
  AlignSchedule k;
  if (c.has("align.k_f")) {
    k.k_f.clear();
    for (double v : c.get_doubles("align.k_f", {})) k.k_f.push_back(int(v));
  }
  if (c.has("align.levels")) {
    k.level_enabled.clear();
    for (double v : c.get_doubles("align.levels", {})) k.level_enabled.push_back(v != 0.0);
  }
  k.k_s = c.get_int("align.k_s", k.k_s);
  k.lr = c.get_double("align.lr", k.lr);
  k.tau = c.get_double("align.tau", k.tau);
  k.w_rho = c.get_double("align.w_rho", k.w_rho);
  const std::string dist = c.get("align.distance", "l2");
  if (dist == "l2") {
    k.distance = FeatureDistance::L2Squared;
  } else if (dist == "l1") {
    k.distance = FeatureDistance::L1;
  } else if (dist == "cosine") {
    k.distance = FeatureDistance::NegCosine;
  } else {
    bad("align.distance", dist, "l2, l1 or cosine");
  }
  return k;
}

GlobalBaConfig global_ba_config(const Config& c) {
  GlobalBaConfig k;
  k.iters = c.get_int("ba.iters", k.iters);
  k.lr = c.get_double("ba.lr", k.lr);
  k.pose_lr = c.get_double("ba.pose_lr", k.pose_lr);
  k.costs = cost_config(c);
  return k;
}

PretrainConfig pretrain_config(const Config& c) {
  PretrainConfig k;
  k.epochs = c.get_int("pretrain.epochs", k.epochs);
  k.activation_epoch = c.get_int("pretrain.activation_epoch", k.activation_epoch);
  k.lr = c.get_double("pretrain.lr", k.lr);
  k.hidden = c.get_int("pretrain.hidden", k.hidden);
  k.feature_std = c.get_double("pretrain.feature_std", k.feature_std);
  k.seed = c.get_u64("seed", k.seed);
  k.costs = cost_config(c);
  return k;
}

EncoderTrainConfig encoder_train_config(const Config& c) {
  EncoderTrainConfig k;
  k.epochs = c.get_int("encoder.epochs", k.epochs);
  k.lr = c.get_double("encoder.lr", k.lr);
  k.rot_noise_deg = c.get_double("encoder.rot_noise_deg", k.rot_noise_deg);
  k.trans_noise_m = c.get_double("encoder.trans_noise_m", k.trans_noise_m);
  k.seed = c.get_u64("seed", k.seed);
  k.costs = cost_config(c);
  return k;
}

// --- scenes ------------------------------------------------------------------------

namespace {

std::vector<double> fixed_numbers(const std::string& key, const std::string& value, std::size_t n) {
  std::vector<double> v = parse_numbers(value, key);
  if (v.size() != n) bad(key, value, (std::to_string(n) + " numbers").c_str());
  return v;
}

std::string join(std::initializer_list<double> values) {
  std::string out;
  for (double v : values) out += (out.empty() ? "" : " ") + format_double(v);
  return out;
}

}  // namespace

Scene scene_config(const Config& c, std::uint64_t seed) {
  const std::string kind = c.get("scene", "default");
  if (kind == "default") return default_room_scene();
  if (kind == "random") {
    std::mt19937_64 rng(seed);
    return random_room_scene(rng);
  }
  if (kind != "custom") bad("scene", kind, "default, random or custom");
  Scene s;
  for (const auto& [key, value] : c.entries()) {
    if (key == "scene.room") {
      const auto v = fixed_numbers(key, value, 7);
      s.primitives.push_back(HollowRoom{Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]), v[6]});
    } else if (key == "scene.sphere") {
      const auto v = fixed_numbers(key, value, 4);
      s.primitives.push_back(Sphere{Vec3(v[0], v[1], v[2]), v[3]});
    } else if (key == "scene.box") {
      const auto v = fixed_numbers(key, value, 6);
      s.primitives.push_back(Box{Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])});
    }
  }
  if (s.primitives.empty()) throw Error(ErrorCode::BadConfig, "custom scene without primitives");
  s.fit_bounds();
  return s;
}

Config scene_to_config(const Scene& scene) {
  Config c;
  c.add("scene", "custom");
  for (const Primitive& p : scene.primitives) {
    if (const auto* r = std::get_if<HollowRoom>(&p)) {
      c.add("scene.room", join({r->center.x(), r->center.y(), r->center.z(), r->half_extents.x(),
                                r->half_extents.y(), r->half_extents.z(), r->thickness}));
    } else if (const auto* s = std::get_if<Sphere>(&p)) {
      c.add("scene.sphere", join({s->center.x(), s->center.y(), s->center.z(), s->radius}));
    } else if (const auto* b = std::get_if<Box>(&p)) {
      c.add("scene.box", join({b->center.x(), b->center.y(), b->center.z(), b->half_extents.x(),
                               b->half_extents.y(), b->half_extents.z()}));
    }
  }
  return c;
}

}  // namespace hsdf
