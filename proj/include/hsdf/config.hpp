#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hsdf/global.hpp"
#include "hsdf/training.hpp"

namespace hsdf {

/// Plain-text settings, one `key = value` per line. `#` starts a comment.
/// Keys may repeat (primitive lists); scalar lookups take the last line.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "config");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  /// Throws BadConfig when the key is missing.
  std::string get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Whitespace- or comma-separated numbers.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::string> all(const std::string& key) const;

  /// Replaces every line of `key`.
  void set(const std::string& key, const std::string& value);
  void add(const std::string& key, const std::string& value);
  void merge(const Config& other);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string str() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Numbers separated by whitespace or commas. Throws BadConfig.
std::vector<double> parse_numbers(const std::string& text, const std::string& what);

CostConfig cost_config(const Config& c);
GridConfig grid_config(const Config& c);
SensorModel sensor_config(const Config& c);
LabelConfig label_config(const Config& c);
CaptureConfig capture_config(const Config& c);
LocalSlamConfig local_slam_config(const Config& c);
IncrementalConfig incremental_config(const Config& c);
AlignSchedule align_schedule(const Config& c);
GlobalBaConfig global_ba_config(const Config& c);
PretrainConfig pretrain_config(const Config& c);
EncoderTrainConfig encoder_train_config(const Config& c);

/// `scene = default | random | custom`. Custom scenes list `scene.room`,
/// `scene.sphere` and `scene.box` lines; random scenes draw from `seed`.
Scene scene_config(const Config& c, std::uint64_t seed);
/// Lines describing the scene as a custom primitive list.
Config scene_to_config(const Scene& scene);

}  // namespace hsdf
