#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hsdf/costs.hpp"
#include "hsdf/grid.hpp"

namespace hsdf {

/// Payload kinds of the binary container.
enum class BlobKind : std::uint32_t { Grid = 1, Decoder = 2, Encoders = 3, DenseField = 4 };

inline constexpr std::uint32_t kFormatVersion = 1;

/// Little-endian writer for the versioned container
/// (8-byte magic, u32 version, u32 kind, payload).
class BlobWriter {
 public:
  explicit BlobWriter(BlobKind kind);
  void u32(std::uint32_t v);
  void f64(double v);
  void tensor(const Tensor& t);
  void save(const std::filesystem::path& path) const;

 private:
  std::string buf_;
};

class BlobReader {
 public:
  /// Throws IoError on unreadable/short files and FormatVersionMismatch on a
  /// bad magic, version or kind.
  BlobReader(const std::filesystem::path& path, BlobKind expected);
  std::uint32_t u32();
  double f64();
  Tensor tensor();
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n);
  std::string buf_;
  std::size_t pos_ = 0;
};

void write_decoder(BlobWriter& w, const Decoder& d);
Decoder read_decoder(BlobReader& r);

void save_grid(const std::filesystem::path& path, const MultiresGrid& grid, const Decoder& decoder);
std::pair<MultiresGrid, Decoder> load_grid(const std::filesystem::path& path);

void save_decoder(const std::filesystem::path& path, const Decoder& decoder);
Decoder load_decoder(const std::filesystem::path& path);

/// Samples of a scalar field on a regular lattice.
struct DenseField {
  LatticeGeometry geometry;
  std::vector<double> values;  // flat lattice order
};
void save_dense_field(const std::filesystem::path& path, const DenseField& field);
DenseField load_dense_field(const std::filesystem::path& path);

/// Binary little-endian PLY with position, kind, the two label values and the
/// on-surface flag.
void write_ply(const std::filesystem::path& path, const std::vector<LabeledPoint>& points);
std::vector<LabeledPoint> read_ply(const std::filesystem::path& path);

/// One pose per line, 12 numbers: R row-major then t.
void write_poses(const std::filesystem::path& path, const std::vector<Posed>& poses);
std::vector<Posed> read_poses(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace hsdf
