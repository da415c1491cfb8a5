#include "hsdf/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hsdf {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'D', 'F', 'B', 'I', 'N', '\0'};

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

template <typename T>
void append(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

std::string io_message(const std::filesystem::path& p, const std::string& what) { return p.string() + ": " + what; }

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, io_message(path, "cannot open for reading"));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorCode::IoError, io_message(path, "cannot create parent directory"));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, io_message(path, "cannot open for writing"));
  out.write(text.data(), std::streamsize(text.size()));
  if (!out) throw Error(ErrorCode::IoError, io_message(path, "write failed"));
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// --- container ---------------------------------------------------------------

BlobWriter::BlobWriter(BlobKind kind) {
  buf_.append(kMagic, 8);
  append(buf_, kFormatVersion);
  append(buf_, std::uint32_t(kind));
}

void BlobWriter::u32(std::uint32_t v) { append(buf_, v); }
void BlobWriter::f64(double v) { append(buf_, v); }

void BlobWriter::tensor(const Tensor& t) {
  u32(std::uint32_t(t.rows()));
  u32(std::uint32_t(t.cols()));
  buf_.append(reinterpret_cast<const char*>(t.data()), std::size_t(t.size()) * sizeof(double));
}

void BlobWriter::save(const std::filesystem::path& path) const { write_text(path, buf_); }

BlobReader::BlobReader(const std::filesystem::path& path, BlobKind expected) : buf_(read_text(path)) {
  if (buf_.size() < 16) throw Error(ErrorCode::IoError, io_message(path, "truncated header"));
  if (std::memcmp(buf_.data(), kMagic, 8) != 0)
    throw Error(ErrorCode::FormatVersionMismatch, io_message(path, "not an hsdf container"));
  pos_ = 8;
  const std::uint32_t version = u32();
  if (version != kFormatVersion)
    throw Error(ErrorCode::FormatVersionMismatch, io_message(path, "unsupported version " + std::to_string(version)));
  const std::uint32_t kind = u32();
  if (kind != std::uint32_t(expected))
    throw Error(ErrorCode::FormatVersionMismatch, io_message(path, "unexpected payload kind " + std::to_string(kind)));
}

void BlobReader::need(std::size_t n) {
  if (buf_.size() - pos_ < n) throw Error(ErrorCode::IoError, "truncated container payload");
}

std::uint32_t BlobReader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, buf_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

double BlobReader::f64() {
  need(8);
  double v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

Tensor BlobReader::tensor() {
  const std::uint32_t r = u32(), c = u32();
  const std::size_t bytes = std::size_t(r) * c * sizeof(double);
  need(bytes);
  Tensor t(r, c);
  if (bytes) std::memcpy(t.data(), buf_.data() + pos_, bytes);
  pos_ += bytes;
  return t;
}

// --- payloads ----------------------------------------------------------------

void write_decoder(BlobWriter& w, const Decoder& d) {
  w.u32(d.is_linear() ? 1 : 0);
  w.tensor(d.w1.value);
  w.tensor(d.b1.value);
  w.tensor(d.w2.value);
  w.tensor(d.b2.value);
}

Decoder read_decoder(BlobReader& r) {
  const bool linear = r.u32() != 0;
  Param w1(r.tensor()), b1(r.tensor()), w2(r.tensor()), b2(r.tensor());
  return decoder_from_params(linear, std::move(w1), std::move(b1), std::move(w2), std::move(b2));
}

void save_grid(const std::filesystem::path& path, const MultiresGrid& grid, const Decoder& decoder) {
  BlobWriter w(BlobKind::Grid);
  w.u32(std::uint32_t(grid.level_count()));
  for (const GridLevel& lv : grid.levels()) {
    for (int a = 0; a < 3; ++a) w.f64(lv.geometry.origin(a));
    w.f64(lv.geometry.cell_size);
    for (int a = 0; a < 3; ++a) w.u32(std::uint32_t(lv.geometry.dims(a)));
    w.tensor(lv.features.value);
  }
  write_decoder(w, decoder);
  w.save(path);
}

std::pair<MultiresGrid, Decoder> load_grid(const std::filesystem::path& path) {
  BlobReader r(path, BlobKind::Grid);
  const std::uint32_t n = r.u32();
  if (n == 0 || n > 64) throw Error(ErrorCode::FormatVersionMismatch, io_message(path, "bad level count"));
  std::vector<GridLevel> levels;
  for (std::uint32_t l = 0; l < n; ++l) {
    LatticeGeometry g;
    for (int a = 0; a < 3; ++a) g.origin(a) = r.f64();
    g.cell_size = r.f64();
    for (int a = 0; a < 3; ++a) g.dims(a) = int(r.u32());
    GridLevel lv;
    lv.geometry = g;
    lv.features = Param(r.tensor());
    if (lv.features.value.rows() != g.vertex_count())
      throw Error(ErrorCode::FormatVersionMismatch, io_message(path, "feature rows do not match lattice"));
    levels.push_back(std::move(lv));
  }
  Decoder d = read_decoder(r);
  return {MultiresGrid(std::move(levels)), std::move(d)};
}

void save_decoder(const std::filesystem::path& path, const Decoder& decoder) {
  BlobWriter w(BlobKind::Decoder);
  write_decoder(w, decoder);
  w.save(path);
}

Decoder load_decoder(const std::filesystem::path& path) {
  BlobReader r(path, BlobKind::Decoder);
  return read_decoder(r);
}

void save_dense_field(const std::filesystem::path& path, const DenseField& field) {
  BlobWriter w(BlobKind::DenseField);
  for (int a = 0; a < 3; ++a) w.f64(field.geometry.origin(a));
  w.f64(field.geometry.cell_size);
  for (int a = 0; a < 3; ++a) w.u32(std::uint32_t(field.geometry.dims(a)));
  Tensor t(Index(field.values.size()), 1);
  for (std::size_t i = 0; i < field.values.size(); ++i) t(Index(i), 0) = field.values[i];
  w.tensor(t);
  w.save(path);
}

DenseField load_dense_field(const std::filesystem::path& path) {
  BlobReader r(path, BlobKind::DenseField);
  DenseField f;
  for (int a = 0; a < 3; ++a) f.geometry.origin(a) = r.f64();
  f.geometry.cell_size = r.f64();
  for (int a = 0; a < 3; ++a) f.geometry.dims(a) = int(r.u32());
  const Tensor t = r.tensor();
  if (t.rows() != f.geometry.vertex_count())
    throw Error(ErrorCode::FormatVersionMismatch, io_message(path, "value count does not match lattice"));
  f.values.assign(t.data(), t.data() + t.size());
  return f;
}

// --- PLY -----------------------------------------------------------------------

namespace {

constexpr const char* kPlyProperties =
    "property double x\n"
    "property double y\n"
    "property double z\n"
    "property uchar kind\n"
    "property double v0\n"
    "property double v1\n"
    "property uchar surface\n"
    "end_header\n";

constexpr std::size_t kPlyRecord = 3 * 8 + 1 + 2 * 8 + 1;

}  // namespace

void write_ply(const std::filesystem::path& path, const std::vector<LabeledPoint>& points) {
  std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(points.size()) + "\n";
  out += kPlyProperties;
  for (const LabeledPoint& p : points) {
    for (int a = 0; a < 3; ++a) append(out, p.x(a));
    append(out, std::uint8_t(p.kind));
    append(out, p.v0);
    append(out, p.v1);
    append(out, std::uint8_t(p.on_surface ? 1 : 0));
  }
  write_text(path, out);
}

std::vector<LabeledPoint> read_ply(const std::filesystem::path& path) {
  const std::string buf = read_text(path);
  const std::string prefix = "ply\nformat binary_little_endian 1.0\nelement vertex ";
  if (buf.compare(0, prefix.size(), prefix) != 0)
    throw Error(ErrorCode::FormatVersionMismatch, io_message(path, "unsupported PLY header"));
  const std::size_t nl = buf.find('\n', prefix.size());
  if (nl == std::string::npos) throw Error(ErrorCode::IoError, io_message(path, "truncated PLY header"));
  const std::size_t count = std::stoull(buf.substr(prefix.size(), nl - prefix.size()));
  const std::string props = kPlyProperties;
  if (buf.compare(nl + 1, props.size(), props) != 0)
    throw Error(ErrorCode::FormatVersionMismatch, io_message(path, "unexpected PLY properties"));
  std::size_t pos = nl + 1 + props.size();
  if (buf.size() - pos != count * kPlyRecord) throw Error(ErrorCode::IoError, io_message(path, "PLY body size mismatch"));
  std::vector<LabeledPoint> points(count);
  for (LabeledPoint& p : points) {
    for (int a = 0; a < 3; ++a, pos += 8) std::memcpy(&p.x(a), buf.data() + pos, 8);
    const auto kind = std::uint8_t(buf[pos++]);
    if (kind != 1 && kind != 2) throw Error(ErrorCode::FormatVersionMismatch, io_message(path, "bad point kind"));
    p.kind = LabeledPoint::Kind(kind);
    std::memcpy(&p.v0, buf.data() + pos, 8);
    std::memcpy(&p.v1, buf.data() + pos + 8, 8);
    pos += 16;
    p.on_surface = buf[pos++] != 0;
  }
  return points;
}

// --- poses ---------------------------------------------------------------------

void write_poses(const std::filesystem::path& path, const std::vector<Posed>& poses) {
  std::string out;
  for (const Posed& T : poses) {
    const auto a = T.to_array();
    for (int i = 0; i < 12; ++i) {
      out += format_double(a[std::size_t(i)]);
      out += i == 11 ? '\n' : ' ';
    }
  }
  write_text(path, out);
}

std::vector<Posed> read_poses(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<Posed> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::array<double, 12> a{};
    for (double& v : a)
      if (!(ls >> v)) throw Error(ErrorCode::IoError, io_message(path, "pose line needs 12 numbers"));
    poses.push_back(Posed::from_array(a));
  }
  return poses;
}

}  // namespace hsdf
