#include "hsdf/diff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <sstream>

namespace hsdf {

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

bool is_scalar(const Tensor& t) { return t.rows() == 1 && t.cols() == 1; }

void check_binary(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return;
  if (is_scalar(a) || is_scalar(b)) return;
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

Tensor broadcast(const Tensor& t, Index rows, Index cols) {
  if (t.rows() == rows && t.cols() == cols) return t;
  return Tensor::Constant(rows, cols, t(0, 0));
}

/// Adds `g` (shaped like the op output) into the gradient of `v`, reducing
/// over broadcast dimensions.
void accumulate(Tape& tape, int id, const Tensor& g) {
  if (!tape.requires_grad(id)) return;
  Tensor& dst = tape.grad(id);
  if (dst.rows() == g.rows() && dst.cols() == g.cols()) {
    dst += g;
  } else {
    dst(0, 0) += g.sum();
  }
}

bool any_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars)
    if (v.requires_grad()) return true;
  return false;
}

}  // namespace

// --- Var / Tape --------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Tensor& v = value();
  if (!is_scalar(v)) throw Error(ErrorCode::NonScalarOutput, "value is " + shape_str(v));
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Tensor value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, int(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::scalar(double value) { return constant(Tensor::Constant(1, 1, value)); }

Var Tape::param(Param& p, bool trainable) {
  Var v = push(p.value, trainable, nullptr);
  if (trainable) nodes_[v.id()].param = &p;
  return v;
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var output) {
  const Tensor& out = value(output.id());
  if (!is_scalar(out)) throw Error(ErrorCode::NonScalarOutput, "backward from " + shape_str(out));
  if (!nodes_[output.id()].requires_grad) return;
  grad(output.id())(0, 0) += 1.0;
  for (int id = output.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      Param& p = *n.param;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
      p.grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
  }
}

// --- elementwise ---------------------------------------------------------------

Var operator+(Var a, Var b) {
  check_binary(a.value(), b.value(), "add");
  const Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
  Tensor v = broadcast(a.value(), r, c) + broadcast(b.value(), r, c);
  const int ia = a.id(), ib = b.id();
  return a.tape().push(std::move(v), any_grad({a, b}), [ia, ib](Tape& t, const Tensor& g) {
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

Var operator-(Var a, Var b) {
  check_binary(a.value(), b.value(), "sub");
  const Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
  Tensor v = broadcast(a.value(), r, c) - broadcast(b.value(), r, c);
  const int ia = a.id(), ib = b.id();
  return a.tape().push(std::move(v), any_grad({a, b}), [ia, ib](Tape& t, const Tensor& g) {
    accumulate(t, ia, g);
    accumulate(t, ib, -g);
  });
}

Var operator*(Var a, Var b) {
  check_binary(a.value(), b.value(), "mul");
  const Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
  Tensor v = broadcast(a.value(), r, c).cwiseProduct(broadcast(b.value(), r, c));
  const int ia = a.id(), ib = b.id();
  return a.tape().push(std::move(v), any_grad({a, b}), [ia, ib, r, c](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) accumulate(t, ia, g.cwiseProduct(broadcast(t.value(ib), r, c)));
    if (t.requires_grad(ib)) accumulate(t, ib, g.cwiseProduct(broadcast(t.value(ia), r, c)));
  });
}

Var operator-(Var a) { return -1.0 * a; }

Var operator*(double s, Var a) {
  const int ia = a.id();
  return a.tape().push(s * a.value(), a.requires_grad(), [ia, s](Tape& t, const Tensor& g) { accumulate(t, ia, s * g); });
}

Var operator+(Var a, double c) {
  const int ia = a.id();
  Tensor v = a.value().array() + c;
  return a.tape().push(std::move(v), a.requires_grad(), [ia](Tape& t, const Tensor& g) { accumulate(t, ia, g); });
}

Var div(Var a, Var b) {
  check_binary(a.value(), b.value(), "div");
  const Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
  Tensor v = broadcast(a.value(), r, c).cwiseQuotient(broadcast(b.value(), r, c));
  const int ia = a.id(), ib = b.id();
  return a.tape().push(std::move(v), any_grad({a, b}), [ia, ib, r, c](Tape& t, const Tensor& g) {
    const Tensor bv = broadcast(t.value(ib), r, c);
    if (t.requires_grad(ia)) accumulate(t, ia, g.cwiseQuotient(bv));
    if (t.requires_grad(ib)) {
      const Tensor av = broadcast(t.value(ia), r, c);
      accumulate(t, ib, -(g.cwiseProduct(av).cwiseQuotient(bv.cwiseProduct(bv))));
    }
  });
}

Var add(Var a, const Tensor& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols())
    throw Error(ErrorCode::ShapeMismatch, "add const: " + shape_str(a.value()) + " vs " + shape_str(c));
  const int ia = a.id();
  return a.tape().push(a.value() + c, a.requires_grad(), [ia](Tape& t, const Tensor& g) { accumulate(t, ia, g); });
}

Var mul(Var a, const Tensor& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols())
    throw Error(ErrorCode::ShapeMismatch, "mul const: " + shape_str(a.value()) + " vs " + shape_str(c));
  const int ia = a.id();
  return a.tape().push(a.value().cwiseProduct(c), a.requires_grad(),
                       [ia, c](Tape& t, const Tensor& g) { accumulate(t, ia, g.cwiseProduct(c)); });
}

Var relu(Var a) {
  const int ia = a.id();
  return a.tape().push(a.value().cwiseMax(0.0), a.requires_grad(), [ia](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    accumulate(t, ia, (x.array() > 0.0).select(g, 0.0));
  });
}

Var abs(Var a) {
  const int ia = a.id();
  return a.tape().push(a.value().cwiseAbs(), a.requires_grad(), [ia](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    Tensor s = (x.array() > 0.0).select(g, (x.array() < 0.0).select(-g, 0.0));
    accumulate(t, ia, s);
  });
}

Var exp(Var a) {
  const int ia = a.id();
  Tensor v = a.value().array().exp().matrix();
  return a.tape().push(v, a.requires_grad(), [ia, v](Tape& t, const Tensor& g) { accumulate(t, ia, g.cwiseProduct(v)); });
}

Var square(Var a) {
  const int ia = a.id();
  return a.tape().push(a.value().cwiseAbs2(), a.requires_grad(), [ia](Tape& t, const Tensor& g) {
    accumulate(t, ia, 2.0 * g.cwiseProduct(t.value(ia)));
  });
}

Var sqrt(Var a) {
  const int ia = a.id();
  Tensor v = a.value().cwiseSqrt();
  return a.tape().push(v, a.requires_grad(), [ia, v](Tape& t, const Tensor& g) {
    accumulate(t, ia, (v.array() > 0.0).select(g.array() / (2.0 * v.array()), 0.0).matrix());
  });
}

Var max(Var a, double c) {
  const int ia = a.id();
  return a.tape().push(a.value().cwiseMax(c), a.requires_grad(), [ia, c](Tape& t, const Tensor& g) {
    accumulate(t, ia, (t.value(ia).array() >= c).select(g, 0.0));
  });
}

Var max(Var a, Var b) {
  check_binary(a.value(), b.value(), "max");
  const Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
  const Tensor av = broadcast(a.value(), r, c), bv = broadcast(b.value(), r, c);
  const int ia = a.id(), ib = b.id();
  return a.tape().push(av.cwiseMax(bv), any_grad({a, b}), [ia, ib, r, c](Tape& t, const Tensor& g) {
    const Tensor av = broadcast(t.value(ia), r, c), bv = broadcast(t.value(ib), r, c);
    const auto pick_a = av.array() >= bv.array();
    if (t.requires_grad(ia)) accumulate(t, ia, pick_a.select(g, 0.0));
    if (t.requires_grad(ib)) accumulate(t, ib, pick_a.select(0.0, g));
  });
}

Var geman_mcclure(Var a, double sigma) {
  const double s2 = sigma * sigma;
  const int ia = a.id();
  Tensor r2 = a.value().cwiseAbs2();
  Tensor v = (s2 * r2.array() / (s2 + r2.array())).matrix();
  return a.tape().push(std::move(v), a.requires_grad(), [ia, s2](Tape& t, const Tensor& g) {
    const auto r = t.value(ia).array();
    const auto den = s2 + r.square();
    accumulate(t, ia, (g.array() * 2.0 * r * s2 * s2 / den.square()).matrix());
  });
}

// --- reductions --------------------------------------------------------------

Var sum(Var a) {
  const int ia = a.id();
  return a.tape().push(Tensor::Constant(1, 1, a.value().sum()), a.requires_grad(),
                       [ia](Tape& t, const Tensor& g) { t.grad(ia).array() += g(0, 0); });
}

Var mean(Var a) {
  const Index n = a.value().size();
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "mean of empty tensor");
  return (1.0 / double(n)) * sum(a);
}

Var row_sum(Var a) {
  const int ia = a.id();
  Tensor v = a.value().rowwise().sum();
  return a.tape().push(std::move(v), a.requires_grad(), [ia](Tape& t, const Tensor& g) {
    Tensor& dst = t.grad(ia);
    dst.colwise() += g.col(0);
  });
}

Var norm(Var a) {
  const int ia = a.id();
  const double n = a.value().norm();
  return a.tape().push(Tensor::Constant(1, 1, n), a.requires_grad(), [ia, n](Tape& t, const Tensor& g) {
    if (n > 0.0) t.grad(ia) += (g(0, 0) / n) * t.value(ia);
  });
}

// --- structural --------------------------------------------------------------

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_cols of nothing");
  const Index rows = parts[0].rows();
  Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw Error(ErrorCode::ShapeMismatch, "concat_cols row count");
    cols += p.cols();
    rg = rg || p.requires_grad();
  }
  Tensor v(rows, cols);
  std::vector<int> ids;
  std::vector<Index> widths;
  Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  return parts[0].tape().push(std::move(v), rg, [ids, widths](Tape& t, const Tensor& g) {
    Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.requires_grad(ids[i])) t.grad(ids[i]) += g.middleCols(off, widths[i]);
      off += widths[i];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_rows of nothing");
  const Index cols = parts[0].cols();
  Index rows = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw Error(ErrorCode::ShapeMismatch, "concat_rows column count");
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Tensor v(rows, cols);
  std::vector<int> ids;
  std::vector<Index> heights;
  Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  return parts[0].tape().push(std::move(v), rg, [ids, heights](Tape& t, const Tensor& g) {
    Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.requires_grad(ids[i])) t.grad(ids[i]) += g.middleRows(off, heights[i]);
      off += heights[i];
    }
  });
}

Var gather_rows(Var a, std::span<const Index> rows) {
  const Tensor& av = a.value();
  Tensor v(Index(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows()) throw Error(ErrorCode::ShapeMismatch, "gather_rows index out of range");
    v.row(Index(i)) = av.row(rows[i]);
  }
  const int ia = a.id();
  std::vector<Index> idx(rows.begin(), rows.end());
  return a.tape().push(std::move(v), a.requires_grad(), [ia, idx = std::move(idx)](Tape& t, const Tensor& g) {
    Tensor& dst = t.grad(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) dst.row(idx[i]) += g.row(Index(i));
  });
}

Var scatter_rows(Var a, std::span<const Index> rows, Index n) {
  const Tensor& av = a.value();
  if (Index(rows.size()) != av.rows()) throw Error(ErrorCode::ShapeMismatch, "scatter_rows index count");
  Tensor v = Tensor::Zero(n, av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n) throw Error(ErrorCode::ShapeMismatch, "scatter_rows index out of range");
    v.row(rows[i]) += av.row(Index(i));
  }
  const int ia = a.id();
  std::vector<Index> idx(rows.begin(), rows.end());
  return a.tape().push(std::move(v), a.requires_grad(), [ia, idx = std::move(idx)](Tape& t, const Tensor& g) {
    Tensor& dst = t.grad(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) dst.row(Index(i)) += g.row(idx[i]);
  });
}

Var linear(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.cols() != wv.cols() || bv.rows() != 1 || bv.cols() != wv.rows())
    throw Error(ErrorCode::ShapeMismatch,
                "linear: x " + shape_str(xv) + ", W " + shape_str(wv) + ", b " + shape_str(bv));
  Tensor v = xv * wv.transpose();
  v.rowwise() += bv.row(0);
  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().push(std::move(v), any_grad({x, weight, bias}), [ix, iw, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ix)) t.grad(ix).noalias() += g * t.value(iw);
    if (t.requires_grad(iw)) t.grad(iw).noalias() += g.transpose() * t.value(ix);
    if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
  });
}

// --- lattice ops ---------------------------------------------------------------

Vec3 LatticeGeometry::vertex(Index flat) const {
  const Index nx = dims.x(), ny = dims.y();
  const Index i = flat % nx;
  const Index j = (flat / nx) % ny;
  const Index k = flat / (nx * ny);
  return origin + cell_size * Vec3(double(i), double(j), double(k));
}

bool LatticeGeometry::contains(const Vec3& x) const {
  const double tol = 1e-9 * cell_size;
  const Vec3 hi = upper();
  for (int a = 0; a < 3; ++a)
    if (!(x(a) >= origin(a) - tol && x(a) <= hi(a) + tol)) return false;
  return true;
}

TrilinearStencil trilinear_stencil(const LatticeGeometry& g, const Vec3& x) {
  if (!g.contains(x)) {
    std::ostringstream os;
    os << "query (" << x.x() << ", " << x.y() << ", " << x.z() << ") outside lattice";
    throw Error(ErrorCode::OutOfBounds, os.str());
  }
  std::array<Index, 3> base{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const int n = g.dims(a);
    double u = (x(a) - g.origin(a)) / g.cell_size;
    u = std::clamp(u, 0.0, double(n - 1));
    Index i0 = Index(std::floor(u));
    if (i0 > n - 2) i0 = n - 2;
    base[a] = i0;
    frac[a] = u - double(i0);
  }
  const double inv = 1.0 / g.cell_size;
  TrilinearStencil s;
  for (int c = 0; c < 8; ++c) {
    const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
    const double wx = bx ? frac[0] : 1.0 - frac[0];
    const double wy = by ? frac[1] : 1.0 - frac[1];
    const double wz = bz ? frac[2] : 1.0 - frac[2];
    const double sx = bx ? inv : -inv, sy = by ? inv : -inv, sz = bz ? inv : -inv;
    s.vertex[c] = g.flat(int(base[0] + bx), int(base[1] + by), int(base[2] + bz));
    s.weight[c] = wx * wy * wz;
    s.weight_grad[c] = Vec3(sx * wy * wz, wx * sy * wz, wx * wy * sz);
  }
  return s;
}

namespace {

// Cell of a query: flat index of the lower corner and fractional offsets.
struct CellQuery {
  Index base = 0;
  Vec3 frac = Vec3::Zero();
};

CellQuery locate(const LatticeGeometry& g, const Vec3& x) {
  if (!g.contains(x)) {
    std::ostringstream os;
    os << "query (" << x.x() << ", " << x.y() << ", " << x.z() << ") outside lattice";
    throw Error(ErrorCode::OutOfBounds, os.str());
  }
  std::array<int, 3> base{};
  CellQuery q;
  for (int a = 0; a < 3; ++a) {
    const int n = g.dims(a);
    double u = (x(a) - g.origin(a)) / g.cell_size;
    u = std::clamp(u, 0.0, double(n - 1));
    int i0 = int(std::floor(u));
    if (i0 > n - 2) i0 = n - 2;
    base[a] = i0;
    q.frac(a) = u - double(i0);
  }
  q.base = g.flat(base[0], base[1], base[2]);
  return q;
}

}  // namespace

Var gather_trilinear(const LatticeGeometry& g, Var features, Var points) {
  const Tensor& F = features.value();
  const Tensor& P = points.value();
  if (F.rows() != g.vertex_count())
    throw Error(ErrorCode::ShapeMismatch, "gather_trilinear: features " + shape_str(F) + " for " +
                                              std::to_string(g.vertex_count()) + " vertices");
  if (P.cols() != 3) throw Error(ErrorCode::ShapeMismatch, "gather_trilinear: points " + shape_str(P));
  const Index n = P.rows(), d = F.cols();
  const Index sy = g.dims.x(), sz = Index(g.dims.x()) * g.dims.y();
  const std::array<Index, 8> offset{0, 1, sy, sy + 1, sz, sz + 1, sz + sy, sz + sy + 1};
  auto cells = std::make_shared<std::vector<CellQuery>>(std::size_t(n));
  Tensor v = Tensor::Zero(n, d);
  for (Index i = 0; i < n; ++i) {
    const CellQuery& q = (*cells)[std::size_t(i)] = locate(g, P.row(i).transpose());
    double* out = v.data() + i * d;
    for (int c = 0; c < 8; ++c) {
      const double w = (c & 1 ? q.frac(0) : 1.0 - q.frac(0)) * ((c >> 1) & 1 ? q.frac(1) : 1.0 - q.frac(1)) *
                       ((c >> 2) & 1 ? q.frac(2) : 1.0 - q.frac(2));
      if (w == 0.0) continue;
      const double* f = F.data() + (q.base + offset[std::size_t(c)]) * d;
      for (Index k = 0; k < d; ++k) out[k] += w * f[k];
    }
  }
  const int iF = features.id(), iP = points.id();
  const double inv = 1.0 / g.cell_size;
  return features.tape().push(std::move(v), any_grad({features, points}),
                              [iF, iP, cells, offset, inv, d](Tape& t, const Tensor& G) {
    const bool gf = t.requires_grad(iF), gp = t.requires_grad(iP);
    const Tensor& F = t.value(iF);
    Tensor* dF = gf ? &t.grad(iF) : nullptr;
    Tensor* dP = gp ? &t.grad(iP) : nullptr;
    for (std::size_t i = 0; i < cells->size(); ++i) {
      const CellQuery& q = (*cells)[i];
      const double* gi = G.data() + Index(i) * d;
      for (int c = 0; c < 8; ++c) {
        const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
        const double wx = bx ? q.frac(0) : 1.0 - q.frac(0);
        const double wy = by ? q.frac(1) : 1.0 - q.frac(1);
        const double wz = bz ? q.frac(2) : 1.0 - q.frac(2);
        const Index row = q.base + offset[std::size_t(c)];
        const double w = wx * wy * wz;
        if (gf && w != 0.0) {
          double* df = dF->data() + row * d;
          for (Index k = 0; k < d; ++k) df[k] += w * gi[k];
        }
        if (gp) {
          const double* f = F.data() + row * d;
          double proj = 0.0;
          for (Index k = 0; k < d; ++k) proj += gi[k] * f[k];
          const Vec3 wg((bx ? inv : -inv) * wy * wz, wx * (by ? inv : -inv) * wz, wx * wy * (bz ? inv : -inv));
          dP->row(Index(i)) += proj * wg.transpose();
        }
      }
    }
  });
}

namespace {

// Calls fn(out_vertex, in_vertex) for every in-bounds neighbour at offset.
template <typename Fn>
void for_each_shift(const Eigen::Vector3i& dims, int dx, int dy, int dz, Fn&& fn) {
  const int nx = dims.x(), ny = dims.y(), nz = dims.z();
  for (int k = std::max(0, -dz); k < std::min(nz, nz - dz); ++k)
    for (int j = std::max(0, -dy); j < std::min(ny, ny - dy); ++j) {
      const Index row_out = Index(nx) * (j + Index(ny) * k);
      const Index row_in = Index(nx) * ((j + dy) + Index(ny) * (k + dz));
      for (int i = std::max(0, -dx); i < std::min(nx, nx - dx); ++i) fn(row_out + i, row_in + i + dx);
    }
}

}  // namespace

Var conv3d(Var input, const Eigen::Vector3i& dims, Var weight, Var bias) {
  const Tensor& X = input.value();
  const Tensor& W = weight.value();
  const Tensor& B = bias.value();
  const Index V = Index(dims.x()) * dims.y() * dims.z();
  const Index cin = X.cols(), cout = W.rows();
  if (X.rows() != V || W.cols() != 27 * cin || B.rows() != 1 || B.cols() != cout)
    throw Error(ErrorCode::ShapeMismatch,
                "conv3d: input " + shape_str(X) + ", weight " + shape_str(W) + ", bias " + shape_str(B));
  Tensor out(V, cout);
  out.rowwise() = B.row(0);
  Tensor shifted(V, cin);
  for (int o = 0; o < 27; ++o) {
    const int dx = o % 3 - 1, dy = (o / 3) % 3 - 1, dz = o / 9 - 1;
    shifted.setZero();
    for_each_shift(dims, dx, dy, dz, [&](Index vo, Index vi) { shifted.row(vo) = X.row(vi); });
    out.noalias() += shifted * W.middleCols(o * cin, cin).transpose();
  }
  const int ix = input.id(), iw = weight.id(), ib = bias.id();
  return input.tape().push(std::move(out), any_grad({input, weight, bias}), [ix, iw, ib, dims, V, cin](Tape& t, const Tensor& g) {
    const Tensor& X = t.value(ix);
    const Tensor& W = t.value(iw);
    const bool gx = t.requires_grad(ix), gw = t.requires_grad(iw);
    Tensor shifted(V, cin);
    for (int o = 0; o < 27; ++o) {
      const int dx = o % 3 - 1, dy = (o / 3) % 3 - 1, dz = o / 9 - 1;
      if (gw) {
        shifted.setZero();
        for_each_shift(dims, dx, dy, dz, [&](Index vo, Index vi) { shifted.row(vo) = X.row(vi); });
        t.grad(iw).middleCols(o * cin, cin).noalias() += g.transpose() * shifted;
      }
      if (gx) {
        Tensor back = g * W.middleCols(o * cin, cin);
        Tensor& dX = t.grad(ix);
        for_each_shift(dims, dx, dy, dz, [&](Index vo, Index vi) { dX.row(vi) += back.row(vo); });
      }
    }
    if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
  });
}

Var avg_pool_scatter(Var values, std::span<const Index> vertex_of_row, Index vertex_count) {
  const Tensor& X = values.value();
  if (Index(vertex_of_row.size()) != X.rows()) throw Error(ErrorCode::ShapeMismatch, "avg_pool_scatter index count");
  Eigen::VectorXd count = Eigen::VectorXd::Zero(vertex_count);
  Tensor out = Tensor::Zero(vertex_count, X.cols());
  for (std::size_t i = 0; i < vertex_of_row.size(); ++i) {
    const Index v = vertex_of_row[i];
    if (v < 0) continue;
    if (v >= vertex_count) throw Error(ErrorCode::ShapeMismatch, "avg_pool_scatter vertex out of range");
    out.row(v) += X.row(Index(i));
    count(v) += 1.0;
  }
  for (Index v = 0; v < vertex_count; ++v)
    if (count(v) > 0.0) out.row(v) /= count(v);
  const int ix = values.id();
  std::vector<Index> idx(vertex_of_row.begin(), vertex_of_row.end());
  return values.tape().push(std::move(out), values.requires_grad(), [ix, idx = std::move(idx), count](Tape& t, const Tensor& g) {
    Tensor& dX = t.grad(ix);
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (idx[i] >= 0) dX.row(Index(i)) += g.row(idx[i]) / count(idx[i]);
  });
}

Var rigid_transform(Var eps, const Posed& left, Var points, double sign) {
  const Tensor& E = eps.value();
  const Tensor& P = points.value();
  if (E.rows() != 1 || E.cols() != 6) throw Error(ErrorCode::ShapeMismatch, "rigid_transform: eps " + shape_str(E));
  if (P.cols() != 3) throw Error(ErrorCode::ShapeMismatch, "rigid_transform: points " + shape_str(P));
  const Twistd twist = sign * Twistd(E.row(0).transpose());
  const Posed M = left * se3_exp(twist);
  Tensor v = P * M.rotation.transpose();
  v.rowwise() += M.translation.transpose();
  const int ie = eps.id(), ip = points.id();
  return eps.tape().push(std::move(v), any_grad({eps, points}), [ie, ip, left, M, twist, sign](Tape& t, const Tensor& g) {
    if (t.requires_grad(ip)) t.grad(ip).noalias() += g * M.rotation;
    if (t.requires_grad(ie)) {
      const auto parts = exp_jacobian_parts(twist);
      const Tensor& P = t.value(ip);
      // h_i = R_left^T g_i ; rot = -(sum_i (R^T h_i) x x_i)^T Jr + (sum h_i)^T Dv
      Tensor H = g * left.rotation;           // rows h_i^T
      Tensor A = H * parts.R;                  // rows (R^T h_i)^T
      Vec3 cross_sum = Vec3::Zero();
      for (Index i = 0; i < P.rows(); ++i) {
        const Vec3 a = A.row(i).transpose();
        cross_sum += a.cross(Vec3(P.row(i).transpose()));
      }
      const Vec3 hsum = H.colwise().sum().transpose();
      Eigen::Matrix<double, 1, 6> ge;
      ge.head<3>() = -(cross_sum.transpose() * parts.Jr) + hsum.transpose() * parts.Dv;
      ge.tail<3>() = hsum.transpose() * parts.V;
      t.grad(ie).row(0) += sign * ge;
    }
  });
}

// --- Adam ----------------------------------------------------------------------

Adam::Adam(std::vector<Param*> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (Param* p : params_) {
    m_.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void Adam::step() {
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(step_));
  const double c2 = 1.0 - std::pow(b2, double(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * p.grad;
    v_[i] = b2 * v_[i] + (1.0 - b2) * p.grad.cwiseAbs2();
    p.value.array() -= options_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + options_.eps);
  }
}

}  // namespace hsdf
