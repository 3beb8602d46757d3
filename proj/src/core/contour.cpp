#include <algorithm>
#include <array>
#include <cmath>

#include "s2c/error.hpp"
#include "s2c/synth.hpp"

namespace s2c::synth {

namespace {

double dist(const GeoPoint& a, const GeoPoint& b) { return std::hypot(b.x - a.x, b.y - a.y); }

// Grid corners are pixel centers (px + 0.5, py + 0.5) on a lattice padded by
// one virtual non-water pixel on every side. A vertex sits on the lattice edge
// between two corners of different value, at their midpoint.
class Lattice {
 public:
  explicit Lattice(const BinaryMask& m) : mask_(m), stride_(m.width() + 2) {}

  int value(int px, int py) const {
    if (px < 0 || py < 0 || px >= mask_.width() || py >= mask_.height()) return 0;
    return mask_.at(py, px);
  }
  bool inside(int px, int py) const { return px >= 0 && py >= 0 && px < mask_.width() && py < mask_.height(); }

  // Horizontal edge joins (px,py)-(px+1,py); vertical joins (px,py)-(px,py+1).
  std::int64_t h_id(int px, int py) const { return (static_cast<std::int64_t>(py + 1) * stride_ + (px + 1)) * 2; }
  std::int64_t v_id(int px, int py) const { return h_id(px, py) + 1; }
  std::int64_t id_count() const { return static_cast<std::int64_t>(stride_) * (mask_.height() + 2) * 2; }

  GeoPoint position(std::int64_t id) const {
    const std::int64_t cell = id / 2;
    const int px = static_cast<int>(cell % stride_) - 1;
    const int py = static_cast<int>(cell / stride_) - 1;
    if (id % 2 == 0) return {px + 1.0, py + 0.5};
    return {px + 0.5, py + 1.0};
  }
  // Both pixels of the edge lie inside the tile: a real fine-mask transition.
  bool real(std::int64_t id) const {
    const std::int64_t cell = id / 2;
    const int px = static_cast<int>(cell % stride_) - 1;
    const int py = static_cast<int>(cell / stride_) - 1;
    if (id % 2 == 0) return inside(px, py) && inside(px + 1, py);
    return inside(px, py) && inside(px, py + 1);
  }

 private:
  const BinaryMask& mask_;
  int stride_;
};

}  // namespace

Contour Contour::from_polygon(std::vector<GeoPoint> vertices) {
  require(vertices.size() >= 3, "contour needs at least 3 vertices");
  Contour c;
  c.vertices = std::move(vertices);
  c.sampleable.assign(c.vertices.size(), 1);
  for (std::size_t i = 0; i < c.vertices.size(); ++i) c.length += dist(c.vertices[i], c.vertices[(i + 1) % c.vertices.size()]);
  c.sampleable_length = c.length;
  return c;
}

std::vector<Contour> extract_contours(const BinaryMask& fine) {
  const std::size_t water = fine.count();
  if (water == 0 || water == fine.data().size())
    fail(ErrorKind::usage, "extract_contours: mask has no water/non-water boundary");

  const Lattice lat(fine);
  std::vector<std::int64_t> next(static_cast<std::size_t>(lat.id_count()), -1);

  for (int cy = -1; cy < fine.height(); ++cy) {
    for (int cx = -1; cx < fine.width(); ++cx) {
      // corners clockwise from top-left; edge k joins corner k and k+1
      const std::array<int, 4> v = {lat.value(cx, cy), lat.value(cx + 1, cy), lat.value(cx + 1, cy + 1),
                                    lat.value(cx, cy + 1)};
      const int sum = v[0] + v[1] + v[2] + v[3];
      if (sum == 0 || sum == 4) continue;
      const std::array<std::int64_t, 4> edge = {lat.h_id(cx, cy), lat.v_id(cx + 1, cy), lat.h_id(cx, cy + 1),
                                                lat.v_id(cx, cy)};
      // Pair each entering crossing with the next leaving crossing clockwise;
      // in saddle cells this keeps diagonal water pixels apart.
      for (int k = 0; k < 4; ++k) {
        if (!(v[k] == 0 && v[(k + 1) % 4] == 1)) continue;
        for (int j = 1; j < 4; ++j) {
          const int e = (k + j) % 4;
          if (v[e] == 1 && v[(e + 1) % 4] == 0) {
            next[static_cast<std::size_t>(edge[k])] = edge[e];
            break;
          }
        }
      }
    }
  }

  std::vector<Contour> loops;
  std::vector<std::uint8_t> seen(next.size(), 0);
  for (std::size_t start = 0; start < next.size(); ++start) {
    if (next[start] < 0 || seen[start]) continue;
    std::vector<std::int64_t> ids;
    for (auto id = static_cast<std::int64_t>(start); !seen[static_cast<std::size_t>(id)];
         id = next[static_cast<std::size_t>(id)]) {
      seen[static_cast<std::size_t>(id)] = 1;
      ids.push_back(id);
      if (next[static_cast<std::size_t>(id)] < 0) fail(ErrorKind::internal, "marching squares produced an open chain");
    }
    Contour c;
    c.vertices.reserve(ids.size());
    for (auto id : ids) c.vertices.push_back(lat.position(id));
    c.sampleable.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t j = (i + 1) % ids.size();
      const double len = dist(c.vertices[i], c.vertices[j]);
      c.length += len;
      c.sampleable[i] = lat.real(ids[i]) && lat.real(ids[j]);
      if (c.sampleable[i]) c.sampleable_length += len;
    }
    loops.push_back(std::move(c));
  }

  std::stable_sort(loops.begin(), loops.end(), [](const Contour& a, const Contour& b) {
    if (a.sampleable_length != b.sampleable_length) return a.sampleable_length > b.sampleable_length;
    return a.length > b.length;
  });
  return loops;
}

ContourPath::ContourPath(const Contour& contour) {
  const std::size_t n = contour.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!contour.sampleable[i]) continue;
    const auto& a = contour.vertices[i];
    const auto& b = contour.vertices[(i + 1) % n];
    const double len = dist(a, b);
    if (len <= 0.0) continue;
    a_.push_back(a);
    b_.push_back(b);
    starts_.push_back(total_);
    total_ += len;
  }
}

GeoPoint ContourPath::at(double s) const {
  require(total_ > 0.0, "contour has no sampleable length");
  s = std::fmod(s, total_);
  if (s < 0.0) s += total_;
  auto it = std::upper_bound(starts_.begin(), starts_.end(), s);
  const std::size_t i = static_cast<std::size_t>(std::distance(starts_.begin(), it)) - 1;
  const double seg = (i + 1 < starts_.size() ? starts_[i + 1] : total_) - starts_[i];
  const double t = std::clamp((s - starts_[i]) / seg, 0.0, 1.0);
  return {a_[i].x + t * (b_[i].x - a_[i].x), a_[i].y + t * (b_[i].y - a_[i].y)};
}

}  // namespace s2c::synth
