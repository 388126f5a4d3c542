#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hybridcal/error.hpp"
#include "hybridcal/geom.hpp"
#include "hybridcal/parallel.hpp"

namespace hycal {

// Parallel arrays; colors (and the per-point colored flag) are either empty or
// the same length as points.
struct ReflectivityCloud {
  std::vector<Vec3> points;
  std::vector<double> reflectivity;
  std::vector<double> timestamps;
  std::vector<Vec3> colors;
  std::vector<std::uint8_t> colored;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_colors() const { return !colors.empty(); }

  void reserve(std::size_t n) {
    points.reserve(n);
    reflectivity.reserve(n);
    timestamps.reserve(n);
  }

  void push_back(const Vec3& p, double refl, double t) {
    points.push_back(p);
    reflectivity.push_back(refl);
    timestamps.push_back(t);
  }

  void append(const ReflectivityCloud& other) {
    if (has_colors() != other.has_colors() && !empty() && !other.empty())
      throw InvalidPoint("cannot append a colored cloud to an uncolored one");
    points.insert(points.end(), other.points.begin(), other.points.end());
    reflectivity.insert(reflectivity.end(), other.reflectivity.begin(), other.reflectivity.end());
    timestamps.insert(timestamps.end(), other.timestamps.begin(), other.timestamps.end());
    colors.insert(colors.end(), other.colors.begin(), other.colors.end());
    colored.insert(colored.end(), other.colored.begin(), other.colored.end());
  }

  bool consistent() const {
    const auto n = points.size();
    if (reflectivity.size() != n || timestamps.size() != n) return false;
    if (!colors.empty() && (colors.size() != n || colored.size() != n)) return false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!points[i].allFinite()) return false;
      if (!(reflectivity[i] >= 0.0 && reflectivity[i] <= 1.0)) return false;
    }
    return true;
  }
};

inline ReflectivityCloud transform_cloud(const ReflectivityCloud& in, const Pose& T) {
  ReflectivityCloud out = in;
  for (auto& p : out.points) p = T.apply(p);
  return out;
}

// ---------------------------------------------------------------------------
// KD-tree
// ---------------------------------------------------------------------------

struct Neighbor {
  int index;
  double distance;
};

// Exact k-NN over a point set. Ties in distance resolve to the lower index, so
// results match a brute-force scan exactly.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.empty()) throw EmptyCloud("cannot build a KD-tree over zero points");
    std::vector<int> idx(points_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    nodes_.reserve(points_.size());
    root_ = build(idx, 0, static_cast<int>(idx.size()));
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  std::vector<Neighbor> nearest_k(const Vec3& q, std::size_t k) const {
    std::vector<Neighbor> out;
    if (k == 0) return out;
    Heap heap;
    search(root_, q, k, heap);
    out.resize(heap.size());
    for (std::size_t i = heap.size(); i-- > 0;) {
      out[i] = {heap.top().second, std::sqrt(heap.top().first)};
      heap.pop();
    }
    return out;
  }

  // Nearest neighbour within max_dist, or index -1.
  Neighbor nearest_within(const Vec3& q, double max_dist) const {
    if (!(max_dist >= 0)) return {-1, 0.0};
    Entry best{max_dist * max_dist, std::numeric_limits<int>::max()};
    search1(root_, q, best);
    if (best.second == std::numeric_limits<int>::max()) return {-1, 0.0};
    return {best.second, std::sqrt(best.first)};
  }

  std::vector<int> radius_search(const Vec3& q, double radius) const {
    std::vector<int> out;
    radius_impl(root_, q, radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    int point;
    int axis;
    int left;
    int right;
  };
  using Entry = std::pair<double, int>;  // (squared distance, index), lexicographic
  using Heap = std::priority_queue<Entry>;

  int build(std::vector<int>& idx, int begin, int end) {
    if (begin >= end) return -1;
    Vec3 lo = points_[idx[begin]], hi = lo;
    for (int i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(points_[idx[i]]);
      hi = hi.cwiseMax(points_[idx[i]]);
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end, [&](int a, int b) {
      const double ca = points_[a][axis], cb = points_[b][axis];
      return ca < cb || (ca == cb && a < b);
    });
    const int node = static_cast<int>(nodes_.size());
    nodes_.push_back({idx[mid], axis, -1, -1});
    const int left = build(idx, begin, mid);
    const int right = build(idx, mid + 1, end);
    nodes_[node].left = left;
    nodes_[node].right = right;
    return node;
  }

  void search(int node, const Vec3& q, std::size_t k, Heap& heap) const {
    if (node < 0) return;
    const Node& n = nodes_[node];
    const Vec3& p = points_[n.point];
    const double d2 = (p - q).squaredNorm();
    const Entry e{d2, n.point};
    if (heap.size() < k) {
      heap.push(e);
    } else if (e < heap.top()) {
      heap.pop();
      heap.push(e);
    }
    const double diff = q[n.axis] - p[n.axis];
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    search(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.top().first) search(far, q, k, heap);
  }

  void search1(int node, const Vec3& q, Entry& best) const {
    if (node < 0) return;
    const Node& n = nodes_[node];
    const Vec3& p = points_[n.point];
    const Entry e{(p - q).squaredNorm(), n.point};
    if (e < best) best = e;
    const double diff = q[n.axis] - p[n.axis];
    search1(diff < 0 ? n.left : n.right, q, best);
    if (diff * diff <= best.first) search1(diff < 0 ? n.right : n.left, q, best);
  }

  void radius_impl(int node, const Vec3& q, double r2, std::vector<int>& out) const {
    if (node < 0) return;
    const Node& n = nodes_[node];
    const Vec3& p = points_[n.point];
    if ((p - q).squaredNorm() <= r2) out.push_back(n.point);
    const double diff = q[n.axis] - p[n.axis];
    if (diff <= 0 || diff * diff <= r2) radius_impl(n.left, q, r2, out);
    if (diff >= 0 || diff * diff <= r2) radius_impl(n.right, q, r2, out);
  }

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

inline KdTree build_kdtree(const ReflectivityCloud& cloud) { return KdTree(cloud.points); }

inline std::vector<Neighbor> nearest_k(const KdTree& tree, const Vec3& q, std::size_t k) {
  return tree.nearest_k(q, k);
}

// ---------------------------------------------------------------------------
// Voxel grid
// ---------------------------------------------------------------------------

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

inline VoxelKey voxel_key(const Vec3& p, double voxel) {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel))};
}

// One point per occupied voxel: centroid, mean reflectivity (and color),
// earliest timestamp. Output order follows first occupancy in the input.
inline ReflectivityCloud voxel_downsample(const ReflectivityCloud& cloud, double voxel) {
  if (!(voxel > 0)) throw InvalidPoint("voxel size must be positive");
  struct Acc {
    Vec3 sum = Vec3::Zero();
    double refl = 0;
    double t = 0;
    Vec3 color = Vec3::Zero();
    int colored = 0;
    int n = 0;
  };
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slot;
  std::vector<Acc> acc;
  const bool colors = cloud.has_colors();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto [it, inserted] = slot.try_emplace(voxel_key(cloud.points[i], voxel), acc.size());
    if (inserted) acc.emplace_back();
    Acc& a = acc[it->second];
    a.sum += cloud.points[i];
    a.refl += cloud.reflectivity[i];
    a.t = a.n == 0 ? cloud.timestamps[i] : std::min(a.t, cloud.timestamps[i]);
    if (colors && cloud.colored[i]) {
      a.color += cloud.colors[i];
      ++a.colored;
    }
    ++a.n;
  }
  ReflectivityCloud out;
  out.reserve(acc.size());
  for (const Acc& a : acc) {
    out.push_back(a.sum / a.n, std::clamp(a.refl / a.n, 0.0, 1.0), a.t);
    if (colors) {
      out.colors.push_back(a.colored ? Vec3(a.color / a.colored) : Vec3::Zero());
      out.colored.push_back(a.colored ? 1 : 0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normals
// ---------------------------------------------------------------------------

inline std::vector<Vec3> estimate_normals(const ReflectivityCloud& cloud, std::size_t k,
                                          const Vec3& viewpoint = Vec3::Zero()) {
  if (k < 3 || cloud.size() < k)
    throw TooFewPoints("normal estimation needs at least k >= 3 points (k=" + std::to_string(k) +
                       ", cloud=" + std::to_string(cloud.size()) + ")");
  const KdTree tree(cloud.points);
  std::vector<Vec3> normals(cloud.size());
  parallel_for(cloud.size(), [&](std::size_t i) {
    const auto nn = tree.nearest_k(cloud.points[i], k);
    Vec3 mean = Vec3::Zero();
    for (const auto& n : nn) mean += cloud.points[n.index];
    mean /= static_cast<double>(nn.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& n : nn) {
      const Vec3 d = cloud.points[n.index] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 normal = es.eigenvectors().col(0).normalized();
    if (normal.dot(viewpoint - cloud.points[i]) < 0) normal = -normal;
    normals[i] = normal;
  }, 1024);
  return normals;
}

}  // namespace hycal
