#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "edtrack/types.hpp"

namespace edtrack {

struct Neighbor {
  int index = -1;
  double distance = std::numeric_limits<double>::infinity();

  // Ties resolve to the smaller index so queries are order independent.
  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  }
};

/// Static 3-d tree over a point set. Points are copied; indices refer to the
/// input order.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(points_.size());
    if (!points_.empty()) build(0, int(points_.size()));
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& point(int i) const { return points_[std::size_t(i)]; }

  /// k nearest neighbors sorted by ascending distance (fewer if size() < k).
  std::vector<Neighbor> knn(const Vec3& query, int k) const {
    std::vector<Neighbor> heap;
    if (k <= 0 || points_.empty()) return heap;
    heap.reserve(std::size_t(k) + 1);
    search(0, int(points_.size()), query, std::size_t(k), heap);
    std::sort_heap(heap.begin(), heap.end());
    for (auto& n : heap) n.distance = std::sqrt(n.distance);
    return heap;
  }

  Neighbor nearest(const Vec3& query) const {
    auto r = knn(query, 1);
    return r.empty() ? Neighbor{} : r.front();
  }

  /// All points within `radius`, sorted by distance.
  std::vector<Neighbor> radius_search(const Vec3& query, double radius) const {
    std::vector<Neighbor> out;
    if (!points_.empty()) radius_rec(0, int(points_.size()), query, radius * radius, out);
    for (auto& n : out) n.distance = std::sqrt(n.distance);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Split {
    int axis;
    double value;
  };

  // Node for the subrange [lo, hi) lives at nodes_[mid] where mid = (lo+hi)/2.
  void build(int lo, int hi) {
    if (hi - lo <= 0) return;
    if (nodes_.size() < points_.size()) nodes_.resize(points_.size());
    Vec3 mn = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 mx = -mn;
    for (int i = lo; i < hi; ++i) {
      mn = mn.cwiseMin(points_[order_[i]]);
      mx = mx.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    const int mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](int a, int b) {
                       const double pa = points_[a](axis), pb = points_[b](axis);
                       return pa < pb || (pa == pb && a < b);
                     });
    nodes_[mid] = {axis, points_[order_[mid]](axis)};
    build(lo, mid);
    build(mid + 1, hi);
  }

  void offer(std::vector<Neighbor>& heap, std::size_t k, Neighbor n) const {
    if (heap.size() < k) {
      heap.push_back(n);
      std::push_heap(heap.begin(), heap.end());
    } else if (n < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = n;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(int lo, int hi, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap) const {
    if (hi - lo <= 0) return;
    const int mid = (lo + hi) / 2;
    const int idx = order_[mid];
    offer(heap, k, {idx, (points_[idx] - q).squaredNorm()});
    const Split& s = nodes_[mid];
    const double diff = q(s.axis) - s.value;
    const bool left_first = diff <= 0;
    if (left_first) search(lo, mid, q, k, heap); else search(mid + 1, hi, q, k, heap);
    // Equality keeps tie-breaking by index exact across the split plane.
    if (heap.size() < k || diff * diff <= heap.front().distance) {
      if (left_first) search(mid + 1, hi, q, k, heap); else search(lo, mid, q, k, heap);
    }
  }

  void radius_rec(int lo, int hi, const Vec3& q, double r2, std::vector<Neighbor>& out) const {
    if (hi - lo <= 0) return;
    const int mid = (lo + hi) / 2;
    const int idx = order_[mid];
    const double d2 = (points_[idx] - q).squaredNorm();
    if (d2 <= r2) out.push_back({idx, d2});
    const Split& s = nodes_[mid];
    const double diff = q(s.axis) - s.value;
    if (diff <= 0 || diff * diff <= r2) radius_rec(lo, mid, q, r2, out);
    if (diff >= 0 || diff * diff <= r2) radius_rec(mid + 1, hi, q, r2, out);
  }

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Split> nodes_;
};

}  // namespace edtrack
