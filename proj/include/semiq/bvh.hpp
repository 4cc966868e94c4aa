#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <numeric>
#include <vector>

namespace semiq {

struct Aabb {
  Eigen::VectorXd lo, hi;

  bool contains(const Eigen::VectorXd& pt) const {
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (pt[i] < lo[i] || pt[i] > hi[i]) return false;
    return true;
  }
  void merge(const Aabb& o) {
    lo = lo.cwiseMin(o.lo);
    hi = hi.cwiseMax(o.hi);
  }
};

/// Static axis-aligned bounding-box tree; median split over box centroids.
class AabbTree {
 public:
  AabbTree() = default;

  explicit AabbTree(std::vector<Aabb> boxes) : boxes_(std::move(boxes)) {
    if (boxes_.empty()) return;
    order_.resize(boxes_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * boxes_.size());
    root_ = build(0, static_cast<int>(order_.size()));
  }

  /// Indices of all boxes containing `pt`.
  std::vector<int> query(const Eigen::VectorXd& pt) const {
    std::vector<int> out;
    if (root_ < 0) return out;
    std::vector<int> stack{root_};
    while (!stack.empty()) {
      const int ni = stack.back();
      stack.pop_back();
      const Node& node = nodes_[static_cast<std::size_t>(ni)];
      if (!node.box.contains(pt)) continue;
      if (node.left < 0) {
        for (int k = node.begin; k < node.end; ++k) {
          const int bi = order_[static_cast<std::size_t>(k)];
          if (boxes_[static_cast<std::size_t>(bi)].contains(pt)) out.push_back(bi);
        }
      } else {
        stack.push_back(node.left);
        stack.push_back(node.right);
      }
    }
    return out;
  }

  bool empty() const { return root_ < 0; }
  const Aabb& root_box() const { return nodes_[static_cast<std::size_t>(root_)].box; }

 private:
  struct Node {
    Aabb box;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // into order_, for leaves
  };

  int build(int begin, int end) {
    Node node;
    node.box = boxes_[static_cast<std::size_t>(order_[static_cast<std::size_t>(begin)])];
    for (int k = begin + 1; k < end; ++k)
      node.box.merge(boxes_[static_cast<std::size_t>(order_[static_cast<std::size_t>(k)])]);
    if (end - begin <= 8) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(std::move(node));
      return static_cast<int>(nodes_.size()) - 1;
    }
    int axis = 0;
    (node.box.hi - node.box.lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const auto& ba = boxes_[static_cast<std::size_t>(a)];
                       const auto& bb = boxes_[static_cast<std::size_t>(b)];
                       return ba.lo[axis] + ba.hi[axis] < bb.lo[axis] + bb.hi[axis];
                     });
    const int l = build(begin, mid);
    const int r = build(mid, end);
    node.left = l;
    node.right = r;
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Aabb> boxes_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace semiq
