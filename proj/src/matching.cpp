#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "nbed/errors.hpp"
#include "nbed/eval.hpp"

namespace nbed {

namespace {

// Hopcroft-Karp over adjacency lists sorted nearest-first, so the greedy
// first phase and every augmenting search prefer closer partners.
class HopcroftKarp {
 public:
  HopcroftKarp(std::vector<std::vector<int>> adj, int right_count)
      : adj_(std::move(adj)),
        match_left_(adj_.size(), -1),
        match_right_(static_cast<std::size_t>(right_count), -1),
        dist_(adj_.size()) {}

  int solve() {
    int size = 0;
    while (bfs()) {
      for (std::size_t u = 0; u < adj_.size(); ++u) {
        if (match_left_[u] == -1 && dfs(static_cast<int>(u))) ++size;
      }
    }
    return size;
  }

  const std::vector<int>& match_left() const { return match_left_; }
  const std::vector<int>& match_right() const { return match_right_; }

 private:
  static constexpr int kInf = std::numeric_limits<int>::max();

  bool bfs() {
    std::queue<int> q;
    for (std::size_t u = 0; u < adj_.size(); ++u) {
      if (match_left_[u] == -1) {
        dist_[u] = 0;
        q.push(static_cast<int>(u));
      } else {
        dist_[u] = kInf;
      }
    }
    bool found = false;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v : adj_[static_cast<std::size_t>(u)]) {
        const int next = match_right_[static_cast<std::size_t>(v)];
        if (next == -1) {
          found = true;
        } else if (dist_[static_cast<std::size_t>(next)] == kInf) {
          dist_[static_cast<std::size_t>(next)] = dist_[static_cast<std::size_t>(u)] + 1;
          q.push(next);
        }
      }
    }
    return found;
  }

  bool dfs(int u) {
    for (int v : adj_[static_cast<std::size_t>(u)]) {
      const int next = match_right_[static_cast<std::size_t>(v)];
      if (next == -1 ||
          (dist_[static_cast<std::size_t>(next)] == dist_[static_cast<std::size_t>(u)] + 1 && dfs(next))) {
        match_left_[static_cast<std::size_t>(u)] = v;
        match_right_[static_cast<std::size_t>(v)] = u;
        return true;
      }
    }
    dist_[static_cast<std::size_t>(u)] = kInf;
    return false;
  }

  std::vector<std::vector<int>> adj_;
  std::vector<int> match_left_, match_right_;
  std::vector<int> dist_;
};

}  // namespace

MatchResult match_boundaries(const Tensor& pred, const Tensor& gt, double d_max) {
  if (pred.rank() != 2 || !pred.same_shape(gt)) {
    throw ShapeError("match_boundaries: shapes " + shape_string(pred.shape()) + " and " + shape_string(gt.shape()) +
                     " differ");
  }
  const int h = pred.dim(0), w = pred.dim(1);
  const std::size_t n = pred.size();
  MatchResult r;
  r.pred_matched.assign(n, 0);
  r.gt_matched.assign(n, 0);

  std::vector<int> gt_index(n, -1), pred_pixels, gt_pixels;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt[i] != 0.0) {
      gt_index[i] = static_cast<int>(gt_pixels.size());
      gt_pixels.push_back(static_cast<int>(i));
    }
    if (pred[i] != 0.0) pred_pixels.push_back(static_cast<int>(i));
  }

  const int radius = static_cast<int>(std::floor(d_max));
  const double d2_max = d_max * d_max;
  std::vector<std::vector<int>> adj(pred_pixels.size());
  std::vector<std::pair<int, int>> candidates;  // (squared distance, gt index)
  for (std::size_t p = 0; p < pred_pixels.size(); ++p) {
    const int py = pred_pixels[p] / w, px = pred_pixels[p] % w;
    candidates.clear();
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        const int y = py + dy, x = px + dx;
        if (y < 0 || y >= h || x < 0 || x >= w || dy * dy + dx * dx > d2_max) continue;
        const int g = gt_index[static_cast<std::size_t>(y) * w + x];
        if (g >= 0) candidates.emplace_back(dy * dy + dx * dx, g);
      }
    std::sort(candidates.begin(), candidates.end());
    for (const auto& c : candidates) adj[p].push_back(c.second);
  }

  HopcroftKarp hk(std::move(adj), static_cast<int>(gt_pixels.size()));
  r.tp = hk.solve();
  for (std::size_t p = 0; p < pred_pixels.size(); ++p) {
    const int g = hk.match_left()[p];
    if (g >= 0) {
      r.pred_matched[static_cast<std::size_t>(pred_pixels[p])] = 1;
      r.gt_matched[static_cast<std::size_t>(gt_pixels[static_cast<std::size_t>(g)])] = 1;
    }
  }
  r.fp = static_cast<std::int64_t>(pred_pixels.size()) - r.tp;
  r.fn = static_cast<std::int64_t>(gt_pixels.size()) - r.tp;
  return r;
}

}  // namespace nbed
