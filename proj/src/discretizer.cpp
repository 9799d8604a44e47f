#include "bspinfer/discretizer.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace bspinfer {

namespace detail {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

SampleStream::SampleStream(std::uint64_t seed, const LeafPath& path) {
  std::uint64_t h = splitmix64(seed ^ 0x5bf03635d66a64a1ULL);
  for (char c : path) {
    h = splitmix64(h ^ static_cast<std::uint64_t>(c));
  }
  h = splitmix64(h ^ static_cast<std::uint64_t>(path.size()));
  state_ = h;
}

double SampleStream::next() {
  state_ = splitmix64(state_);
  return static_cast<double>(state_ >> 11) * 0x1.0p-53;
}

}  // namespace detail

namespace {

[[noreturn]] void bad_sample(std::span<const double> point, double value) {
  std::ostringstream ss;
  ss << "target function returned " << value << " at (";
  for (std::size_t i = 0; i < point.size(); ++i) {
    if (i) ss << ", ";
    ss << point[i];
  }
  ss << "); densities must be nonnegative and finite";
  throw std::runtime_error(ss.str());
}

double checked_eval(const DensityFn& f, std::span<const double> point) {
  double v = f(point);
  if (!std::isfinite(v) || v < 0.0) bad_sample(point, v);
  return v;
}

}  // namespace

RegionEstimate estimate_region(const DensityFn& f, const DyadicBox& box,
                               const DiscretizationConfig& config,
                               const LeafPath& path) {
  if (config.samples_per_region < 2) {
    throw std::invalid_argument("samples_per_region must be >= 2");
  }
  detail::SampleStream stream(config.rng_seed, path);
  int n = box.dims();
  std::vector<double> point = box.center();

  RegionEstimate est;
  est.box = box;
  est.n_samples = config.samples_per_region;

  double sum = 0.0, sum_flogf = 0.0;
  double fmin = 0.0, fmax = 0.0;
  std::vector<double> lo_sum(n, 0.0), hi_sum(n, 0.0);
  std::vector<int> lo_count(n, 0);
  for (int s = 0; s < config.samples_per_region; ++s) {
    if (s > 0) {
      for (int i = 0; i < n; ++i) {
        point[i] = box.lo[i] + stream.next() * (box.hi[i] - box.lo[i]);
      }
    }
    double v = checked_eval(f, point);
    sum += v;
    if (v > 0.0) sum_flogf += v * std::log(v);
    for (int i = 0; i < n; ++i) {
      if (point[i] < 0.5 * (box.lo[i] + box.hi[i])) {
        lo_sum[i] += v;
        ++lo_count[i];
      } else {
        hi_sum[i] += v;
      }
    }
    if (s == 0) {
      fmin = fmax = v;
    } else {
      fmin = std::min(fmin, v);
      fmax = std::max(fmax, v);
    }
  }
  int count = config.samples_per_region;
  est.f_mean = sum / count;
  est.mean_f_log_f = sum_flogf / count;
  est.f_min = fmin;
  est.f_max = fmax;

  // KL improvement of a midpoint split per axis: replacing one mean value
  // by the two half-box means lowers the region's f*log(f/const) error by
  // the concavity gap between the pooled and split entropies.
  auto xlogx = [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; };
  est.split_gain.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    int nl = lo_count[i], nh = count - nl;
    if (nl == 0 || nh == 0) continue;
    double gl = lo_sum[i] / nl, gh = hi_sum[i] / nh;
    double gain = (nl * xlogx(gl) + nh * xlogx(gh)) / count - xlogx(est.f_mean);
    est.split_gain[i] = std::max(gain, 0.0) * box.volume();
  }
  return est;
}

double error_bound(const RegionEstimate& est) {
  double fbar = est.f_mean, fmax = est.f_max, fmin = est.f_min;
  if (fbar <= 0.0 || fmax <= fmin) return 0.0;
  double span = fmax - fmin;
  double low_term =
      fmin > 0.0 ? (fmax - fbar) / span * fmin * std::log(fmin / fbar) : 0.0;
  double high_term = (fbar - fmin) / span * fmax * std::log(fmax / fbar);
  double bound = (low_term + high_term) * est.box.volume();
  return std::max(bound, 0.0);
}

int choose_split_axis(const DensityFn& f, const DyadicBox& box,
                      const DiscretizationConfig& config) {
  int n = box.dims();
  if (n < 1) throw std::invalid_argument("box must have at least one axis");
  std::vector<double> center = box.center();
  std::vector<double> point = center;

  int best_axis = 0;
  double best_score = -1.0;
  for (int k = 0; k < n; ++k) {
    double offset = config.probe_offset * 0.5 * (box.hi[k] - box.lo[k]);
    point[k] = center[k] - offset;
    double lo_val = f(point);
    point[k] = center[k] + offset;
    double hi_val = f(point);
    point[k] = center[k];
    if (!std::isfinite(lo_val) || !std::isfinite(hi_val)) {
      throw std::runtime_error("non-finite probe value while choosing split");
    }
    double top = std::max(lo_val, hi_val);
    double bottom = std::max(std::min(lo_val, hi_val), 1e-300);
    double score = top / bottom;
    if (score > best_score) {
      best_score = score;
      best_axis = k;
    }
  }
  return best_axis;
}

namespace {

struct BuildNode {
  int axis = -1;
  int low = -1;
  int high = -1;
  int depth = 0;
  LeafPath path;
  DyadicBox box{0};
  RegionEstimate est;
  double weight = 1.0;
  double werr = 0.0;      // weight * error_bound
  double wmass = 0.0;     // weight * f_mean * volume
  double wkl = 0.0;       // sampled WKL contribution, signed
  int split_axis = 0;     // axis with the best estimated split gain
};

struct QueueItem {
  double werr;
  int index;
  bool operator<(const QueueItem& o) const {
    // Max-heap on werr; older leaves win ties for determinism.
    if (werr != o.werr) return werr < o.werr;
    return index > o.index;
  }
};

NodePtr build_immutable(const std::vector<BuildNode>& nodes, int idx) {
  const BuildNode& n = nodes[idx];
  if (n.axis < 0) return make_leaf(n.est.f_mean, n.weight);
  return make_split(n.axis, build_immutable(nodes, n.low),
                    build_immutable(nodes, n.high));
}

}  // namespace

DiscretizationResult discretize(const DensityFn& f, const Scope& scope,
                                const DiscretizationConfig& config,
                                const BspTree* weight) {
  if (!(config.delta >= 0.0)) throw std::invalid_argument("delta must be >= 0");
  if (config.max_leaves < 1) {
    throw std::invalid_argument("max_leaves must be >= 1");
  }
  if (!(config.probe_offset > 0.0 && config.probe_offset <= 1.0)) {
    throw std::invalid_argument("probe_offset must be in (0, 1]");
  }
  if (weight && weight->scope() != scope) {
    throw std::invalid_argument("weight tree scope differs from target scope");
  }

  int dims = static_cast<int>(scope.size());
  auto leaf_weight = [&](const DyadicBox& box) {
    if (!weight) return 1.0;
    double w = weight->weight_at(box.center());
    if (!(w > 0.0)) throw std::runtime_error("weight tree has nonpositive leaf");
    return w;
  };

  std::vector<BuildNode> nodes;
  auto init_leaf = [&](LeafPath path, DyadicBox box, int depth) {
    BuildNode n;
    n.depth = depth;
    n.path = std::move(path);
    n.box = std::move(box);
    n.est = estimate_region(f, n.box, config, n.path);
    n.weight = leaf_weight(n.box);
    n.wmass = n.weight * n.est.f_mean * n.box.volume();
    double mc_kl = n.est.mean_f_log_f;
    if (n.est.f_mean > 0.0) {
      mc_kl -= n.est.f_mean * std::log(n.est.f_mean);
    }
    n.wkl = n.weight * mc_kl * n.box.volume();
    double best_gain = 0.0;
    for (int k = 0; k < static_cast<int>(n.est.split_gain.size()); ++k) {
      double g = n.est.split_gain[k];
      if (k < static_cast<int>(config.axis_gain_scale.size())) {
        g *= config.axis_gain_scale[k];
      }
      if (g > best_gain) {
        best_gain = g;
        n.split_axis = k;
      }
    }
    // With axis scaling active the caller cares about profile accuracy
    // along the favored axes, so the scaled gain doubles as the priority;
    // otherwise the conservative single-region bound drives refinement.
    n.werr = n.weight * (config.axis_gain_scale.empty() ? error_bound(n.est)
                                                        : best_gain);
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  };

  // A weight tree also seeds the starting partition: refinement continues
  // from the (typically pruned) structure discovered earlier instead of
  // restarting from a single box, so features already found stay resolved
  // and their local estimates stay sharp.
  std::function<int(const BspNode&, LeafPath, DyadicBox, int)> seed =
      [&](const BspNode& node, LeafPath path, DyadicBox box, int depth) -> int {
    if (node.is_leaf()) return init_leaf(std::move(path), std::move(box), depth);
    int low = seed(*node.low, path + '0', box.half(node.axis, false), depth + 1);
    int high = seed(*node.high, path + '1', box.half(node.axis, true), depth + 1);
    BuildNode n;
    n.axis = node.axis;
    n.low = low;
    n.high = high;
    n.depth = depth;
    n.path = std::move(path);
    n.box = std::move(box);
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  };

  std::priority_queue<QueueItem> queue;
  int root = weight ? seed(*weight->root(), {}, DyadicBox(dims), 0)
                    : init_leaf({}, DyadicBox(dims), 0);
  double total_wkl = 0.0;
  double total_wmass = 0.0;
  std::size_t leaves = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].axis >= 0) continue;
    total_wkl += std::max(nodes[i].wkl, 0.0);
    total_wmass += nodes[i].wmass;
    ++leaves;
    if (nodes[i].depth < config.max_depth && dims > 0) {
      queue.push({nodes[i].werr, static_cast<int>(i)});
    }
  }

  // Per-leaf stop rule: keep splitting while the worst region's weighted
  // error bound exceeds the threshold. In relative mode the threshold
  // scales with the running mass estimate, so the rule is insensitive to
  // the absolute scale of the target.
  while (leaves < config.max_leaves && !queue.empty()) {
    double threshold =
        config.delta_is_relative ? config.delta * total_wmass : config.delta;
    if (!(queue.top().werr > threshold)) break;

    int idx = queue.top().index;
    queue.pop();
    int axis = nodes[idx].split_axis;

    int low = init_leaf(nodes[idx].path + '0', nodes[idx].box.half(axis, false),
                        nodes[idx].depth + 1);
    int high = init_leaf(nodes[idx].path + '1', nodes[idx].box.half(axis, true),
                         nodes[idx].depth + 1);
    nodes[idx].axis = axis;
    nodes[idx].low = low;
    nodes[idx].high = high;

    total_wkl += std::max(nodes[low].wkl, 0.0) + std::max(nodes[high].wkl, 0.0) -
                 std::max(nodes[idx].wkl, 0.0);
    total_wmass += nodes[low].wmass + nodes[high].wmass - nodes[idx].wmass;
    for (int child : {low, high}) {
      if (nodes[child].depth < config.max_depth) {
        queue.push({nodes[child].werr, child});
      }
    }
    ++leaves;
  }

  DiscretizationResult result{BspTree(scope, build_immutable(nodes, root)),
                              {},
                              total_wkl};
  for (const BuildNode& n : nodes) {
    if (n.axis < 0) result.leaf_errors.emplace(n.path, std::max(n.wkl, 0.0));
  }
  return result;
}

}  // namespace bspinfer
