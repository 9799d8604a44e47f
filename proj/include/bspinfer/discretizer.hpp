#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "bspinfer/bsp_tree.hpp"

namespace bspinfer {

// Nonnegative target function over (a box inside) the unit hypercube.
using DensityFn = std::function<double(std::span<const double>)>;

// Sampled statistics of the target over one box.
struct RegionEstimate {
  double f_mean = 0.0;
  double f_max = 0.0;
  double f_min = 0.0;
  // Sampled mean of f*log(f); lets callers form a Monte Carlo estimate of
  // the leaf's KL contribution without re-sampling.
  double mean_f_log_f = 0.0;
  // Per-axis estimate of the KL improvement a midpoint split would bring
  // (two-bin profile gain times box volume), from the same samples.
  std::vector<double> split_gain;
  int n_samples = 0;
  DyadicBox box{0};
};

struct DiscretizationConfig {
  // Per-leaf stop threshold: refinement continues while some region's
  // weighted error bound exceeds it. When delta_is_relative is set, the
  // threshold is delta times the running mass estimate (sum of weighted
  // leaf means times volume), which makes the stop rule invariant to the
  // overall scale of the target.
  double delta = 0.01;
  bool delta_is_relative = false;
  std::size_t max_leaves = 1024;
  int samples_per_region = 16;
  std::uint64_t rng_seed = 0;
  double probe_offset = 0.25;  // fraction of the box half-width
  int max_depth = 40;
  // Optional per-axis multipliers applied to the split-gain estimates when
  // choosing a split axis (empty means all ones). Lets a caller steer
  // refinement toward axes whose resolution matters most downstream, e.g.
  // the query axis of a root clique whose other axes are integrated out.
  std::vector<double> axis_gain_scale;
};

struct DiscretizationResult {
  BspTree tree;
  // Sampled WKL contribution of every produced leaf, keyed by leaf path;
  // feeds pruning in the iterative algorithm.
  std::unordered_map<LeafPath, double> leaf_errors;
  // Summed sampled KL contributions at the time the loop stopped.
  double final_error_total = 0.0;
};

// Deterministic sampling stream: samples_per_region points uniform in the
// box, keyed by (rng_seed, leaf path); the box center is always included.
RegionEstimate estimate_region(const DensityFn& f, const DyadicBox& box,
                               const DiscretizationConfig& config,
                               const LeafPath& path = {});

// Upper bound on the KL contribution of approximating f by its mean over
// the estimated box.
double error_bound(const RegionEstimate& est);

// Axis with the largest max/min ratio of f probed at center +- offset
// along each axis; ties go to the lowest axis index.
int choose_split_axis(const DensityFn& f, const DyadicBox& box,
                      const DiscretizationConfig& config);

// Greedy priority-queue discretization of f over [0,1]^scope. When a
// weight tree is supplied, leaf error estimates are multiplied by the
// weight at the leaf's box center and produced leaves store that weight.
DiscretizationResult discretize(const DensityFn& f, const Scope& scope,
                                const DiscretizationConfig& config,
                                const BspTree* weight = nullptr);

namespace detail {
// Counter-based uniform stream over [0,1); deterministic across platforms.
class SampleStream {
 public:
  SampleStream(std::uint64_t seed, const LeafPath& path);
  double next();

 private:
  std::uint64_t state_;
};
}  // namespace detail

}  // namespace bspinfer
