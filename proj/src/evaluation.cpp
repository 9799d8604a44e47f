#include "bspinfer/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bspinfer {

namespace {

constexpr double kDensityFloor = 1e-300;

double safe_log_ratio(double p, double q) {
  if (p <= 0.0) return 0.0;
  return p * std::log(p / std::max(q, kDensityFloor));
}

// Runs fn(point) for every cell center of the regular grid.
template <typename Fn>
void for_each_cell(int dims, int resolution, Fn&& fn) {
  std::vector<int> idx(dims, 0);
  std::vector<double> point(dims);
  while (true) {
    for (int i = 0; i < dims; ++i) {
      point[i] = (idx[i] + 0.5) / resolution;
    }
    fn(point);
    int axis = dims - 1;
    while (axis >= 0 && ++idx[axis] == resolution) {
      idx[axis] = 0;
      --axis;
    }
    if (axis < 0) break;
  }
}

// 1-D piecewise-constant function as sorted cell boundaries and values.
struct Piecewise1D {
  std::vector<double> bounds;  // size m+1, bounds.front()=0, bounds.back()=1
  std::vector<double> values;  // size m
};

Piecewise1D piecewise_from_tree(const BspTree& tree, bool honor_log_scale) {
  if (tree.dims() != 1) {
    throw std::invalid_argument("piecewise extraction needs a 1-D tree");
  }
  Piecewise1D pw;
  double scale = honor_log_scale ? std::exp(tree.log_scale()) : 1.0;
  // In-order traversal of a 1-D tree yields sorted intervals.
  tree.for_each_leaf([&](const LeafPath&, const DyadicBox& box,
                         const BspNode& leaf) {
    if (pw.bounds.empty()) pw.bounds.push_back(box.lo[0]);
    pw.bounds.push_back(box.hi[0]);
    pw.values.push_back(leaf.value * scale);
  });
  return pw;
}

struct Prefix1D {
  std::vector<double> cum_f;      // cum_f[k] = integral of f over [0, k/Q]
  std::vector<double> samples;    // f at midpoints
  double total = 0.0;             // integral of f over [0,1]
  double f_log_f = 0.0;           // integral of f*log(f)
  int resolution = 0;

  double cumulative(double x) const {
    x = std::clamp(x, 0.0, 1.0);
    double pos = x * resolution;
    int j = std::min(static_cast<int>(pos), resolution - 1);
    double frac = pos - j;
    return cum_f[j] + frac * samples[j] / resolution;
  }
};

Prefix1D build_prefix(const Density1D& f, int resolution) {
  Prefix1D p;
  p.resolution = resolution;
  p.samples.resize(resolution);
  p.cum_f.resize(resolution + 1, 0.0);
  for (int i = 0; i < resolution; ++i) {
    double v = f((i + 0.5) / resolution);
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::runtime_error("density sample is negative or not finite");
    }
    p.samples[i] = v;
    p.cum_f[i + 1] = p.cum_f[i] + v / resolution;
    if (v > 0.0) p.f_log_f += v * std::log(v) / resolution;
  }
  p.total = p.cum_f[resolution];
  return p;
}

// KL between a smooth density and a piecewise-constant function, with
// interval masses taken from the interpolated prefix integral. Both sides
// are renormalized.
double kl_smooth_vs_piecewise(const Prefix1D& p, const Piecewise1D& q) {
  double sq = 0.0;
  for (std::size_t j = 0; j < q.values.size(); ++j) {
    sq += q.values[j] * (q.bounds[j + 1] - q.bounds[j]);
  }
  if (!(p.total > 0.0) || !(sq > 0.0)) {
    throw std::runtime_error("cannot renormalize a zero-mass density");
  }
  double cross = 0.0;  // integral of p * log(q)
  for (std::size_t j = 0; j < q.values.size(); ++j) {
    double mass = p.cumulative(q.bounds[j + 1]) - p.cumulative(q.bounds[j]);
    cross += mass * std::log(std::max(q.values[j], kDensityFloor));
  }
  return (p.f_log_f - cross) / p.total - std::log(p.total) + std::log(sq);
}

double kl_piecewise_vs_piecewise(const Piecewise1D& p, const Piecewise1D& q) {
  std::vector<double> bounds;
  bounds.reserve(p.bounds.size() + q.bounds.size());
  std::merge(p.bounds.begin(), p.bounds.end(), q.bounds.begin(), q.bounds.end(),
             std::back_inserter(bounds));
  bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());

  auto value_at = [](const Piecewise1D& pw, double x) {
    auto it = std::upper_bound(pw.bounds.begin(), pw.bounds.end(), x);
    std::size_t j = std::min<std::size_t>(it - pw.bounds.begin(),
                                          pw.values.size()) - 1;
    return pw.values[j];
  };

  double sp = 0.0, sq = 0.0, cross = 0.0;
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
    double width = bounds[i + 1] - bounds[i];
    double mid = 0.5 * (bounds[i] + bounds[i + 1]);
    double pv = value_at(p, mid);
    double qv = value_at(q, mid);
    sp += pv * width;
    sq += qv * width;
    cross += safe_log_ratio(pv, qv) * width;
  }
  if (!(sp > 0.0) || !(sq > 0.0)) {
    throw std::runtime_error("cannot renormalize a zero-mass density");
  }
  return cross / sp - std::log(sp) + std::log(sq);
}

}  // namespace

GridFunction GridFunction::sample(const DensityFn& f, Scope scope,
                                  int resolution) {
  if (resolution < 2) throw std::invalid_argument("resolution must be >= 2");
  GridFunction g;
  g.scope = std::move(scope);
  g.resolution = resolution;
  int dims = static_cast<int>(g.scope.size());
  for_each_cell(dims, resolution, [&](const std::vector<double>& point) {
    double v = f(point);
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::runtime_error("grid sample is negative or not finite");
    }
    g.values.push_back(v);
  });
  return g;
}

double grid_kl(const DensityFn& p, const DensityFn& q, int dims,
               int resolution) {
  double sp = 0.0, sq = 0.0, cross = 0.0;
  for_each_cell(dims, resolution, [&](const std::vector<double>& point) {
    double pv = p(point);
    double qv = q(point);
    sp += pv;
    sq += qv;
    cross += safe_log_ratio(pv, qv);
  });
  if (!(sp > 0.0) || !(sq > 0.0)) {
    throw std::runtime_error("cannot renormalize a zero-mass density");
  }
  return cross / sp - std::log(sp) + std::log(sq);
}

double grid_kl(const DensityFn& p, const BspTree& q, int resolution) {
  if (q.dims() == 1) {
    // Piecewise-exact interval integration; a midpoint grid would smear
    // the jumps of q across cells.
    auto pw = piecewise_from_tree(q, false);
    auto prefix = build_prefix([&](double x) { return p(std::span(&x, 1)); },
                               resolution);
    return kl_smooth_vs_piecewise(prefix, pw);
  }
  return grid_kl(p, [&](std::span<const double> x) { return q.value_at(x); },
                 q.dims(), resolution);
}

double grid_kl(const BspTree& p, const BspTree& q, int resolution) {
  if (p.scope() != q.scope()) {
    throw std::invalid_argument("operand scopes differ");
  }
  if (p.dims() == 1) {
    return kl_piecewise_vs_piecewise(piecewise_from_tree(p, false),
                                     piecewise_from_tree(q, false));
  }
  return grid_kl([&](std::span<const double> x) { return p.value_at(x); },
                 [&](std::span<const double> x) { return q.value_at(x); },
                 p.dims(), resolution);
}

double default_grid_resolution(int dims) {
  switch (dims) {
    case 1: return 100000;
    case 2: return 2000;
    case 3: return 200;
    default: return 64;
  }
}

Density1D exact_robot_posterior(double o1, double o2) {
  if (o1 < 0.0 || o1 > 1.0 || o2 < 0.0 || o2 > 1.0) {
    throw std::invalid_argument("observations must lie in [0,1]");
  }
  double mean = (o1 + 2.0 * o2) / 3.0;
  double variance = 1.0 / 60.0;
  auto unnormalized = [mean, variance](double x) {
    double gauss = std::exp(-(x - mean) * (x - mean) / (2.0 * variance)) /
                   std::sqrt(2.0 * M_PI * variance);
    return gauss / (1.0 + std::exp(40.0 * (x - 0.5)));
  };
  int res = 1 << 17;
  double z = 0.0;
  for (int i = 0; i < res; ++i) z += unnormalized((i + 0.5) / res) / res;
  return [unnormalized, z](double x) { return unnormalized(x) / z; };
}

std::vector<double> robot_posterior_by_quadrature(double o1, double o2,
                                                  int out_resolution,
                                                  int inner_resolution) {
  auto gauss = [](double d, double variance) {
    return std::exp(-d * d / (2.0 * variance)) /
           std::sqrt(2.0 * M_PI * variance);
  };
  // Innermost integral of the factored joint: over x1.
  std::vector<double> g(inner_resolution, 0.0);
  for (int j = 0; j < inner_resolution; ++j) {
    double x2 = (j + 0.5) / inner_resolution;
    double acc = 0.0;
    for (int i = 0; i < inner_resolution; ++i) {
      double x1 = (i + 0.5) / inner_resolution;
      acc += gauss(x2 - x1, 0.01) * gauss(o1 - x1, 0.01);
    }
    g[j] = acc / inner_resolution;
  }
  // Then over x2, gating by the discrete sensor on x3.
  std::vector<double> h(out_resolution, 0.0);
  double z = 0.0;
  for (int k = 0; k < out_resolution; ++k) {
    double x3 = (k + 0.5) / out_resolution;
    double acc = 0.0;
    for (int j = 0; j < inner_resolution; ++j) {
      double x2 = (j + 0.5) / inner_resolution;
      acc += gauss(x3 - x2, 0.01) * gauss(o2 - x2, 0.01) * g[j];
    }
    h[k] = acc / inner_resolution / (1.0 + std::exp(40.0 * (x3 - 0.5)));
    z += h[k] / out_resolution;
  }
  for (double& v : h) v /= z;
  return h;
}

HybridNetwork make_robot_network(double o1, double o2, bool o3_true) {
  HybridNetwork net;
  for (const char* name : {"x1", "x2", "x3", "o1", "o2"}) {
    net.variables.push_back({name, false, 0.0, 1.0, {}});
  }
  net.variables.push_back({"o3", true, 0.0, 1.0, {"true", "false"}});

  std::pair<double, double> unit{0.0, 1.0};
  net.factors.push_back({"x1", ContinuousFactor::uniform("x1", unit)});
  net.factors.push_back(
      {"o1", ContinuousFactor::linear_gaussian({"o1", "x1"}, {unit, unit},
                                               {1.0, -1.0}, 0.0, 0.01)});
  net.factors.push_back(
      {"x2", ContinuousFactor::linear_gaussian({"x2", "x1"}, {unit, unit},
                                               {1.0, -1.0}, 0.0, 0.01)});
  net.factors.push_back(
      {"o2", ContinuousFactor::linear_gaussian({"o2", "x2"}, {unit, unit},
                                               {1.0, -1.0}, 0.0, 0.01)});
  net.factors.push_back(
      {"x3", ContinuousFactor::linear_gaussian({"x3", "x2"}, {unit, unit},
                                               {1.0, -1.0}, 0.0, 0.01)});
  net.factors.push_back(
      {"o3", ContinuousFactor::logistic("x3", unit, 40.0, 0.5, "o3")});

  net.evidence.continuous["o1"] = o1;
  net.evidence.continuous["o2"] = o2;
  net.evidence.discrete["o3"] = o3_true ? "true" : "false";
  net.query = "x3";
  return net;
}

BspTree uniform_baseline(const DensityFn& f, const Scope& scope,
                         int bins_per_axis, const DiscretizationConfig& config) {
  if (bins_per_axis < 1 || (bins_per_axis & (bins_per_axis - 1)) != 0) {
    throw std::invalid_argument("bins_per_axis must be a power of two");
  }
  int dims = static_cast<int>(scope.size());
  int splits_per_axis = 0;
  while ((1 << splits_per_axis) < bins_per_axis) ++splits_per_axis;
  int total_depth = dims * splits_per_axis;

  std::function<NodePtr(LeafPath&, DyadicBox&, int)> build =
      [&](LeafPath& path, DyadicBox& box, int depth) -> NodePtr {
    if (depth == total_depth) {
      auto est = estimate_region(f, box, config, path);
      return make_leaf(est.f_mean);
    }
    int axis = depth % dims;
    double lo = box.lo[axis], hi = box.hi[axis];
    double mid = 0.5 * (lo + hi);

    path.push_back('0');
    box.hi[axis] = mid;
    auto low = build(path, box, depth + 1);
    box.hi[axis] = hi;
    path.back() = '1';
    box.lo[axis] = mid;
    auto high = build(path, box, depth + 1);
    box.lo[axis] = lo;
    path.pop_back();
    return make_split(axis, std::move(low), std::move(high));
  };

  LeafPath path;
  DyadicBox box(dims);
  return BspTree(scope, build(path, box, 0));
}

namespace {

struct BreakpointObjective {
  const Prefix1D* prefix;
  double min_gap;

  double operator()(const std::vector<double>& cuts) const {
    double acc = 0.0;
    double prev_b = 0.0, prev_p = 0.0;
    for (std::size_t j = 0; j <= cuts.size(); ++j) {
      double b = j < cuts.size() ? cuts[j] : 1.0;
      double pb = j < cuts.size() ? prefix->cumulative(b) : prefix->total;
      double mass = pb - prev_p;
      double width = b - prev_b;
      if (mass > 0.0 && width > 0.0) {
        acc += mass * std::log(mass / width);
      }
      prev_b = b;
      prev_p = pb;
    }
    // KL of the renormalized pair; the mean-discretization mass equals the
    // density mass, so the normalizers cancel.
    return (prefix->f_log_f - acc) / prefix->total;
  }

  void project(std::vector<double>& cuts) const {
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t j = 0; j < cuts.size(); ++j) {
      double lo = (j == 0 ? 0.0 : cuts[j - 1]) + min_gap;
      cuts[j] = std::max(cuts[j], lo);
    }
    for (std::size_t j = cuts.size(); j-- > 0;) {
      double hi = (j + 1 == cuts.size() ? 1.0 : cuts[j + 1]) - min_gap;
      cuts[j] = std::min(cuts[j], hi);
    }
  }
};

}  // namespace

Breakpoints1D optimal_1d_discretization(const Density1D& f, int intervals,
                                        const DescentConfig& config) {
  if (intervals < 2) throw std::invalid_argument("need at least 2 intervals");
  auto prefix = build_prefix(f, config.quadrature_resolution);
  BreakpointObjective objective{&prefix, config.min_gap};

  // Equal-mass quantile initialization.
  std::vector<double> cuts(intervals - 1);
  for (int j = 1; j < intervals; ++j) {
    double target = prefix.total * j / intervals;
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      (prefix.cumulative(mid) < target ? lo : hi) = mid;
    }
    cuts[j - 1] = 0.5 * (lo + hi);
  }
  objective.project(cuts);

  double value = objective(cuts);
  double rate = config.initial_rate;
  bool converged = false;

  std::vector<double> grad(cuts.size()), trial(cuts.size());
  for (int step = 0; step < config.max_steps; ++step) {
    double grad_norm = 0.0;
    for (std::size_t j = 0; j < cuts.size(); ++j) {
      std::vector<double> probe = cuts;
      probe[j] = cuts[j] + config.gradient_step;
      double up = objective(probe);
      probe[j] = cuts[j] - config.gradient_step;
      double down = objective(probe);
      grad[j] = (up - down) / (2.0 * config.gradient_step);
      grad_norm = std::max(grad_norm, std::abs(grad[j]));
    }
    if (grad_norm < config.gradient_tolerance) {
      converged = true;
      break;
    }
    // Backtracking halving on rejected steps.
    bool accepted = false;
    while (rate > 1e-12) {
      for (std::size_t j = 0; j < cuts.size(); ++j) {
        trial[j] = cuts[j] - rate * grad[j];
      }
      objective.project(trial);
      double trial_value = objective(trial);
      if (trial_value < value) {
        cuts = trial;
        value = trial_value;
        rate *= 1.2;
        accepted = true;
        break;
      }
      rate *= 0.5;
    }
    if (!accepted) {
      converged = grad_norm < 1e-4;
      break;
    }
  }

  Breakpoints1D result;
  result.cuts = std::move(cuts);
  result.converged = converged;
  result.kl = value;
  return result;
}

double breakpoint_kl(const Density1D& f, const std::vector<double>& cuts,
                     int quadrature_resolution) {
  auto prefix = build_prefix(f, quadrature_resolution);
  BreakpointObjective objective{&prefix, 0.0};
  return objective(cuts);
}

Density1D piecewise_mean_density(const Density1D& f,
                                 const std::vector<double>& cuts,
                                 int quadrature_resolution) {
  auto prefix = build_prefix(f, quadrature_resolution);
  std::vector<double> bounds;
  bounds.push_back(0.0);
  bounds.insert(bounds.end(), cuts.begin(), cuts.end());
  bounds.push_back(1.0);
  std::vector<double> values(bounds.size() - 1);
  for (std::size_t j = 0; j + 1 < bounds.size(); ++j) {
    double mass = prefix.cumulative(bounds[j + 1]) - prefix.cumulative(bounds[j]);
    values[j] = mass / (bounds[j + 1] - bounds[j]);
  }
  return [bounds, values](double x) {
    auto it = std::upper_bound(bounds.begin(), bounds.end(), x);
    std::size_t j =
        std::min<std::size_t>(it - bounds.begin(), values.size()) - 1;
    return values[j];
  };
}

}  // namespace bspinfer
