#pragma once

#include <functional>
#include <vector>

#include "bspinfer/bsp_tree.hpp"
#include "bspinfer/discretizer.hpp"
#include "bspinfer/network.hpp"

namespace bspinfer {

// Dense midpoint-rule function values on a regular grid over [0,1]^n.
// Used only as a verification oracle.
struct GridFunction {
  Scope scope;
  int resolution = 0;  // points per axis
  std::vector<double> values;  // row-major over cell centers

  static GridFunction sample(const DensityFn& f, Scope scope, int resolution);
  double total_cells() const { return static_cast<double>(values.size()); }
};

// Midpoint-rule KL between two functions on [0,1]^dims, both renormalized
// on the grid first; q is floored at 1e-300, p = 0 cells contribute 0.
double grid_kl(const DensityFn& p, const DensityFn& q, int dims,
               int resolution);
double grid_kl(const DensityFn& p, const BspTree& q, int resolution);
double grid_kl(const BspTree& p, const BspTree& q, int resolution);

double default_grid_resolution(int dims);

using Density1D = std::function<double(double)>;

// Closed-form posterior of the robot network: the product of
// N(x3; (o1+2*o2)/3, 1/60) and the o3 sigmoid gate, normalized on [0,1].
Density1D exact_robot_posterior(double o1, double o2);

// The same posterior by direct nested quadrature of the factored joint
// over (x1, x2); an independent derivation of exact_robot_posterior.
// Returns midpoint values of the normalized density on a grid of
// `out_resolution` cells; `inner_resolution` points per integration axis.
std::vector<double> robot_posterior_by_quadrature(double o1, double o2,
                                                  int out_resolution,
                                                  int inner_resolution);

// The three-variable robot chain of the experiments: uniform prior on x1,
// random-walk transitions and two position sensors with variance 0.01,
// and a discrete halfspace sensor on x3 (gain 40, threshold 0.5).
HybridNetwork make_robot_network(double o1, double o2, bool o3_true);

// Full balanced tree with bins_per_axis leaves per axis (power of two),
// axes split in round-robin order; leaf values are sampled means with the
// same estimator and seed discipline as the discretizer.
BspTree uniform_baseline(const DensityFn& f, const Scope& scope,
                         int bins_per_axis, const DiscretizationConfig& config);

// Ordered interior cut positions of a 1-D piecewise partition.
struct Breakpoints1D {
  std::vector<double> cuts;  // strictly increasing, inside (0,1)
  bool converged = false;
  double kl = 0.0;  // objective value at the returned iterate
};

struct DescentConfig {
  double gradient_step = 1e-5;
  double initial_rate = 0.05;
  double gradient_tolerance = 1e-7;
  int max_steps = 10000;
  double min_gap = 1e-4;
  int quadrature_resolution = 1 << 17;
};

// Numeric-gradient descent on breakpoint positions minimizing the KL from
// f to its mean-discretization; initialized at equal-mass quantiles.
Breakpoints1D optimal_1d_discretization(const Density1D& f, int intervals,
                                        const DescentConfig& config = {});

// KL from f to the mean-discretization induced by the breakpoints,
// evaluated with the same prefix-integral quadrature the descent uses.
double breakpoint_kl(const Density1D& f, const std::vector<double>& cuts,
                     int quadrature_resolution = 1 << 17);

// Piecewise-constant mean-discretization of f on the given cuts, as an
// evaluable density.
Density1D piecewise_mean_density(const Density1D& f,
                                 const std::vector<double>& cuts,
                                 int quadrature_resolution = 1 << 17);

}  // namespace bspinfer
