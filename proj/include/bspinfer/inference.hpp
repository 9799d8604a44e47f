#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bspinfer/bsp_tree.hpp"
#include "bspinfer/discretizer.hpp"
#include "bspinfer/evaluation.hpp"
#include "bspinfer/factors.hpp"
#include "bspinfer/network.hpp"

namespace bspinfer {

// Evidence so unlikely that every potential value vanished numerically.
struct VanishedPotentialError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InferenceConfig {
  double delta = 0.02;           // per-clique discretization precision
  std::size_t max_leaves = 1024;  // per-clique leaf budget
  int max_iterations = 6;
  double convergence_tol = 1e-3;  // KL between successive posteriors
  std::uint64_t rng_seed = 0;
  int samples_per_region = 256;
  // When > 0, clique potentials use a fixed uniform partition with this
  // many bins per axis instead of the adaptive discretizer.
  int uniform_bins = 0;
};

struct Clique {
  int id = -1;
  Scope scope;
  std::vector<int> factor_indices;  // into JoinTree::factors
  int parent = -1;
  std::vector<int> children;
  Scope separator;  // with the parent clique

  // Per-iteration state.
  BspTree potential;  // normalized; co-located weights
  std::unordered_map<LeafPath, double> leaf_errors;
  BspTree upward_message;   // over the separator, toward the parent
  BspTree weight_message;   // over the separator, from the parent
  std::optional<BspTree> weight_tree;  // steers the next discretization
  bool has_potential = false;
  bool has_weight_message = false;
};

struct JoinTree {
  std::vector<Clique> cliques;
  int root = -1;
  std::string query;
  std::vector<ContinuousFactor> factors;  // evidence absorbed

  const Clique& root_clique() const { return cliques[root]; }
  // Cliques ordered children before parents.
  std::vector<int> upward_order() const;
};

// Moralization, min-fill triangulation, maximum-weight spanning tree over
// separators, root selection at the query, factor assignment.
JoinTree build_join_tree(const HybridNetwork& net);

// Leaves-to-root sweep: per clique, discretize the product of assigned
// factors and incoming messages, then pass the separator marginal up.
// Returns the normalized query posterior.
BspTree upward_pass(JoinTree& jt, const InferenceConfig& config,
                    int iteration = 1);

// Root-to-leaves calibration sweep (root weight is 1): the weight message
// over each separator is the parent's weighted marginal divided by the
// child's upward message, resolved at child leaf centers.
void downward_weight_pass(JoinTree& jt);

// Weighted relative entropy between two trees, with the weight function
// read from the value leaves of w.
double wkl_distance_trees(const BspTree& f, const BspTree& g, const BspTree& w);

struct IterationDiagnostics {
  int iteration = 0;
  std::vector<std::size_t> clique_leaf_counts;  // indexed by clique id
  double kl_to_previous = std::numeric_limits<double>::quiet_NaN();
  double kl_to_exact = std::numeric_limits<double>::quiet_NaN();
  BspTree posterior;
};

struct InferenceResult {
  BspTree posterior;
  std::vector<IterationDiagnostics> iterations;
  bool converged = false;
};

// The anytime loop: upward pass, weight calibration, pruning, repeat until
// the posterior stops moving or max_iterations is reached. When an exact
// posterior is supplied, per-iteration KL to it is recorded.
InferenceResult iterate(const HybridNetwork& net, const InferenceConfig& config,
                        const Density1D* exact_posterior = nullptr);

// Same loop driven through a caller-constructed join tree (reused by the
// experiment commands to keep the tree for artifact dumping).
InferenceResult iterate(JoinTree& jt, const InferenceConfig& config,
                        const Density1D* exact_posterior = nullptr);

}  // namespace bspinfer
