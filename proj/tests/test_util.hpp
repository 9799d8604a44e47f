#pragma once

#include <random>
#include <vector>

#include "bspinfer/bsp_tree.hpp"

namespace bspinfer::testutil {

// Random tree with roughly `target_leaves` leaves: split probability decays
// with depth so trees stay shallow enough to probe quickly.
inline NodePtr random_node(std::mt19937& rng, int dims, int depth,
                           int max_depth, double split_prob) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_real_distribution<double> value(0.1, 5.0);
  std::uniform_real_distribution<double> weight(0.5, 2.0);
  std::uniform_int_distribution<int> axis(0, dims - 1);
  if (depth >= max_depth || coin(rng) > split_prob) {
    return make_leaf(value(rng), weight(rng));
  }
  int k = axis(rng);
  return make_split(k, random_node(rng, dims, depth + 1, max_depth, split_prob),
                    random_node(rng, dims, depth + 1, max_depth, split_prob));
}

inline BspTree random_tree(std::mt19937& rng, const Scope& scope,
                           int max_depth = 8, double split_prob = 0.75) {
  return BspTree(scope, random_node(rng, static_cast<int>(scope.size()), 0,
                                    max_depth, split_prob));
}

inline std::vector<double> random_point(std::mt19937& rng, int dims) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(dims);
  for (double& x : p) x = std::min(u(rng), 0.9999999999);
  return p;
}

}  // namespace bspinfer::testutil
