#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace bspinfer {

// Ordered list of variable names; position i is coordinate axis i of the
// tree's unit hypercube.
using Scope = std::vector<std::string>;

int scope_index(const Scope& scope, const std::string& name);  // -1 if absent
bool scope_contains(const Scope& scope, const std::string& name);

// Axis-aligned dyadic box inside [0,1]^n. Intervals are half-open [lo, hi).
struct DyadicBox {
  std::vector<double> lo;
  std::vector<double> hi;

  explicit DyadicBox(int dims);
  int dims() const { return static_cast<int>(lo.size()); }
  double volume() const;
  std::vector<double> center() const;
  DyadicBox half(int axis, bool high_side) const;
  bool contains(std::span<const double> point) const;
};

struct BspNode;
using NodePtr = std::shared_ptr<const BspNode>;

// Internal nodes carry the axis of a midpoint split; leaves carry a constant
// density value and a co-located weight.
struct BspNode {
  int axis = -1;  // -1 marks a leaf
  double value = 0.0;
  double weight = 1.0;
  NodePtr low;
  NodePtr high;

  bool is_leaf() const { return axis < 0; }
};

NodePtr make_leaf(double value, double weight = 1.0);
NodePtr make_split(int axis, NodePtr low, NodePtr high);

// Leaves are addressed by their root-to-leaf path: '0' = low child,
// '1' = high child.
using LeafPath = std::string;

// Piecewise-constant function over [0,1]^n represented by a binary split
// partition. Trees are immutable; every operation returns a new tree.
// The represented function is value * exp(log_scale); log_scale absorbs
// normalization constants that would otherwise underflow.
class BspTree {
 public:
  BspTree();
  BspTree(Scope scope, NodePtr root, double log_scale = 0.0);

  static BspTree constant(Scope scope, double value, double weight = 1.0);

  const Scope& scope() const { return scope_; }
  const NodePtr& root() const { return root_; }
  double log_scale() const { return log_scale_; }
  int dims() const { return static_cast<int>(scope_.size()); }

  std::size_t leaf_count() const;
  std::size_t depth() const;

  // Value of the covering leaf times exp(log_scale).
  double evaluate_at(std::span<const double> point) const;
  // Same lookup with log_scale ignored.
  double value_at(std::span<const double> point) const;
  // Co-located weight of the covering leaf.
  double weight_at(std::span<const double> point) const;

  BspTree with_log_scale(double log_scale) const;
  // Applies fn(value, weight) -> (value, weight) to every leaf.
  BspTree map_leaves(
      const std::function<std::pair<double, double>(double, double)>& fn) const;
  BspTree with_unit_weights() const;
  // The stored weight function as a value tree (weights become values,
  // log_scale zero).
  BspTree weights_as_values() const;

  // Visits every leaf as fn(path, box, node).
  void for_each_leaf(
      const std::function<void(const LeafPath&, const DyadicBox&,
                               const BspNode&)>& fn) const;

 private:
  Scope scope_;
  NodePtr root_;
  double log_scale_ = 0.0;
};

// Restriction of the function to one half of the cube along `axis`,
// re-based to the full cube.
BspTree restrict_to_half(const BspTree& tree, int axis, bool high_side);

// Returns the two functions on a common split structure; values are
// unchanged pointwise. The first operand is restructured to follow the
// second's splits where they disagree.
std::pair<BspTree, BspTree> align(const BspTree& a, const BspTree& b);

BspTree add(const BspTree& a, const BspTree& b);
BspTree multiply(const BspTree& a, const BspTree& b);
// Pointwise quotient with the divisor floored away from zero.
BspTree divide(const BspTree& a, const BspTree& b, double floor_value = 1e-300);

// Drops `variable` from the scope by integrating over its axis.
BspTree integrate_out(const BspTree& tree, const std::string& variable);

// Sum over leaves of value * volume * exp(log_scale).
double total_integral(const BspTree& tree);

// Scales leaf values so the raw integral is 1; the removed factor moves
// into log_scale. Throws if the integral is zero or not finite.
BspTree normalize(const BspTree& tree);

// Merges sibling leaf pairs whose error estimates are both below the mean
// leaf estimate (mean taken once, before merging). Merged value/weight are
// the arithmetic means of the children.
BspTree prune(const BspTree& tree,
              const std::unordered_map<LeafPath, double>& leaf_errors);

// Re-indexes the tree into a superset scope; the function is constant
// along the added axes.
BspTree extend_scope(const BspTree& tree, const Scope& new_scope);

// Structure, values, weights, scope and log_scale all bit-identical.
bool trees_identical(const BspTree& a, const BspTree& b);

std::string serialize(const BspTree& tree);
BspTree deserialize(std::string_view text);

namespace detail {
// Nodes visited by the last combine-style operation; used by complexity
// smoke tests.
extern thread_local std::uint64_t combine_visits;
}  // namespace detail

}  // namespace bspinfer
