#include "bspinfer/bsp_tree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace bspinfer {

namespace detail {
thread_local std::uint64_t combine_visits = 0;
}

int scope_index(const Scope& scope, const std::string& name) {
  for (std::size_t i = 0; i < scope.size(); ++i) {
    if (scope[i] == name) return static_cast<int>(i);
  }
  return -1;
}

bool scope_contains(const Scope& scope, const std::string& name) {
  return scope_index(scope, name) >= 0;
}

DyadicBox::DyadicBox(int dims) : lo(dims, 0.0), hi(dims, 1.0) {}

double DyadicBox::volume() const {
  double v = 1.0;
  for (int i = 0; i < dims(); ++i) v *= hi[i] - lo[i];
  return v;
}

std::vector<double> DyadicBox::center() const {
  std::vector<double> c(lo.size());
  for (int i = 0; i < dims(); ++i) c[i] = 0.5 * (lo[i] + hi[i]);
  return c;
}

DyadicBox DyadicBox::half(int axis, bool high_side) const {
  DyadicBox h = *this;
  double mid = 0.5 * (lo[axis] + hi[axis]);
  if (high_side) {
    h.lo[axis] = mid;
  } else {
    h.hi[axis] = mid;
  }
  return h;
}

bool DyadicBox::contains(std::span<const double> point) const {
  for (int i = 0; i < dims(); ++i) {
    if (point[i] < lo[i] || point[i] >= hi[i]) return false;
  }
  return true;
}

NodePtr make_leaf(double value, double weight) {
  if (!(value >= 0.0)) throw std::invalid_argument("leaf value must be >= 0");
  if (!(weight > 0.0)) throw std::invalid_argument("leaf weight must be > 0");
  auto n = std::make_shared<BspNode>();
  n->value = value;
  n->weight = weight;
  return n;
}

NodePtr make_split(int axis, NodePtr low, NodePtr high) {
  if (axis < 0) throw std::invalid_argument("split axis must be >= 0");
  auto n = std::make_shared<BspNode>();
  n->axis = axis;
  n->low = std::move(low);
  n->high = std::move(high);
  return n;
}

namespace {

int node_max_axis(const NodePtr& n) {
  if (n->is_leaf()) return -1;
  return std::max(n->axis,
                  std::max(node_max_axis(n->low), node_max_axis(n->high)));
}

std::size_t count_leaves(const NodePtr& n) {
  if (n->is_leaf()) return 1;
  return count_leaves(n->low) + count_leaves(n->high);
}

std::size_t node_depth(const NodePtr& n) {
  if (n->is_leaf()) return 0;
  return 1 + std::max(node_depth(n->low), node_depth(n->high));
}

}  // namespace

BspTree::BspTree() : root_(make_leaf(1.0)) {}

BspTree::BspTree(Scope scope, NodePtr root, double log_scale)
    : scope_(std::move(scope)), root_(std::move(root)), log_scale_(log_scale) {
  for (std::size_t i = 0; i < scope_.size(); ++i) {
    for (std::size_t j = i + 1; j < scope_.size(); ++j) {
      if (scope_[i] == scope_[j]) {
        throw std::invalid_argument("duplicate variable in scope: " +
                                    scope_[i]);
      }
    }
  }
  if (!root_) throw std::invalid_argument("null root node");
  if (node_max_axis(root_) >= static_cast<int>(scope_.size())) {
    throw std::invalid_argument("split axis out of scope range");
  }
}

BspTree BspTree::constant(Scope scope, double value, double weight) {
  return BspTree(std::move(scope), make_leaf(value, weight));
}

std::size_t BspTree::leaf_count() const { return count_leaves(root_); }

std::size_t BspTree::depth() const { return node_depth(root_); }

namespace {

const BspNode& locate(const NodePtr& root, std::span<const double> point,
                      int dims) {
  if (static_cast<int>(point.size()) != dims) {
    throw std::invalid_argument("point dimension does not match scope");
  }
  for (double c : point) {
    if (!(c >= 0.0 && c < 1.0)) {
      throw std::invalid_argument("point coordinate outside [0,1)");
    }
  }
  std::vector<double> lo(dims, 0.0), hi(dims, 1.0);
  const BspNode* n = root.get();
  while (!n->is_leaf()) {
    int k = n->axis;
    double mid = 0.5 * (lo[k] + hi[k]);
    if (point[k] < mid) {
      hi[k] = mid;
      n = n->low.get();
    } else {
      lo[k] = mid;
      n = n->high.get();
    }
  }
  return *n;
}

}  // namespace

double BspTree::evaluate_at(std::span<const double> point) const {
  return locate(root_, point, dims()).value * std::exp(log_scale_);
}

double BspTree::value_at(std::span<const double> point) const {
  return locate(root_, point, dims()).value;
}

double BspTree::weight_at(std::span<const double> point) const {
  return locate(root_, point, dims()).weight;
}

BspTree BspTree::with_log_scale(double log_scale) const {
  return BspTree(scope_, root_, log_scale);
}

namespace {

NodePtr map_nodes(
    const NodePtr& n,
    const std::function<std::pair<double, double>(double, double)>& fn) {
  if (n->is_leaf()) {
    auto [v, w] = fn(n->value, n->weight);
    return make_leaf(v, w);
  }
  return make_split(n->axis, map_nodes(n->low, fn), map_nodes(n->high, fn));
}

}  // namespace

BspTree BspTree::map_leaves(
    const std::function<std::pair<double, double>(double, double)>& fn) const {
  return BspTree(scope_, map_nodes(root_, fn), log_scale_);
}

BspTree BspTree::with_unit_weights() const {
  return map_leaves([](double v, double) { return std::make_pair(v, 1.0); });
}

BspTree BspTree::weights_as_values() const {
  return BspTree(scope_, map_nodes(root_,
                                   [](double, double w) {
                                     return std::make_pair(w, 1.0);
                                   }),
                 0.0);
}

namespace {

void visit_leaves(const NodePtr& n, LeafPath& path, DyadicBox& box,
                  const std::function<void(const LeafPath&, const DyadicBox&,
                                           const BspNode&)>& fn) {
  if (n->is_leaf()) {
    fn(path, box, *n);
    return;
  }
  int k = n->axis;
  double lo = box.lo[k], hi = box.hi[k];
  double mid = 0.5 * (lo + hi);

  path.push_back('0');
  box.hi[k] = mid;
  visit_leaves(n->low, path, box, fn);
  box.hi[k] = hi;
  path.back() = '1';
  box.lo[k] = mid;
  visit_leaves(n->high, path, box, fn);
  box.lo[k] = lo;
  path.pop_back();
}

}  // namespace

void BspTree::for_each_leaf(
    const std::function<void(const LeafPath&, const DyadicBox&,
                             const BspNode&)>& fn) const {
  LeafPath path;
  DyadicBox box(dims());
  visit_leaves(root_, path, box, fn);
}

namespace {

// Restriction of a node to one half of its box along `axis`. A split on
// `axis` resolves to the chosen child; deeper splits are relative to their
// own boxes, so the child subtree carries over verbatim.
NodePtr restrict_node(const NodePtr& n, int axis, bool high_side) {
  if (n->is_leaf()) return n;
  if (n->axis == axis) return high_side ? n->high : n->low;
  return make_split(n->axis, restrict_node(n->low, axis, high_side),
                    restrict_node(n->high, axis, high_side));
}

using LeafOp = std::function<double(double, double)>;

// Pointwise combination of two trees over the same box. Result weights
// come from the first operand's covering leaf.
NodePtr combine_nodes(const NodePtr& a, const NodePtr& b, const LeafOp& op) {
  ++detail::combine_visits;
  if (a->is_leaf() && b->is_leaf()) {
    return make_leaf(op(a->value, b->value), a->weight);
  }
  if (b->is_leaf()) {
    // Fold the second operand's constant into every leaf of the first.
    return make_split(a->axis, combine_nodes(a->low, b, op),
                      combine_nodes(a->high, b, op));
  }
  int axis = b->axis;
  NodePtr alow = a->is_leaf() || a->axis != axis ? restrict_node(a, axis, false)
                                                 : a->low;
  NodePtr ahigh = a->is_leaf() || a->axis != axis
                      ? restrict_node(a, axis, true)
                      : a->high;
  return make_split(axis, combine_nodes(alow, b->low, op),
                    combine_nodes(ahigh, b->high, op));
}

void check_same_scope(const BspTree& a, const BspTree& b) {
  if (a.scope() != b.scope()) {
    throw std::invalid_argument("operand scopes differ");
  }
}

}  // namespace

BspTree restrict_to_half(const BspTree& tree, int axis, bool high_side) {
  if (axis < 0 || axis >= tree.dims()) {
    throw std::invalid_argument("restrict axis out of range");
  }
  return BspTree(tree.scope(), restrict_node(tree.root(), axis, high_side),
                 tree.log_scale());
}

namespace {

std::pair<NodePtr, NodePtr> align_nodes(const NodePtr& a, const NodePtr& b) {
  if (a->is_leaf() && b->is_leaf()) return {a, b};
  // Follow the second operand's split when it has one.
  int axis = b->is_leaf() ? a->axis : b->axis;
  auto [l1, l2] = align_nodes(restrict_node(a, axis, false),
                              restrict_node(b, axis, false));
  auto [h1, h2] = align_nodes(restrict_node(a, axis, true),
                              restrict_node(b, axis, true));
  return {make_split(axis, l1, h1), make_split(axis, l2, h2)};
}

}  // namespace

std::pair<BspTree, BspTree> align(const BspTree& a, const BspTree& b) {
  check_same_scope(a, b);
  auto [na, nb] = align_nodes(a.root(), b.root());
  return {BspTree(a.scope(), na, a.log_scale()),
          BspTree(b.scope(), nb, b.log_scale())};
}

BspTree add(const BspTree& a, const BspTree& b) {
  check_same_scope(a, b);
  detail::combine_visits = 0;
  // Rescale the smaller-scale operand into the larger-scale frame.
  double ls = std::max(a.log_scale(), b.log_scale());
  double ca = std::exp(a.log_scale() - ls);
  double cb = std::exp(b.log_scale() - ls);
  auto root = combine_nodes(a.root(), b.root(),
                            [ca, cb](double x, double y) {
                              return ca * x + cb * y;
                            });
  return BspTree(a.scope(), root, ls);
}

BspTree multiply(const BspTree& a, const BspTree& b) {
  check_same_scope(a, b);
  detail::combine_visits = 0;
  auto root = combine_nodes(a.root(), b.root(),
                            [](double x, double y) { return x * y; });
  return BspTree(a.scope(), root, a.log_scale() + b.log_scale());
}

BspTree divide(const BspTree& a, const BspTree& b, double floor_value) {
  check_same_scope(a, b);
  detail::combine_visits = 0;
  auto root = combine_nodes(a.root(), b.root(),
                            [floor_value](double x, double y) {
                              return x / std::max(y, floor_value);
                            });
  return BspTree(a.scope(), root, a.log_scale() - b.log_scale());
}

namespace {

NodePtr integrate_node(const NodePtr& n, int axis) {
  if (n->is_leaf()) return n;
  if (n->axis == axis) {
    auto low = integrate_node(n->low, axis);
    auto high = integrate_node(n->high, axis);
    return combine_nodes(low, high,
                         [](double x, double y) { return 0.5 * (x + y); });
  }
  int new_axis = n->axis > axis ? n->axis - 1 : n->axis;
  return make_split(new_axis, integrate_node(n->low, axis),
                    integrate_node(n->high, axis));
}

}  // namespace

BspTree integrate_out(const BspTree& tree, const std::string& variable) {
  int axis = scope_index(tree.scope(), variable);
  if (axis < 0) {
    throw std::invalid_argument("variable not in scope: " + variable);
  }
  Scope reduced = tree.scope();
  reduced.erase(reduced.begin() + axis);
  return BspTree(std::move(reduced), integrate_node(tree.root(), axis),
                 tree.log_scale());
}

namespace {

double raw_integral(const NodePtr& n, double volume) {
  if (n->is_leaf()) return n->value * volume;
  return raw_integral(n->low, 0.5 * volume) +
         raw_integral(n->high, 0.5 * volume);
}

}  // namespace

double total_integral(const BspTree& tree) {
  return raw_integral(tree.root(), 1.0) * std::exp(tree.log_scale());
}

BspTree normalize(const BspTree& tree) {
  double z = raw_integral(tree.root(), 1.0);
  if (!(z > 0.0) || !std::isfinite(z)) {
    throw std::runtime_error("cannot normalize: potential has vanished");
  }
  auto scaled = tree.map_leaves(
      [z](double v, double w) { return std::make_pair(v / z, w); });
  return scaled.with_log_scale(tree.log_scale() + std::log(z));
}

namespace {

struct PruneResult {
  NodePtr node;
  double error;
};

PruneResult prune_rec(const NodePtr& n, LeafPath& path, double mean,
                      const std::unordered_map<LeafPath, double>& errors) {
  if (n->is_leaf()) {
    auto it = errors.find(path);
    if (it == errors.end()) {
      throw std::invalid_argument("missing leaf error estimate for path '" +
                                  path + "'");
    }
    return {n, it->second};
  }
  path.push_back('0');
  auto low = prune_rec(n->low, path, mean, errors);
  path.back() = '1';
  auto high = prune_rec(n->high, path, mean, errors);
  path.pop_back();
  if (low.node->is_leaf() && high.node->is_leaf() && low.error < mean &&
      high.error < mean) {
    // Equal-volume halves: volume-weighted mean is the arithmetic mean.
    auto merged = make_leaf(0.5 * (low.node->value + high.node->value),
                            0.5 * (low.node->weight + high.node->weight));
    return {merged, low.error + high.error};
  }
  return {make_split(n->axis, low.node, high.node), low.error + high.error};
}

}  // namespace

BspTree prune(const BspTree& tree,
              const std::unordered_map<LeafPath, double>& leaf_errors) {
  std::size_t n = tree.leaf_count();
  double total = 0.0;
  for (const auto& [path, err] : leaf_errors) {
    if (!(err >= 0.0)) {
      throw std::invalid_argument("negative leaf error estimate");
    }
    total += err;
  }
  double mean = total / static_cast<double>(n);
  LeafPath path;
  auto result = prune_rec(tree.root(), path, mean, leaf_errors);
  return BspTree(tree.scope(), result.node, tree.log_scale());
}

namespace {

NodePtr remap_axes(const NodePtr& n, const std::vector<int>& axis_map) {
  if (n->is_leaf()) return n;
  return make_split(axis_map[n->axis], remap_axes(n->low, axis_map),
                    remap_axes(n->high, axis_map));
}

}  // namespace

BspTree extend_scope(const BspTree& tree, const Scope& new_scope) {
  std::vector<int> axis_map(tree.dims());
  for (int i = 0; i < tree.dims(); ++i) {
    int j = scope_index(new_scope, tree.scope()[i]);
    if (j < 0) {
      throw std::invalid_argument("new scope does not cover variable: " +
                                  tree.scope()[i]);
    }
    axis_map[i] = j;
  }
  return BspTree(new_scope, remap_axes(tree.root(), axis_map),
                 tree.log_scale());
}

namespace {

bool nodes_identical(const NodePtr& a, const NodePtr& b) {
  if (a->is_leaf() != b->is_leaf()) return false;
  if (a->is_leaf()) return a->value == b->value && a->weight == b->weight;
  return a->axis == b->axis && nodes_identical(a->low, b->low) &&
         nodes_identical(a->high, b->high);
}

}  // namespace

bool trees_identical(const BspTree& a, const BspTree& b) {
  return a.scope() == b.scope() && a.log_scale() == b.log_scale() &&
         nodes_identical(a.root(), b.root());
}

namespace {

std::string hex_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

void serialize_node(const NodePtr& n, std::string& out) {
  if (n->is_leaf()) {
    out += "L ";
    out += hex_double(n->value);
    out += ' ';
    out += hex_double(n->weight);
    out += '\n';
    return;
  }
  out += "I ";
  out += std::to_string(n->axis);
  out += '\n';
  serialize_node(n->low, out);
  serialize_node(n->high, out);
}

struct Parser {
  std::vector<std::string> lines;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("parse error at line " + std::to_string(pos + 1) +
                             ": " + what);
  }

  const std::string& next() {
    if (pos >= lines.size()) fail("unexpected end of input");
    return lines[pos++];
  }

  NodePtr parse_node(int dims) {
    const std::string& line = next();
    if (line.rfind("L ", 0) == 0) {
      std::istringstream ss(line.substr(2));
      std::string v, w;
      if (!(ss >> v >> w)) {
        --pos;
        fail("malformed leaf line");
      }
      char* end = nullptr;
      double value = std::strtod(v.c_str(), &end);
      if (end == v.c_str() || *end != '\0') {
        --pos;
        fail("bad leaf value");
      }
      double weight = std::strtod(w.c_str(), &end);
      if (end == w.c_str() || *end != '\0') {
        --pos;
        fail("bad leaf weight");
      }
      return make_leaf(value, weight);
    }
    if (line.rfind("I ", 0) == 0) {
      int axis = -1;
      try {
        axis = std::stoi(line.substr(2));
      } catch (const std::exception&) {
        --pos;
        fail("bad split axis");
      }
      if (axis < 0 || axis >= dims) {
        --pos;
        fail("split axis out of range");
      }
      auto low = parse_node(dims);
      auto high = parse_node(dims);
      return make_split(axis, std::move(low), std::move(high));
    }
    --pos;
    fail("expected 'I <axis>' or 'L <value> <weight>'");
  }
};

}  // namespace

std::string serialize(const BspTree& tree) {
  std::string out = "BSP v1 scope=";
  for (std::size_t i = 0; i < tree.scope().size(); ++i) {
    if (i) out += ',';
    out += tree.scope()[i];
  }
  out += " logscale=";
  out += hex_double(tree.log_scale());
  out += '\n';
  serialize_node(tree.root(), out);
  return out;
}

BspTree deserialize(std::string_view text) {
  Parser p;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    std::string_view line =
        nl == std::string_view::npos ? text.substr(start)
                                     : text.substr(start, nl - start);
    if (!line.empty()) p.lines.emplace_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }

  const std::string& header = p.next();
  if (header.rfind("BSP v1 scope=", 0) != 0) {
    p.pos = 0;
    p.fail("expected 'BSP v1 scope=...' header");
  }
  std::size_t ls_pos = header.find(" logscale=");
  if (ls_pos == std::string::npos) {
    p.pos = 0;
    p.fail("missing logscale field in header");
  }
  std::string scope_str =
      header.substr(std::string("BSP v1 scope=").size(),
                    ls_pos - std::string("BSP v1 scope=").size());
  Scope scope;
  std::size_t s = 0;
  while (!scope_str.empty() && s <= scope_str.size()) {
    std::size_t c = scope_str.find(',', s);
    std::string name = c == std::string::npos ? scope_str.substr(s)
                                              : scope_str.substr(s, c - s);
    if (name.empty()) {
      p.pos = 0;
      p.fail("empty variable name in scope");
    }
    scope.push_back(name);
    if (c == std::string::npos) break;
    s = c + 1;
  }
  std::string ls_str = header.substr(ls_pos + std::string(" logscale=").size());
  char* end = nullptr;
  double log_scale = std::strtod(ls_str.c_str(), &end);
  if (end == ls_str.c_str()) {
    p.pos = 0;
    p.fail("bad logscale value");
  }

  auto root = p.parse_node(static_cast<int>(scope.size()));
  if (p.pos != p.lines.size()) p.fail("trailing content after tree");
  return BspTree(std::move(scope), std::move(root), log_scale);
}

}  // namespace bspinfer
