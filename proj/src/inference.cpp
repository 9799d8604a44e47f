#include "bspinfer/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace bspinfer {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return mix(mix(seed ^ a) ^ b);
}

}  // namespace

std::vector<int> JoinTree::upward_order() const {
  std::vector<int> order;
  std::vector<int> stack{root};
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    order.push_back(id);
    for (int child : cliques[id].children) stack.push_back(child);
  }
  std::reverse(order.begin(), order.end());
  return order;
}

JoinTree build_join_tree(const HybridNetwork& net) {
  JoinTree jt;
  jt.query = net.query;

  // Absorb evidence into the factor library.
  for (const auto& nf : net.factors) {
    jt.factors.push_back(nf.factor.instantiate_evidence(net.evidence));
  }

  // Latent continuous variables in network order.
  std::vector<std::string> latent;
  for (const auto& v : net.variables) {
    if (net.evidence.observes(v.name)) continue;
    if (v.discrete) {
      throw std::invalid_argument("latent discrete variable '" + v.name +
                                  "' is unsupported");
    }
    latent.push_back(v.name);
  }
  int n = static_cast<int>(latent.size());
  auto latent_index = [&](const std::string& name) {
    for (int i = 0; i < n; ++i) {
      if (latent[i] == name) return i;
    }
    return -1;
  };
  if (latent_index(net.query) < 0) {
    throw std::invalid_argument("query variable is not a latent variable");
  }

  // Moral graph: every factor scope becomes a clique of edges.
  std::vector<std::set<int>> adj(n);
  for (const auto& f : jt.factors) {
    for (const auto& a : f.scope()) {
      for (const auto& b : f.scope()) {
        if (a == b) continue;
        adj[latent_index(a)].insert(latent_index(b));
      }
    }
  }

  // Min-fill elimination, ties broken by the lowest variable index.
  std::vector<bool> eliminated(n, false);
  std::vector<std::vector<int>> elim_cliques;
  for (int round = 0; round < n; ++round) {
    int best = -1;
    long best_fill = -1;
    for (int v = 0; v < n; ++v) {
      if (eliminated[v]) continue;
      std::vector<int> nb(adj[v].begin(), adj[v].end());
      long fill = 0;
      for (std::size_t i = 0; i < nb.size(); ++i) {
        for (std::size_t j = i + 1; j < nb.size(); ++j) {
          if (!adj[nb[i]].count(nb[j])) ++fill;
        }
      }
      if (best < 0 || fill < best_fill) {
        best = v;
        best_fill = fill;
      }
    }
    std::vector<int> clique{best};
    clique.insert(clique.end(), adj[best].begin(), adj[best].end());
    std::sort(clique.begin(), clique.end());
    elim_cliques.push_back(clique);

    std::vector<int> nb(adj[best].begin(), adj[best].end());
    for (std::size_t i = 0; i < nb.size(); ++i) {
      for (std::size_t j = i + 1; j < nb.size(); ++j) {
        adj[nb[i]].insert(nb[j]);
        adj[nb[j]].insert(nb[i]);
      }
      adj[nb[i]].erase(best);
    }
    adj[best].clear();
    eliminated[best] = true;
  }

  // Keep maximal cliques only.
  std::vector<std::vector<int>> maximal;
  for (const auto& c : elim_cliques) {
    bool subset = false;
    for (const auto& m : maximal) {
      subset = subset || std::includes(m.begin(), m.end(), c.begin(), c.end());
    }
    if (!subset) maximal.push_back(c);
  }

  for (std::size_t i = 0; i < maximal.size(); ++i) {
    Clique c;
    c.id = static_cast<int>(i);
    for (int v : maximal[i]) c.scope.push_back(latent[v]);
    jt.cliques.push_back(std::move(c));
  }

  // Maximum-weight spanning tree over separator sizes; zero-weight edges
  // sort last and only serve to connect disconnected components.
  struct Edge {
    int w, a, b;
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < jt.cliques.size(); ++i) {
    for (std::size_t j = i + 1; j < jt.cliques.size(); ++j) {
      int w = 0;
      for (const auto& v : jt.cliques[i].scope) {
        if (scope_contains(jt.cliques[j].scope, v)) ++w;
      }
      edges.push_back({w, static_cast<int>(i), static_cast<int>(j)});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    if (x.w != y.w) return x.w > y.w;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  std::vector<int> component(jt.cliques.size());
  std::iota(component.begin(), component.end(), 0);
  std::function<int(int)> find = [&](int x) {
    return component[x] == x ? x : component[x] = find(component[x]);
  };
  std::vector<std::vector<int>> neighbors(jt.cliques.size());
  for (const Edge& e : edges) {
    if (find(e.a) == find(e.b)) continue;
    component[find(e.a)] = find(e.b);
    neighbors[e.a].push_back(e.b);
    neighbors[e.b].push_back(e.a);
  }

  // Root at a clique containing the query node; orient the tree.
  for (const auto& c : jt.cliques) {
    if (scope_contains(c.scope, net.query)) {
      jt.root = c.id;
      break;
    }
  }
  std::vector<int> stack{jt.root};
  std::vector<bool> seen(jt.cliques.size(), false);
  seen[jt.root] = true;
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    for (int nb : neighbors[id]) {
      if (seen[nb]) continue;
      seen[nb] = true;
      jt.cliques[nb].parent = id;
      for (const auto& v : jt.cliques[nb].scope) {
        if (scope_contains(jt.cliques[id].scope, v)) {
          jt.cliques[nb].separator.push_back(v);
        }
      }
      jt.cliques[id].children.push_back(nb);
      stack.push_back(nb);
    }
  }

  // Each factor goes to the smallest covering clique, ties to lowest id.
  for (std::size_t fi = 0; fi < jt.factors.size(); ++fi) {
    int best = -1;
    for (const auto& c : jt.cliques) {
      bool covers = true;
      for (const auto& v : jt.factors[fi].scope()) {
        covers = covers && scope_contains(c.scope, v);
      }
      if (covers && (best < 0 ||
                     c.scope.size() < jt.cliques[best].scope.size())) {
        best = c.id;
      }
    }
    if (best < 0) {
      throw std::logic_error("no clique covers factor scope");
    }
    jt.cliques[best].factor_indices.push_back(static_cast<int>(fi));
  }
  return jt;
}

namespace {

// Evaluation callable for one clique: assigned factors times incoming
// child messages, all over the clique scope.
struct CliqueTarget {
  std::vector<BoundFactor> factors;
  struct ChildMessage {
    const BspTree* tree;
    std::vector<int> gather;  // clique-scope index per separator axis
  };
  std::vector<ChildMessage> messages;

  double operator()(std::span<const double> point) const {
    double v = 1.0;
    for (const auto& f : factors) v *= f.evaluate(point);
    std::vector<double> sub;
    for (const auto& m : messages) {
      sub.clear();
      for (int idx : m.gather) sub.push_back(point[idx]);
      // Messages enter at raw scale; the 1/p(e) magnitude of an unlikely
      // evidence set is what lets the calibrated weights steer refinement.
      v *= m.tree->evaluate_at(sub);
    }
    return v;
  }
};

CliqueTarget make_target(const JoinTree& jt, const Clique& c) {
  CliqueTarget target;
  for (int fi : c.factor_indices) {
    target.factors.emplace_back(jt.factors[fi], c.scope);
  }
  for (int child_id : c.children) {
    const Clique& child = jt.cliques[child_id];
    if (!child.has_potential) continue;
    CliqueTarget::ChildMessage m;
    m.tree = &child.upward_message;
    for (const auto& v : child.separator) {
      m.gather.push_back(scope_index(c.scope, v));
    }
    target.messages.push_back(std::move(m));
  }
  return target;
}

BspTree marginalize_onto(const BspTree& tree, const Scope& keep) {
  BspTree result = tree;
  for (const auto& v : tree.scope()) {
    if (!scope_contains(keep, v)) result = integrate_out(result, v);
  }
  return result;
}

BspTree checked_normalize(const BspTree& tree) {
  try {
    return normalize(tree);
  } catch (const std::runtime_error&) {
    throw VanishedPotentialError(
        "clique potential vanished; evidence is impossible under the current "
        "discretization");
  }
}

// Rebuilds the tree with leaf weights taken from fn(leaf box center).
NodePtr reweight_nodes(const NodePtr& node, DyadicBox& box,
                       const std::function<double(const DyadicBox&)>& fn) {
  if (node->is_leaf()) {
    return make_leaf(node->value, std::max(fn(box), 1e-300));
  }
  int k = node->axis;
  double lo = box.lo[k], hi = box.hi[k];
  double mid = 0.5 * (lo + hi);
  box.hi[k] = mid;
  auto low = reweight_nodes(node->low, box, fn);
  box.hi[k] = hi;
  box.lo[k] = mid;
  auto high = reweight_nodes(node->high, box, fn);
  box.lo[k] = lo;
  return make_split(k, std::move(low), std::move(high));
}

BspTree reweight(const BspTree& tree,
                 const std::function<double(const DyadicBox&)>& fn) {
  DyadicBox box(tree.dims());
  return BspTree(tree.scope(), reweight_nodes(tree.root(), box, fn),
                 tree.log_scale());
}

}  // namespace

BspTree upward_pass(JoinTree& jt, const InferenceConfig& config,
                    int iteration) {
  for (int id : jt.upward_order()) {
    Clique& c = jt.cliques[id];
    CliqueTarget target = make_target(jt, c);

    DensityFn f = [&target](std::span<const double> p) { return target(p); };
    BspTree discretized;
    if (config.uniform_bins > 0) {
      DiscretizationConfig dc;
      dc.samples_per_region = config.samples_per_region;
      dc.rng_seed = mix_seed(config.rng_seed, id, iteration);
      discretized = uniform_baseline(f, c.scope, config.uniform_bins, dc);
      c.leaf_errors.clear();
      discretized.for_each_leaf([&](const LeafPath& path, const DyadicBox&,
                                    const BspNode&) {
        c.leaf_errors.emplace(path, 0.0);
      });
    } else {
      DiscretizationConfig dc;
      if (iteration == 1) {
        // The first sweep runs without calibrated weights; a coarse
        // absolute threshold keeps it cheap, and the weighted iterations
        // supply the precision.
        dc.delta = config.delta * 0.25;
        dc.delta_is_relative = false;
      } else {
        // Weighted sweeps use a relative threshold (delta times the
        // running weighted mass), which is invariant to both the raw
        // evidence scale and the overall magnitude of the calibrated
        // weights, so leaf counts stay stable across iterations. The
        // threshold shrinks each iteration to sharpen the refinement; the
        // root runs tighter than interior cliques because its marginal is
        // the answer, while interior cliques only feed messages.
        double scale = c.parent < 0 ? 0.25 : 0.0625;
        dc.delta = config.delta * scale * std::pow(0.125, iteration - 2);
        dc.delta_is_relative = true;
        if (c.parent < 0) {
          // Root splits along non-query axes improve only the joint fit;
          // the query marginal integrates them out exactly, so their gain
          // is discounted when prioritizing and choosing splits.
          dc.axis_gain_scale.assign(c.scope.size(), 0.1);
          for (std::size_t k = 0; k < c.scope.size(); ++k) {
            if (c.scope[k] == jt.query) dc.axis_gain_scale[k] = 1.0;
          }
        }
      }
      dc.max_leaves = config.max_leaves;
      dc.samples_per_region = config.samples_per_region;
      dc.rng_seed = mix_seed(config.rng_seed, id, iteration);
      auto result = discretize(f, c.scope, dc,
                               c.weight_tree ? &*c.weight_tree : nullptr);
      discretized = std::move(result.tree);
      c.leaf_errors = std::move(result.leaf_errors);
    }

    c.potential = checked_normalize(discretized);
    c.has_potential = true;

    if (c.parent >= 0) {
      // Raw-scale marginal: log_scale keeps the evidence likelihood mass.
      c.upward_message = marginalize_onto(c.potential, c.separator);
    }
  }

  const Clique& root = jt.root_clique();
  return checked_normalize(marginalize_onto(root.potential, {jt.query}));
}

void downward_weight_pass(JoinTree& jt) {
  // Constant weight at the root; children calibrate against their parent.
  Clique& root = jt.cliques[jt.root];
  root.potential = root.potential.map_leaves(
      [](double v, double) { return std::make_pair(v, 1.0); });

  std::vector<int> stack{jt.root};
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    Clique& parent = jt.cliques[id];
    for (int child_id : parent.children) {
      Clique& child = jt.cliques[child_id];
      if (!child.has_potential) continue;

      // The parent's potential enters at unit mass (log_scale dropped), the
      // child's message at raw scale; the quotient is what calibrates the
      // weighted potentials of the two cliques on the separator, and its
      // magnitude grows as 1/p(e) for unlikely evidence.
      BspTree weighted = multiply(parent.potential.weights_as_values(),
                                  parent.potential.with_log_scale(0.0));
      BspTree numerator = marginalize_onto(weighted, child.separator);
      BspTree message = divide(numerator, child.upward_message);
      // Fold the log-scale bookkeeping into plain values; only the shape
      // of the weight matters downstream of the relative stop rule.
      double scale = std::exp(message.log_scale());
      child.weight_message =
          message
              .map_leaves([scale](double v, double w) {
                return std::make_pair(v * scale, w);
              })
              .with_log_scale(0.0);
      child.has_weight_message = true;

      std::vector<int> gather;
      for (const auto& v : child.separator) {
        gather.push_back(scope_index(child.scope, v));
      }
      const BspTree& wm = child.weight_message;
      child.potential = reweight(child.potential, [&](const DyadicBox& box) {
        auto center = box.center();
        std::vector<double> sub;
        for (int idx : gather) sub.push_back(center[idx]);
        return wm.value_at(sub);
      });
      stack.push_back(child_id);
    }
  }
}

double wkl_distance_trees(const BspTree& f, const BspTree& g,
                          const BspTree& w) {
  if (f.scope() != g.scope() || f.scope() != w.scope()) {
    throw std::invalid_argument("operand scopes differ");
  }
  auto [fa, ga] = align(f, g);
  double f_scale = std::exp(f.log_scale());
  double g_scale = std::exp(g.log_scale());

  double acc = 0.0;
  std::function<void(const NodePtr&, const NodePtr&, DyadicBox&)> walk =
      [&](const NodePtr& nf, const NodePtr& ng, DyadicBox& box) {
        if (nf->is_leaf()) {
          double fv = nf->value * f_scale;
          if (fv <= 0.0) return;
          double gv = std::max(ng->value * g_scale, 1e-300);
          double wv = w.value_at(box.center());
          acc += wv * fv * std::log(fv / gv) * box.volume();
          return;
        }
        int k = nf->axis;
        double lo = box.lo[k], hi = box.hi[k];
        double mid = 0.5 * (lo + hi);
        box.hi[k] = mid;
        walk(nf->low, ng->low, box);
        box.hi[k] = hi;
        box.lo[k] = mid;
        walk(nf->high, ng->high, box);
        box.lo[k] = lo;
      };
  DyadicBox box(fa.dims());
  auto root_f = fa.root();
  auto root_g = ga.root();
  walk(root_f, root_g, box);
  return acc;
}

InferenceResult iterate(const HybridNetwork& net, const InferenceConfig& config,
                        const Density1D* exact_posterior) {
  JoinTree jt = build_join_tree(net);
  return iterate(jt, config, exact_posterior);
}

InferenceResult iterate(JoinTree& jt, const InferenceConfig& config,
                        const Density1D* exact_posterior) {
  if (config.max_iterations < 1) {
    throw std::invalid_argument("max_iterations must be >= 1");
  }
  InferenceResult result;
  for (int it = 1; it <= config.max_iterations; ++it) {
    BspTree posterior = upward_pass(jt, config, it);

    IterationDiagnostics diag;
    diag.iteration = it;
    for (const auto& c : jt.cliques) {
      diag.clique_leaf_counts.push_back(c.potential.leaf_count());
    }
    diag.posterior = posterior;
    if (it > 1) {
      diag.kl_to_previous =
          grid_kl(result.iterations.back().posterior, posterior,
                  static_cast<int>(default_grid_resolution(1)));
    }
    if (exact_posterior) {
      const Density1D& exact = *exact_posterior;
      diag.kl_to_exact =
          grid_kl([&exact](std::span<const double> x) { return exact(x[0]); },
                  posterior, static_cast<int>(default_grid_resolution(1)));
    }
    result.iterations.push_back(std::move(diag));
    result.posterior = posterior;

    if (it > 1 &&
        result.iterations.back().kl_to_previous < config.convergence_tol) {
      result.converged = true;
      break;
    }
    if (it == config.max_iterations) break;

    downward_weight_pass(jt);
    for (auto& c : jt.cliques) {
      c.weight_tree = prune(c.potential, c.leaf_errors);
    }
  }
  return result;
}

}  // namespace bspinfer
