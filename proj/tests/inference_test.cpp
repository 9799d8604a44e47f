#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "bspinfer/inference.hpp"
#include "test_util.hpp"

using namespace bspinfer;

namespace {

const std::pair<double, double> kUnit{0.0, 1.0};

HybridNetwork single_variable_network(double level = 2.0) {
  HybridNetwork net;
  net.variables.push_back({"x", false, 0.0, 1.0, {}});
  net.factors.push_back({"x", ContinuousFactor::uniform("x", kUnit, level)});
  net.query = "x";
  return net;
}

// Pairwise couplings a-b, b-c, c-d, d-a: the moral graph is a 4-cycle.
HybridNetwork four_cycle_network() {
  HybridNetwork net;
  for (const char* name : {"a", "b", "c", "d"}) {
    net.variables.push_back({name, false, 0.0, 1.0, {}});
  }
  auto couple = [](const std::string& child, const std::string& parent) {
    return ContinuousFactor::linear_gaussian({child, parent}, {kUnit, kUnit},
                                             {1.0, -1.0}, 0.0, 0.04);
  };
  net.factors.push_back({"b", couple("b", "a")});
  net.factors.push_back({"c", couple("c", "b")});
  net.factors.push_back({"d", couple("d", "c")});
  net.factors.push_back({"a", couple("a", "d")});
  net.query = "a";
  return net;
}

double iter_kl(const InferenceResult& r, int iteration) {
  return r.iterations.at(iteration - 1).kl_to_exact;
}

}  // namespace

TEST_CASE("build_join_tree on the sensor chain") {
  JoinTree jt = build_join_tree(make_robot_network(0.2, 0.8, true));
  REQUIRE(jt.cliques.size() == 2);

  const Clique& root = jt.root_clique();
  CHECK(scope_contains(root.scope, "x3"));
  CHECK(scope_contains(root.scope, "x2"));
  REQUIRE(root.children.size() == 1);

  const Clique& child = jt.cliques[root.children[0]];
  CHECK(child.scope == Scope{"x1", "x2"});
  CHECK(child.separator == Scope{"x2"});
  CHECK(child.parent == root.id);

  // Every factor lands in exactly one covering clique.
  std::size_t assigned = 0;
  for (const auto& c : jt.cliques) assigned += c.factor_indices.size();
  CHECK(assigned == jt.factors.size());
}

TEST_CASE("build_join_tree on a single variable") {
  JoinTree jt = build_join_tree(single_variable_network());
  REQUIRE(jt.cliques.size() == 1);
  CHECK(jt.cliques[0].scope == Scope{"x"});
  CHECK(jt.cliques[0].separator.empty());
  CHECK(jt.cliques[0].children.empty());
}

TEST_CASE("build_join_tree triangulates a 4-cycle with one chord") {
  JoinTree jt = build_join_tree(four_cycle_network());
  REQUIRE(jt.cliques.size() == 2);
  CHECK(jt.cliques[0].scope.size() == 3);
  CHECK(jt.cliques[1].scope.size() == 3);
  // The shared separator is the added chord: two variables.
  for (const auto& c : jt.cliques) {
    if (c.parent >= 0) CHECK(c.separator.size() == 2);
  }
}

TEST_CASE("latent discrete variables are rejected") {
  HybridNetwork net = make_robot_network(0.2, 0.8, true);
  net.evidence.discrete.erase("o3");
  CHECK_THROWS_AS(build_join_tree(net), std::invalid_argument);
}

TEST_CASE("first pass tracks the exact posterior for consistent evidence") {
  HybridNetwork net = make_robot_network(0.2, 0.2, true);
  Density1D oracle = exact_robot_posterior(0.2, 0.2);
  InferenceConfig cfg;
  cfg.rng_seed = 1;
  cfg.max_iterations = 1;
  InferenceResult r = iterate(net, cfg, &oracle);
  CHECK(iter_kl(r, 1) <= 0.05);
}

TEST_CASE("conflicting evidence degrades the unweighted first pass") {
  InferenceConfig cfg;
  cfg.rng_seed = 1;
  cfg.max_iterations = 1;

  HybridNetwork consistent = make_robot_network(0.2, 0.2, true);
  Density1D oracle_c = exact_robot_posterior(0.2, 0.2);
  double kl_consistent = iter_kl(iterate(consistent, cfg, &oracle_c), 1);

  HybridNetwork conflicting = make_robot_network(0.2, 0.65, true);
  Density1D oracle_x = exact_robot_posterior(0.2, 0.65);
  double kl_conflicting = iter_kl(iterate(conflicting, cfg, &oracle_x), 1);

  CHECK(kl_conflicting >= 5.0 * kl_consistent);
}

TEST_CASE("single-clique piecewise-constant target is reproduced exactly") {
  InferenceConfig cfg;
  InferenceResult r = iterate(single_variable_network(2.0), cfg);
  CHECK(r.posterior.leaf_count() == 1);
  CHECK(r.posterior.value_at(std::vector<double>{0.4}) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("numerically impossible evidence raises a typed error") {
  HybridNetwork net = single_variable_network(1.0);
  // A gate whose observed-true sigmoid underflows to zero across [0,1].
  net.variables.push_back({"g", true, 0.0, 1.0, {"true", "false"}});
  net.factors.push_back(
      {"g", ContinuousFactor::logistic("x", kUnit, 5000.0, 2.0, "g")});
  net.evidence.discrete["g"] = "false";
  // observed false keeps 1 - sigmoid(5000(x-2)) which vanishes on [0,1].
  InferenceConfig cfg;
  CHECK_THROWS_AS(iterate(net, cfg), VanishedPotentialError);
}

TEST_CASE("downward pass: root weights are constant one") {
  HybridNetwork net = single_variable_network();
  JoinTree jt = build_join_tree(net);
  InferenceConfig cfg;
  upward_pass(jt, cfg, 1);
  downward_weight_pass(jt);
  jt.root_clique().potential.for_each_leaf(
      [](const LeafPath&, const DyadicBox&, const BspNode& leaf) {
        CHECK(leaf.weight == 1.0);
      });
}

TEST_CASE("downward pass calibrates the separator (Eq. 7 analogue)") {
  JoinTree jt = build_join_tree(make_robot_network(0.2, 0.8, true));
  InferenceConfig cfg;
  cfg.rng_seed = 1;
  upward_pass(jt, cfg, 1);
  downward_weight_pass(jt);

  const Clique& root = jt.root_clique();
  REQUIRE(root.children.size() == 1);
  const Clique& child = jt.cliques[root.children[0]];
  REQUIRE(child.has_weight_message);

  // Parent side: weighted root marginal on the separator, at unit mass.
  BspTree weighted = multiply(root.potential.weights_as_values(),
                              root.potential.with_log_scale(0.0));
  BspTree parent_marginal = integrate_out(weighted, "x3");

  // The weight message times the child's raw upward message must reproduce
  // it pointwise: that is the calibration identity on the separator.
  for (int k = 0; k < 64; ++k) {
    std::vector<double> y{(k + 0.5) / 64.0};
    double parent_side = parent_marginal.evaluate_at(y);
    double child_side =
        child.weight_message.value_at(y) * child.upward_message.evaluate_at(y);
    CHECK(std::abs(parent_side - child_side) <=
          1e-6 * std::max(std::abs(parent_side), 1e-300));
  }

  // The child's stored leaf weights are the message resolved at centers.
  std::vector<int> gather;
  for (const auto& v : child.separator) {
    gather.push_back(scope_index(child.scope, v));
  }
  child.potential.for_each_leaf([&](const LeafPath&, const DyadicBox& box,
                                    const BspNode& leaf) {
    auto center = box.center();
    std::vector<double> sub;
    for (int idx : gather) sub.push_back(center[idx]);
    CHECK(leaf.weight ==
          doctest::Approx(child.weight_message.value_at(sub)).epsilon(1e-12));
  });
}

TEST_CASE("weight calibration is the only state the downward pass mutates") {
  JoinTree jt = build_join_tree(make_robot_network(0.2, 0.8, true));
  InferenceConfig cfg;
  cfg.rng_seed = 1;
  BspTree first = upward_pass(jt, cfg, 1);
  downward_weight_pass(jt);
  // Re-running the unweighted sweep (no weight trees installed) must
  // reproduce the iteration-1 posterior bit for bit.
  BspTree second = upward_pass(jt, cfg, 1);
  CHECK(serialize(first) == serialize(second));
}

TEST_CASE("wkl_distance_trees") {
  SUBCASE("identical arguments score zero") {
    std::mt19937 rng(31);
    BspTree f = testutil::random_tree(rng, {"a", "b"});
    BspTree w = testutil::random_tree(rng, {"a", "b"});
    CHECK(wkl_distance_trees(f, f, w) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("constant weights factor out") {
    std::mt19937 rng(32);
    BspTree f = testutil::random_tree(rng, {"a"});
    BspTree g = testutil::random_tree(rng, {"a"});
    BspTree unit = BspTree::constant({"a"}, 1.0);
    BspTree threes = BspTree::constant({"a"}, 3.0);
    double base = wkl_distance_trees(f, g, unit);
    CHECK(wkl_distance_trees(f, g, threes) ==
          doctest::Approx(3.0 * base).epsilon(1e-12));
  }
  SUBCASE("weight bounds hold on same-partition pairs") {
    std::mt19937 rng(33);
    std::uniform_real_distribution<double> shrink(0.3, 1.0);
    std::uniform_real_distribution<double> wdist(0.5, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
      BspTree f = testutil::random_tree(rng, {"a", "b"}, 6, 0.7);
      // g below f leaf by leaf keeps every KL contribution nonnegative.
      BspTree g = f.map_leaves([&](double v, double w) {
        return std::make_pair(v * shrink(rng), w);
      });
      BspTree w = f.map_leaves([&](double, double weight) {
        return std::make_pair(wdist(rng), weight);
      });
      double w_min = 1e300, w_max = 0.0;
      w.for_each_leaf([&](const LeafPath&, const DyadicBox&,
                          const BspNode& leaf) {
        w_min = std::min(w_min, leaf.value);
        w_max = std::max(w_max, leaf.value);
      });
      double d = wkl_distance_trees(f, g, BspTree::constant({"a", "b"}, 1.0));
      double weighted = wkl_distance_trees(f, g, w);
      CHECK(weighted >= w_min * d - 1e-12);
      CHECK(weighted <= w_max * d + 1e-12);
    }
  }
  SUBCASE("scope mismatch is rejected") {
    BspTree f = BspTree::constant({"a"}, 1.0);
    BspTree g = BspTree::constant({"b"}, 1.0);
    CHECK_THROWS_AS(wkl_distance_trees(f, g, f), std::invalid_argument);
  }
}

TEST_CASE("iterate on the unlikely-evidence benchmark (seed 1)") {
  HybridNetwork net = make_robot_network(0.2, 0.8, true);
  Density1D oracle = exact_robot_posterior(0.2, 0.8);
  InferenceConfig cfg;
  cfg.rng_seed = 1;
  cfg.max_iterations = 3;
  cfg.convergence_tol = 1e-12;
  JoinTree jt = build_join_tree(net);
  InferenceResult r = iterate(jt, cfg, &oracle);
  REQUIRE(r.iterations.size() == 3);

  // The unweighted pass is coarse; calibrated refinement then closes in.
  CHECK(iter_kl(r, 1) > 0.5);
  CHECK(iter_kl(r, 2) <= 0.08);
  CHECK(iter_kl(r, 3) <= 0.02);

  std::size_t root2 = r.iterations[1].clique_leaf_counts[jt.root];
  std::size_t root3 = r.iterations[2].clique_leaf_counts[jt.root];
  CHECK(root2 >= 6);
  CHECK(root2 <= 36);
  CHECK(root3 >= 9);
  CHECK(root3 <= 54);
}

TEST_CASE("iterate converges early on likely evidence") {
  HybridNetwork net = make_robot_network(0.2, 0.2, true);
  Density1D oracle = exact_robot_posterior(0.2, 0.2);
  InferenceConfig cfg;
  cfg.rng_seed = 1;
  cfg.max_iterations = 3;
  cfg.convergence_tol = 1e-12;
  InferenceResult r = iterate(net, cfg, &oracle);
  REQUIRE(r.iterations.size() == 3);
  CHECK(std::abs(iter_kl(r, 3) - iter_kl(r, 2)) < 0.01);
}

TEST_CASE("iteration caps and convergence accounting") {
  HybridNetwork net = make_robot_network(0.2, 0.8, true);
  SUBCASE("a cap of one yields exactly the first-pass posterior") {
    InferenceConfig cfg;
    cfg.rng_seed = 1;
    cfg.max_iterations = 1;
    InferenceResult r = iterate(net, cfg);
    CHECK(r.iterations.size() == 1);
    CHECK_FALSE(r.converged);

    JoinTree jt = build_join_tree(net);
    InferenceConfig same = cfg;
    BspTree direct = upward_pass(jt, same, 1);
    CHECK(serialize(r.posterior) == serialize(direct));
  }
  SUBCASE("an infinite tolerance stops at the first comparison") {
    InferenceConfig cfg;
    cfg.rng_seed = 1;
    cfg.convergence_tol = 1e9;
    InferenceResult r = iterate(net, cfg);
    CHECK(r.iterations.size() == 2);  // one sweep plus the comparison sweep
    CHECK(r.converged);
  }
}

TEST_CASE("posteriors are normalized") {
  for (auto [o1, o2] : {std::pair{0.2, 0.8}, std::pair{0.6, 0.9}}) {
    HybridNetwork net = make_robot_network(o1, o2, true);
    InferenceConfig cfg;
    cfg.rng_seed = 1;
    cfg.max_iterations = 2;
    InferenceResult r = iterate(net, cfg);
    for (const auto& it : r.iterations) {
      CHECK(total_integral(it.posterior.with_log_scale(0.0)) ==
            doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("fixed seeds reproduce byte-identical runs") {
  HybridNetwork net = make_robot_network(0.2, 0.8, true);
  InferenceConfig cfg;
  cfg.rng_seed = 7;
  cfg.max_iterations = 3;
  cfg.convergence_tol = 1e-12;
  InferenceResult a = iterate(net, cfg);
  InferenceResult b = iterate(net, cfg);
  REQUIRE(a.iterations.size() == b.iterations.size());
  CHECK(serialize(a.posterior) == serialize(b.posterior));
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    CHECK(serialize(a.iterations[i].posterior) ==
          serialize(b.iterations[i].posterior));
    CHECK(a.iterations[i].clique_leaf_counts ==
          b.iterations[i].clique_leaf_counts);
  }
}
