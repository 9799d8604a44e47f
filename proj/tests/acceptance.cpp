// Acceptance gate: one [PASS]/[FAIL] line per criterion, nonzero exit when
// any criterion fails. Tolerances are pinned here, next to each check.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bspinfer/inference.hpp"
#include "test_util.hpp"

using namespace bspinfer;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d — %s\n", pass ? "PASS" : "FAIL", id,
              detail.c_str());
  if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

double narrow_gaussian(double x) {
  double d = x - 0.5;
  return std::exp(-d * d / (2.0 * 0.0025)) / std::sqrt(2.0 * M_PI * 0.0025);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> tree_cuts(const BspTree& tree) {
  std::vector<double> cuts;
  tree.for_each_leaf(
      [&](const LeafPath&, const DyadicBox& box, const BspNode&) {
        if (box.lo[0] > 0.0) cuts.push_back(box.lo[0]);
      });
  std::sort(cuts.begin(), cuts.end());
  return cuts;
}

// ---------------------------------------------------------------------------
// Criterion 1: the closed-form chain posterior and the direct 2-D quadrature
// of the factored joint must agree to grid-KL <= 1e-6 at resolution 2000^2.
void criterion_1() {
  auto start = std::chrono::steady_clock::now();
  const int res = 2000;
  Density1D exact = exact_robot_posterior(0.2, 0.8);
  std::vector<double> q = robot_posterior_by_quadrature(0.2, 0.8, res, 2000);

  double sp = 0.0, sq = 0.0, cross = 0.0;
  for (int i = 0; i < res; ++i) {
    double p = exact((i + 0.5) / res);
    sp += p / res;
    sq += q[i] / res;
    if (p > 0.0) cross += p * std::log(p / std::max(q[i], 1e-300)) / res;
  }
  double kl = cross / sp - std::log(sp) + std::log(sq);
  double elapsed = seconds_since(start);

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "closed form vs 2-D quadrature: grid-KL %.3g (<= 1e-6), %.1fs "
                "(< 30s)",
                kl, elapsed);
  report(1, std::abs(kl) <= 1e-6 && elapsed < 30.0, buf);
}

// ---------------------------------------------------------------------------
// Criterion 2: on 20 random partitions, mean-valued leaves minimize the KL —
// perturbing any single value by +-10% must strictly increase it.
void criterion_2() {
  const int res = 1 << 17;
  std::vector<double> cum(res + 1, 0.0);
  double f_log_f = 0.0;
  for (int i = 0; i < res; ++i) {
    // A uniform component keeps every leaf's mass far from the double
    // rounding floor, so the strict-increase check is meaningful everywhere.
    double v = 0.9 * narrow_gaussian((i + 0.5) / res) + 0.1;
    cum[i + 1] = cum[i] + v / res;
    if (v > 0.0) f_log_f += v * std::log(v) / res;
  }
  double total = cum[res];
  auto mass = [&](double a, double b) {
    return cum[static_cast<int>(b * res)] - cum[static_cast<int>(a * res)];
  };
  // KL of the renormalized pair for arbitrary piecewise values.
  auto kl_for = [&](const std::vector<double>& bounds,
                    const std::vector<double>& values) {
    double cross = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      cross += mass(bounds[j], bounds[j + 1]) * std::log(values[j]);
      sq += values[j] * (bounds[j + 1] - bounds[j]);
    }
    return (f_log_f - cross) / total - std::log(total) + std::log(sq);
  };

  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  bool all_ok = true;
  int trials = 0;
  while (trials < 20) {
    // Random dyadic partition from recursive splitting.
    std::vector<double> bounds{0.0, 1.0};
    std::function<void(double, double, int)> split = [&](double lo, double hi,
                                                         int depth) {
      if (depth >= 7 || coin(rng) > 0.7) return;
      double mid = 0.5 * (lo + hi);
      bounds.push_back(mid);
      split(lo, mid, depth + 1);
      split(mid, hi, depth + 1);
    };
    split(0.0, 1.0, 0);
    std::sort(bounds.begin(), bounds.end());
    if (bounds.size() < 5) continue;
    ++trials;

    std::vector<double> values(bounds.size() - 1);
    for (std::size_t j = 0; j < values.size(); ++j) {
      values[j] = std::max(mass(bounds[j], bounds[j + 1]), 1e-300) /
                  (bounds[j + 1] - bounds[j]);
    }
    double base = kl_for(bounds, values);
    for (std::size_t j = 0; j < values.size(); ++j) {
      for (double factor : {1.1, 0.9}) {
        std::vector<double> perturbed = values;
        perturbed[j] *= factor;
        all_ok = all_ok && kl_for(bounds, perturbed) > base;
      }
    }
  }
  report(2, all_ok,
         all_ok ? "mean-valued leaves minimized the KL in all 20 partitions"
                : "a +-10% leaf perturbation failed to increase the KL");
}

// ---------------------------------------------------------------------------
// Criterion 3: 1-D partition quality. Gates as pinned: equidistant/BSP >= 3
// at m = 16 and m = 64, and BSP <= 1.5 x descent for every m >= 16.
void criterion_3() {
  auto start = std::chrono::steady_clock::now();
  Density1D f = narrow_gaussian;
  DensityFn fn = [](std::span<const double> p) { return narrow_gaussian(p[0]); };

  bool pass = true;
  std::string detail = "equi/bsp";
  std::string descent_detail = "bsp/descent";
  for (int m : {16, 32, 64, 128, 256}) {
    DiscretizationConfig dc;
    dc.delta = 0.0;
    dc.max_leaves = static_cast<std::size_t>(m);
    dc.samples_per_region = 64;
    dc.rng_seed = 1;
    double kl_bsp = breakpoint_kl(f, tree_cuts(discretize(fn, {"x"}, dc).tree));
    double kl_descent = breakpoint_kl(f, optimal_1d_discretization(f, m).cuts);

    if (m == 16 || m == 64) {
      std::vector<double> equi;
      for (int i = 1; i < m; ++i) equi.push_back(static_cast<double>(i) / m);
      double ratio = breakpoint_kl(f, equi) / kl_bsp;
      pass = pass && ratio >= 3.0;
      char buf[48];
      std::snprintf(buf, sizeof(buf), " %.2f@%d", ratio, m);
      detail += buf;
    }
    double ratio = kl_bsp / kl_descent;
    pass = pass && ratio <= 1.5;
    char buf[48];
    std::snprintf(buf, sizeof(buf), " %.2f@%d", ratio, m);
    descent_detail += buf;
  }
  double elapsed = seconds_since(start);
  pass = pass && elapsed < 120.0;
  char buf[64];
  std::snprintf(buf, sizeof(buf), " (gates >= 3, <= 1.5); %.0fs (< 120s)",
                elapsed);
  report(3, pass, detail + "; " + descent_detail + buf);
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5: dynamic-discretization trajectory on the unlikely
// evidence set (o1 = 0.2, o2 = 0.8, gate observed true, delta = 0.02),
// medians over 10 fixed seeds.
void criteria_4_and_5() {
  auto start = std::chrono::steady_clock::now();
  HybridNetwork net = make_robot_network(0.2, 0.8, true);
  Density1D oracle = exact_robot_posterior(0.2, 0.8);

  std::vector<double> kl1, kl2, kl3, root2, root3;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    InferenceConfig cfg;
    cfg.delta = 0.02;
    cfg.rng_seed = seed;
    cfg.max_iterations = 3;
    cfg.convergence_tol = 1e-12;
    JoinTree jt = build_join_tree(net);
    InferenceResult r = iterate(jt, cfg, &oracle);
    kl1.push_back(r.iterations[0].kl_to_exact);
    kl2.push_back(r.iterations[1].kl_to_exact);
    kl3.push_back(r.iterations[2].kl_to_exact);
    root2.push_back(
        static_cast<double>(r.iterations[1].clique_leaf_counts[jt.root]));
    root3.push_back(
        static_cast<double>(r.iterations[2].clique_leaf_counts[jt.root]));
  }
  double elapsed = seconds_since(start);

  double m_kl1 = median(kl1), m_kl2 = median(kl2), m_kl3 = median(kl3);
  double m_r2 = median(root2), m_r3 = median(root3);
  bool pass4 = m_kl2 <= 0.06 && m_kl3 <= 0.01 && m_r2 >= 6.0 && m_r2 <= 36.0 &&
               m_r3 >= 9.0 && m_r3 <= 54.0 && elapsed < 120.0;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "median KL %.3f@2 (<= 0.06) %.4f@3 (<= 0.01), root leaves "
                "%.0f@2 (in [6,36]) %.0f@3 (in [9,54]), %.1fs (< 120s)",
                m_kl2, m_kl3, m_r2, m_r3, elapsed);
  report(4, pass4, buf);

  bool pass5 = m_kl2 <= 0.5 * m_kl1;
  std::snprintf(buf, sizeof(buf),
                "median KL drops %.3f -> %.3f after the first sweep "
                "(<= 0.5x required)",
                m_kl1, m_kl2);
  report(5, pass5, buf);
}

// ---------------------------------------------------------------------------
// Criterion 6: at matched per-clique budgets (N^2 leaves, N in {4, 8}) the
// dynamic discretization beats the uniform grid on all three evidence sets,
// and by at least 2x on the unlikely 0.2/0.8 set.
void criterion_6() {
  bool pass = true;
  std::string detail = "dynamic/uniform KL";
  for (auto [o1, o2] : {std::pair{0.6, 0.9}, std::pair{0.2, 0.8},
                        std::pair{0.2, 0.5}}) {
    HybridNetwork net = make_robot_network(o1, o2, true);
    Density1D oracle = exact_robot_posterior(o1, o2);
    for (int bins : {4, 8}) {
      InferenceConfig cfg;
      cfg.delta = 0.0;  // spend the whole budget
      cfg.max_leaves = static_cast<std::size_t>(bins) * bins;
      cfg.rng_seed = 1;
      InferenceResult dynamic = iterate(net, cfg, &oracle);
      double kl_dyn = dynamic.iterations.back().kl_to_exact;

      InferenceConfig ucfg;
      ucfg.uniform_bins = bins;
      ucfg.max_iterations = 1;
      ucfg.rng_seed = 1;
      InferenceResult uniform = iterate(net, ucfg, &oracle);
      double kl_uni = uniform.iterations.back().kl_to_exact;

      pass = pass && kl_dyn <= kl_uni;
      if (o1 == 0.2 && o2 == 0.8) pass = pass && kl_dyn <= 0.5 * kl_uni;
      char buf[80];
      std::snprintf(buf, sizeof(buf), " %.3g/%.3g@%d(%.1f,%.1f)", kl_dyn,
                    kl_uni, bins * bins, o1, o2);
      detail += buf;
    }
  }
  report(6, pass, detail + " (all <= 1x; 0.2/0.8 <= 0.5x)");
}

// ---------------------------------------------------------------------------
// Criterion 7: leaves needed to reach grid-KL 0.05 on the ridge density are
// strictly fewer than the uniform grid for n = 2..4, with a growing ratio.
void criterion_7() {
  auto start = std::chrono::steady_clock::now();
  const double target = 0.05;
  bool pass = true;
  double previous_ratio = 0.0;
  std::string detail = "bsp vs uniform leaves";
  for (int n : {2, 3, 4}) {
    DensityFn f = [n](std::span<const double> p) {
      double s = 0.0;
      for (int i = 0; i + 1 < n; ++i) s += p[i] / (n - 1);
      double d = s - p[n - 1];
      return std::exp(-d * d / (2.0 * 0.0025)) /
             std::sqrt(2.0 * M_PI * 0.0025);
    };
    Scope scope;
    for (int i = 0; i < n; ++i) scope.push_back("x" + std::to_string(i + 1));
    int res = static_cast<int>(default_grid_resolution(n));
    auto tree_kl = [&](const BspTree& t) { return grid_kl(f, normalize(t), res); };

    auto greedy = [&](std::size_t budget) {
      DiscretizationConfig dc;
      dc.delta = 0.0;
      dc.max_leaves = budget;
      dc.samples_per_region = 64;
      dc.rng_seed = 1;
      return discretize(f, scope, dc).tree;
    };
    std::size_t lo = 1, hi = 1;
    while (tree_kl(greedy(hi)) > target && hi <= (1u << 22)) {
      lo = hi;
      hi *= 2;
    }
    while (lo + 1 < hi) {
      std::size_t mid = (lo + hi) / 2;
      (tree_kl(greedy(mid)) > target ? lo : hi) = mid;
    }
    double bsp_leaves = static_cast<double>(greedy(hi).leaf_count());

    DiscretizationConfig uc;
    uc.samples_per_region = 64;
    uc.rng_seed = 1;
    int bins = 1;
    while (tree_kl(uniform_baseline(f, scope, bins, uc)) > target &&
           std::pow(2.0 * bins, n) <= double(1u << 24)) {
      bins *= 2;
    }
    double uniform_leaves = std::pow(static_cast<double>(bins), n);

    double ratio = uniform_leaves / bsp_leaves;
    pass = pass && bsp_leaves < uniform_leaves && ratio > previous_ratio;
    previous_ratio = ratio;
    char buf[80];
    std::snprintf(buf, sizeof(buf), " %.0f/%.0f@n=%d", bsp_leaves,
                  uniform_leaves, n);
    detail += buf;
  }
  double elapsed = seconds_since(start);
  pass = pass && elapsed < 600.0;
  char buf[64];
  std::snprintf(buf, sizeof(buf), ", ratio increasing; %.0fs (< 600s)",
                elapsed);
  report(7, pass, detail + buf);
}

// ---------------------------------------------------------------------------
// Criterion 8: property digest — tree algebra vs the pointwise oracle,
// alignment soundness, partition invariants, separator calibration, WKL
// weight bounds, posterior normalization, and seeded determinism.
bool algebra_properties() {
  std::mt19937 rng(101);
  for (Scope scope : {Scope{"a"}, Scope{"a", "b"}, Scope{"a", "b", "c"}}) {
    int dims = static_cast<int>(scope.size());
    BspTree a = testutil::random_tree(rng, scope);
    BspTree b = testutil::random_tree(rng, scope);
    BspTree sum = add(a, b);
    BspTree product = multiply(a, b);
    auto [ra, rb] = align(a, b);
    BspTree int_sum = integrate_out(sum, "a");
    BspTree sum_int = add(integrate_out(a, "a"), integrate_out(b, "a"));
    for (int i = 0; i < 1000; ++i) {
      auto p = testutil::random_point(rng, dims);
      double av = a.evaluate_at(p), bv = b.evaluate_at(p);
      if (std::abs(sum.evaluate_at(p) - (av + bv)) > 1e-9) return false;
      if (std::abs(product.evaluate_at(p) - av * bv) > 1e-9) return false;
      if (ra.evaluate_at(p) != av || rb.evaluate_at(p) != bv) return false;
      if (dims > 1) {
        std::vector<double> sub(p.begin() + 1, p.end());
        if (std::abs(int_sum.evaluate_at(sub) - sum_int.evaluate_at(sub)) >
            1e-9) {
          return false;
        }
      }
    }
    double volume = 0.0;
    sum.for_each_leaf([&](const LeafPath&, const DyadicBox& box,
                          const BspNode&) { volume += box.volume(); });
    if (std::abs(volume - 1.0) > 1e-12) return false;
  }
  return true;
}

bool calibration_property() {
  JoinTree jt = build_join_tree(make_robot_network(0.2, 0.8, true));
  InferenceConfig cfg;
  cfg.rng_seed = 1;
  upward_pass(jt, cfg, 1);
  downward_weight_pass(jt);
  const Clique& root = jt.root_clique();
  const Clique& child = jt.cliques[root.children[0]];
  BspTree weighted = multiply(root.potential.weights_as_values(),
                              root.potential.with_log_scale(0.0));
  BspTree parent_marginal = integrate_out(weighted, "x3");
  for (int k = 0; k < 64; ++k) {
    std::vector<double> y{(k + 0.5) / 64.0};
    double parent_side = parent_marginal.evaluate_at(y);
    double child_side =
        child.weight_message.value_at(y) * child.upward_message.evaluate_at(y);
    if (std::abs(parent_side - child_side) >
        1e-6 * std::max(std::abs(parent_side), 1e-300)) {
      return false;
    }
  }
  return true;
}

bool wkl_bounds_property() {
  std::mt19937 rng(103);
  std::uniform_real_distribution<double> shrink(0.3, 1.0);
  std::uniform_real_distribution<double> wdist(0.5, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    BspTree f = testutil::random_tree(rng, {"a", "b"}, 6, 0.7);
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
    if (weighted < w_min * d - 1e-12 || weighted > w_max * d + 1e-12) {
      return false;
    }
  }
  return true;
}

bool posterior_properties() {
  HybridNetwork net = make_robot_network(0.2, 0.8, true);
  InferenceConfig cfg;
  cfg.rng_seed = 1;
  cfg.max_iterations = 3;
  cfg.convergence_tol = 1e-12;
  InferenceResult a = iterate(net, cfg);
  InferenceResult b = iterate(net, cfg);
  for (const auto& it : a.iterations) {
    if (std::abs(total_integral(it.posterior.with_log_scale(0.0)) - 1.0) >
        1e-9) {
      return false;
    }
  }
  return serialize(a.posterior) == serialize(b.posterior);
}

void criterion_8() {
  bool algebra = algebra_properties();
  bool calibration = calibration_property();
  bool wkl = wkl_bounds_property();
  bool posterior = posterior_properties();
  std::string detail;
  detail += std::string("algebra+alignment+partition ") +
            (algebra ? "ok" : "FAILED");
  detail += std::string(", calibration<=1e-6 ") + (calibration ? "ok" : "FAILED");
  detail += std::string(", wkl bounds ") + (wkl ? "ok" : "FAILED");
  detail += std::string(", normalization+determinism ") +
            (posterior ? "ok" : "FAILED");
  report(8, algebra && calibration && wkl && posterior, detail);
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criteria_4_and_5();
  criterion_6();
  criterion_7();
  criterion_8();
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
