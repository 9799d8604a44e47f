// Command-line front end: network inference plus the benchmark sweeps,
// emitting CSV and serialized-tree artifacts.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "bspinfer/inference.hpp"

namespace fs = std::filesystem;
using namespace bspinfer;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct CommonOptions {
  double delta = 0.02;
  std::size_t max_leaves = 1024;
  int max_iterations = 6;
  double tol = 1e-3;
  std::uint64_t seed = 1;
  std::string out_dir = ".";

  void attach(CLI::App* cmd) {
    cmd->add_option("--delta", delta, "per-clique discretization precision");
    cmd->add_option("--max-leaves", max_leaves, "per-clique leaf budget");
    cmd->add_option("--max-iterations", max_iterations, "iteration cap");
    cmd->add_option("--tol", tol, "posterior KL convergence threshold");
    cmd->add_option("--seed", seed, "sampling seed");
    cmd->add_option("--out", out_dir, "output directory");
  }

  InferenceConfig config() const {
    InferenceConfig c;
    c.delta = delta;
    c.max_leaves = max_leaves;
    c.max_iterations = max_iterations;
    c.convergence_tol = tol;
    c.rng_seed = seed;
    return c;
  }

  std::ofstream open(const std::string& name) const {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write to " + out_dir);
    return out;
  }

  void manifest(const std::string& command,
                const std::vector<std::pair<std::string, std::string>>& extra =
                    {}) const {
    auto out = open("manifest.txt");
    out << "command=" << command << "\n"
        << "delta=" << fmt(delta) << "\n"
        << "max_leaves=" << max_leaves << "\n"
        << "max_iterations=" << max_iterations << "\n"
        << "tol=" << fmt(tol) << "\n"
        << "seed=" << seed << "\n";
    for (const auto& [k, v] : extra) out << k << "=" << v << "\n";
  }
};

// Recognizes the three-variable sensor chain with a closed-form posterior:
// uniform prior, variance-0.01 transitions and position sensors on [0,1],
// and an observed-true halfspace sensor (gain 40, threshold 0.5) on the
// query. Returns the two observed positions when everything matches.
std::optional<std::pair<double, double>> detect_chain_oracle(
    const HybridNetwork& net) {
  auto unit_range = [](const VariableDomain& v) {
    return !v.discrete && v.lo == 0.0 && v.hi == 1.0;
  };
  auto is_unit_diff = [&](const ContinuousFactor& f, const std::string& a,
                          const std::string& b) {
    const auto* lg = f.as_linear_gaussian();
    if (!lg || lg->offset != 0.0 || lg->variance != 0.01) return false;
    if (f.scope().size() != 2) return false;
    int ia = scope_index(f.scope(), a);
    int ib = scope_index(f.scope(), b);
    if (ia < 0 || ib < 0) return false;
    return lg->coeffs[ia] * lg->coeffs[ib] == -1.0 &&
           std::abs(lg->coeffs[ia]) == 1.0;
  };

  // The chain read off the factor children: prior -> x1, sensors on x1 and
  // x2, transitions x1->x2->query, halfspace sensor on the query.
  const std::string& x3 = net.query;
  std::string x1, x2;
  for (const auto& nf : net.factors) {
    if (!nf.factor.as_linear_gaussian() && !nf.factor.as_logistic() &&
        nf.factor.scope().size() == 1) {
      if (!x1.empty()) return {};
      x1 = nf.child;  // the uniform prior names the chain head
    }
  }
  if (x1.empty()) return {};
  for (const auto& nf : net.factors) {
    if (nf.factor.as_linear_gaussian() && nf.child != x3 &&
        !net.evidence.observes(nf.child) &&
        scope_contains(nf.factor.scope(), x1) && nf.child != x1) {
      if (!x2.empty()) return {};
      x2 = nf.child;
    }
  }
  if (x2.empty()) return {};
  std::string s1, s2;
  for (const auto& nf : net.factors) {
    if (!nf.factor.as_linear_gaussian()) continue;
    if (!net.evidence.continuous.count(nf.child)) continue;
    if (scope_contains(nf.factor.scope(), x1)) s1 = nf.child;
    if (scope_contains(nf.factor.scope(), x2)) s2 = nf.child;
  }
  if (s1.empty() || s2.empty() || s1 == s2) return {};

  int prior = 0, t12 = 0, t23 = 0, gate = 0;
  for (const auto& nf : net.factors) {
    const auto& f = nf.factor;
    if (f.as_linear_gaussian()) {
      if (nf.child == s1 && is_unit_diff(f, s1, x1)) continue;
      if (nf.child == s2 && is_unit_diff(f, s2, x2)) continue;
      if (nf.child == x2 && is_unit_diff(f, x2, x1)) { ++t12; continue; }
      if (nf.child == x3 && is_unit_diff(f, x3, x2)) { ++t23; continue; }
      return {};
    } else if (const auto* lo = f.as_logistic()) {
      if (nf.child != lo->discrete_child || f.scope() != Scope{x3}) return {};
      if (lo->gain != 40.0 || lo->threshold != 0.5) return {};
      auto it = net.evidence.discrete.find(lo->discrete_child);
      if (it == net.evidence.discrete.end() || it->second != "true") return {};
      ++gate;
    } else if (f.scope() == Scope{x1}) {
      ++prior;
    } else {
      return {};
    }
  }
  if (prior != 1 || t12 != 1 || t23 != 1 || gate != 1) return {};
  for (const auto& name : {x1, x2, x3, s1, s2}) {
    const VariableDomain* v = net.find_variable(name);
    if (!v || !unit_range(*v)) return {};
  }
  return std::make_pair(net.evidence.continuous.at(s1),
                        net.evidence.continuous.at(s2));
}

void write_posterior_csv(std::ofstream out, const BspTree& posterior,
                         const VariableDomain& query) {
  out << "x,density\n";
  double width = query.hi - query.lo;
  for (int i = 0; i < 1000; ++i) {
    double u = (i + 0.5) / 1000.0;
    double point[1] = {u};
    out << fmt(query.to_natural(u)) << ","
        << fmt(posterior.evaluate_at(point) / width) << "\n";
  }
}

void write_diagnostics_csv(std::ofstream out, const InferenceResult& result,
                           bool have_oracle) {
  out << "iteration,clique,leaf_count,kl_to_previous,kl_to_exact\n";
  for (const auto& it : result.iterations) {
    for (std::size_t c = 0; c < it.clique_leaf_counts.size(); ++c) {
      out << it.iteration << "," << c << "," << it.clique_leaf_counts[c] << ",";
      if (it.iteration > 1) out << fmt(it.kl_to_previous);
      out << ",";
      if (have_oracle) out << fmt(it.kl_to_exact);
      out << "\n";
    }
  }
}

int cmd_infer(const std::string& network_path, const CommonOptions& opt) {
  HybridNetwork net;
  try {
    net = load_network_file(network_path);
  } catch (const NetworkParseError& e) {
    std::fprintf(stderr, "parse error at line %d: %s\n", e.line, e.what());
    return 1;
  }

  std::optional<Density1D> oracle;
  if (auto obs = detect_chain_oracle(net)) {
    oracle = exact_robot_posterior(obs->first, obs->second);
  }

  InferenceResult result;
  JoinTree jt = build_join_tree(net);
  try {
    result = iterate(jt, opt.config(), oracle ? &*oracle : nullptr);
  } catch (const VanishedPotentialError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 3;
  }

  opt.manifest("infer", {{"network", network_path},
                         {"oracle", oracle ? "chain" : "none"}});
  write_posterior_csv(opt.open("posterior.csv"), result.posterior,
                      *net.find_variable(net.query));
  write_diagnostics_csv(opt.open("diagnostics.csv"), result,
                        oracle.has_value());
  for (const auto& c : jt.cliques) {
    opt.open("clique_" + std::to_string(c.id) + ".bsp")
        << serialize(c.potential);
  }
  return result.converged ? 0 : 2;
}

// Interior cut positions of a 1-D tree, read off the leaf boxes.
std::vector<double> tree_cuts(const BspTree& tree) {
  std::vector<double> cuts;
  tree.for_each_leaf(
      [&](const LeafPath&, const DyadicBox& box, const BspNode&) {
        if (box.lo[0] > 0.0) cuts.push_back(box.lo[0]);
      });
  std::sort(cuts.begin(), cuts.end());
  return cuts;
}

int cmd_discretize_1d(const CommonOptions& opt) {
  Density1D f = [](double x) {
    double d = x - 0.5;
    return std::exp(-d * d / (2.0 * 0.0025)) / std::sqrt(2.0 * M_PI * 0.0025);
  };
  DensityFn fn = [&f](std::span<const double> p) { return f(p[0]); };

  opt.manifest("discretize-1d");
  auto out = opt.open("discretize_1d.csv");
  out << "m,kl_bsp,kl_equidistant,kl_descent\n";
  for (int m = 2; m <= 256; m *= 2) {
    DiscretizationConfig dc;
    dc.delta = 0.0;  // exhaust the leaf budget
    dc.max_leaves = static_cast<std::size_t>(m);
    dc.samples_per_region = 64;
    dc.rng_seed = opt.seed;
    BspTree bsp = discretize(fn, {"x"}, dc).tree;

    std::vector<double> equi;
    for (int i = 1; i < m; ++i) equi.push_back(static_cast<double>(i) / m);

    Breakpoints1D descent = optimal_1d_discretization(f, m);

    // All three partitions are scored with the same exact-mean quadrature,
    // so the comparison measures partition quality alone.
    out << m << "," << fmt(breakpoint_kl(f, tree_cuts(bsp))) << ","
        << fmt(breakpoint_kl(f, equi)) << ","
        << fmt(breakpoint_kl(f, descent.cuts)) << "\n";
  }
  return 0;
}

DensityFn ridge_density(int n) {
  return [n](std::span<const double> p) {
    double s = 0.0;
    for (int i = 0; i + 1 < n; ++i) s += p[i] / (n - 1);
    double d = s - p[n - 1];
    return std::exp(-d * d / (2.0 * 0.0025)) / std::sqrt(2.0 * M_PI * 0.0025);
  };
}

int cmd_ridge_scaling(const CommonOptions& opt) {
  opt.manifest("ridge-scaling");
  auto out = opt.open("ridge_scaling.csv");
  out << "n,target_kl,bsp_leaves,uniform_bins,uniform_leaves\n";
  for (int n : {2, 3, 4}) {
    DensityFn f = ridge_density(n);
    Scope scope;
    for (int i = 0; i < n; ++i) scope.push_back("x" + std::to_string(i + 1));
    int res = static_cast<int>(default_grid_resolution(n));
    auto tree_kl = [&](const BspTree& t) {
      return grid_kl(f, normalize(t), res);
    };

    for (double target : {0.05, 0.1}) {
      // Smallest leaf budget whose greedy discretization reaches the target.
      auto leaves_for = [&](std::size_t budget) {
        DiscretizationConfig dc;
        dc.delta = 0.0;
        dc.max_leaves = budget;
        dc.samples_per_region = 64;
        dc.rng_seed = opt.seed;
        return discretize(f, scope, dc).tree;
      };
      std::size_t lo = 1, hi = 1;
      while (tree_kl(leaves_for(hi)) > target) {
        lo = hi;
        hi *= 2;
        if (hi > (1u << 22)) break;
      }
      while (lo + 1 < hi) {
        std::size_t mid = (lo + hi) / 2;
        (tree_kl(leaves_for(mid)) > target ? lo : hi) = mid;
      }
      std::size_t bsp_leaves = leaves_for(hi).leaf_count();

      DiscretizationConfig uc;
      uc.samples_per_region = 64;
      uc.rng_seed = opt.seed;
      int bins = 1;
      while (tree_kl(uniform_baseline(f, scope, bins, uc)) > target) {
        bins *= 2;
        if (std::pow(bins, n) > double(1u << 24)) break;
      }
      out << n << "," << fmt(target) << "," << bsp_leaves << "," << bins << ","
          << fmt(std::pow(bins, n)) << "\n";
    }
  }
  return 0;
}

int cmd_robot_suite(const CommonOptions& opt) {
  const std::vector<std::pair<double, double>> evidence_sets = {
      {0.6, 0.9}, {0.2, 0.8}, {0.2, 0.5}};
  const std::vector<double> deltas = {0.08, 0.04, 0.02, 0.01};

  opt.manifest("robot-suite");
  auto by_iter = opt.open("error_vs_iteration.csv");
  by_iter << "o1,o2,delta,iteration,kl_to_exact,root_leaves\n";
  auto by_size = opt.open("error_vs_subregions.csv");
  by_size << "o1,o2,method,leaves,kl_to_exact\n";

  for (const auto& [o1, o2] : evidence_sets) {
    HybridNetwork net = make_robot_network(o1, o2, true);
    Density1D oracle = exact_robot_posterior(o1, o2);

    for (double delta : deltas) {
      InferenceConfig cfg = opt.config();
      cfg.delta = delta;
      JoinTree jt = build_join_tree(net);
      InferenceResult result = iterate(jt, cfg, &oracle);
      std::size_t root_leaves = 0;
      for (const auto& it : result.iterations) {
        root_leaves = it.clique_leaf_counts[jt.root];
        by_iter << fmt(o1) << "," << fmt(o2) << "," << fmt(delta) << ","
                << it.iteration << "," << fmt(it.kl_to_exact) << ","
                << root_leaves << "\n";
      }
    }

    // Matched per-clique budgets: adaptive refinement capped at bins^2
    // leaves against a fixed uniform bins-per-axis grid.
    for (int bins : {4, 8, 16}) {
      InferenceConfig cfg = opt.config();
      cfg.delta = 0.0;  // spend the whole budget
      cfg.max_leaves = static_cast<std::size_t>(bins) * bins;
      JoinTree jt = build_join_tree(net);
      InferenceResult result = iterate(jt, cfg, &oracle);
      by_size << fmt(o1) << "," << fmt(o2) << ",dynamic," << bins * bins << ","
              << fmt(result.iterations.back().kl_to_exact) << "\n";

      InferenceConfig ucfg = opt.config();
      ucfg.uniform_bins = bins;
      ucfg.max_iterations = 1;
      JoinTree ujt = build_join_tree(net);
      InferenceResult uresult = iterate(ujt, ucfg, &oracle);
      by_size << fmt(o1) << "," << fmt(o2) << ",uniform," << bins * bins << ","
              << fmt(uresult.iterations.back().kl_to_exact) << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BSP-tree nonuniform discretization inference"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::string network_path;

  CLI::App* infer = app.add_subcommand("infer", "run inference on a network");
  infer->add_option("network", network_path, "network description file")
      ->required()
      ->check(CLI::ExistingFile);
  opt.attach(infer);

  CLI::App* d1 = app.add_subcommand(
      "discretize-1d", "1-D partition quality: greedy vs equidistant vs descent");
  opt.attach(d1);

  CLI::App* ridge = app.add_subcommand(
      "ridge-scaling", "leaves needed vs dimension on the ridge density");
  opt.attach(ridge);

  CLI::App* robot = app.add_subcommand(
      "robot-suite", "error trajectories on the sensor-chain benchmarks");
  opt.attach(robot);

  CLI11_PARSE(app, argc, argv);

  try {
    if (infer->parsed()) return cmd_infer(network_path, opt);
    if (d1->parsed()) return cmd_discretize_1d(opt);
    if (ridge->parsed()) return cmd_ridge_scaling(opt);
    return cmd_robot_suite(opt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
}
