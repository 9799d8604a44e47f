#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bspinfer/bsp_tree.hpp"

namespace bspinfer {

struct VariableDomain {
  std::string name;
  bool discrete = false;
  double lo = 0.0;  // continuous range [lo, hi], affine-mapped to [0,1]
  double hi = 1.0;
  std::vector<std::string> states;  // discrete-observed state labels

  double to_unit(double natural) const { return (natural - lo) / (hi - lo); }
  double to_natural(double unit) const { return lo + unit * (hi - lo); }
};

struct Evidence {
  std::map<std::string, double> continuous;    // natural units
  std::map<std::string, std::string> discrete;  // state labels

  bool observes(const std::string& name) const {
    return continuous.count(name) > 0 || discrete.count(name) > 0;
  }
  bool empty() const { return continuous.empty() && discrete.empty(); }
};

// Evaluable parametric density term over normalized coordinates. The scope
// lists the continuous arguments in axis order; evaluation maps each
// coordinate back to natural units before applying the parametric form.
class ContinuousFactor {
 public:
  // Members are left without default initializers: the enclosing variant
  // needs these default-constructible while ContinuousFactor is still an
  // incomplete type, and nested-class member initializers are not parsed
  // until its closing brace.
  struct LinearGaussian {
    std::vector<double> coeffs;  // aligned with scope
    double offset;
    double variance;
  };
  struct Logistic {
    double gain;
    double threshold;
    std::string discrete_child;  // observed discrete sensor variable
    // Set once evidence is absorbed: true selects the sigmoid, false its
    // complement. Evaluating with it unset is an error (latent discrete
    // variables are unsupported).
    std::optional<bool> observed;
  };
  struct Uniform {
    double level;
  };
  struct PointwiseProduct {
    std::vector<ContinuousFactor> terms;
  };

  static ContinuousFactor linear_gaussian(
      Scope scope, std::vector<std::pair<double, double>> ranges,
      std::vector<double> coeffs, double offset, double variance);
  static ContinuousFactor logistic(std::string variable,
                                   std::pair<double, double> range, double gain,
                                   double threshold, std::string discrete_child,
                                   std::optional<bool> observed = {});
  static ContinuousFactor uniform(std::string variable,
                                  std::pair<double, double> range,
                                  double level = 1.0);
  static ContinuousFactor product(std::vector<ContinuousFactor> terms);

  const Scope& scope() const { return scope_; }
  const std::vector<std::pair<double, double>>& ranges() const {
    return ranges_;
  }

  // Density at a point covering the factor scope, in normalized coordinates.
  double evaluate(std::span<const double> unit_point) const;

  // Returns the factor over the variables that remain unobserved.
  ContinuousFactor instantiate_evidence(const Evidence& evidence) const;

  const LinearGaussian* as_linear_gaussian() const {
    return std::get_if<LinearGaussian>(&form_);
  }
  const Logistic* as_logistic() const { return std::get_if<Logistic>(&form_); }

 private:
  ContinuousFactor();

  Scope scope_;
  std::vector<std::pair<double, double>> ranges_;  // natural range per axis
  std::variant<LinearGaussian, Logistic, Uniform, PointwiseProduct> form_;
};

// Product of factor evaluations; each factor reads its arguments from the
// point through the shared scope by name.
double product_evaluate(const std::vector<ContinuousFactor>& factors,
                        const Scope& point_scope,
                        std::span<const double> unit_point);

// Pre-resolved name lookups for repeated evaluation against a fixed scope.
class BoundFactor {
 public:
  BoundFactor(const ContinuousFactor& factor, const Scope& point_scope);
  double evaluate(std::span<const double> unit_point) const;

 private:
  const ContinuousFactor* factor_;
  std::vector<int> indices_;
};

}  // namespace bspinfer
