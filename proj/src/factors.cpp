#include "bspinfer/factors.hpp"

#include <cmath>
#include <stdexcept>

namespace bspinfer {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_scope_ranges(const Scope& scope,
                        const std::vector<std::pair<double, double>>& ranges) {
  if (scope.size() != ranges.size()) {
    throw std::invalid_argument("scope and range lists differ in length");
  }
  for (const auto& [lo, hi] : ranges) {
    if (!(lo < hi)) throw std::invalid_argument("variable range must have lo < hi");
  }
  for (std::size_t i = 0; i < scope.size(); ++i) {
    for (std::size_t j = i + 1; j < scope.size(); ++j) {
      if (scope[i] == scope[j]) {
        throw std::invalid_argument("duplicate variable in factor scope");
      }
    }
  }
}

}  // namespace

ContinuousFactor::ContinuousFactor() = default;

ContinuousFactor ContinuousFactor::linear_gaussian(
    Scope scope, std::vector<std::pair<double, double>> ranges,
    std::vector<double> coeffs, double offset, double variance) {
  check_scope_ranges(scope, ranges);
  if (coeffs.size() != scope.size()) {
    throw std::invalid_argument("coefficient count differs from scope length");
  }
  if (!(variance > 0.0)) throw std::invalid_argument("variance must be > 0");
  ContinuousFactor f;
  f.scope_ = std::move(scope);
  f.ranges_ = std::move(ranges);
  f.form_ = LinearGaussian{std::move(coeffs), offset, variance};
  return f;
}

ContinuousFactor ContinuousFactor::logistic(std::string variable,
                                            std::pair<double, double> range,
                                            double gain, double threshold,
                                            std::string discrete_child,
                                            std::optional<bool> observed) {
  ContinuousFactor f;
  f.scope_ = {std::move(variable)};
  f.ranges_ = {range};
  check_scope_ranges(f.scope_, f.ranges_);
  f.form_ = Logistic{gain, threshold, std::move(discrete_child), observed};
  return f;
}

ContinuousFactor ContinuousFactor::uniform(std::string variable,
                                           std::pair<double, double> range,
                                           double level) {
  if (!(level >= 0.0)) throw std::invalid_argument("level must be >= 0");
  ContinuousFactor f;
  f.scope_ = {std::move(variable)};
  f.ranges_ = {range};
  check_scope_ranges(f.scope_, f.ranges_);
  f.form_ = Uniform{level};
  return f;
}

ContinuousFactor ContinuousFactor::product(std::vector<ContinuousFactor> terms) {
  ContinuousFactor f;
  for (const auto& term : terms) {
    for (std::size_t i = 0; i < term.scope_.size(); ++i) {
      if (!scope_contains(f.scope_, term.scope_[i])) {
        f.scope_.push_back(term.scope_[i]);
        f.ranges_.push_back(term.ranges_[i]);
      }
    }
  }
  f.form_ = PointwiseProduct{std::move(terms)};
  return f;
}

double ContinuousFactor::evaluate(std::span<const double> unit_point) const {
  if (unit_point.size() != scope_.size()) {
    throw std::invalid_argument("point dimension differs from factor scope");
  }
  if (const auto* lg = std::get_if<LinearGaussian>(&form_)) {
    double arg = -lg->offset;
    for (std::size_t i = 0; i < scope_.size(); ++i) {
      double natural = ranges_[i].first +
                       unit_point[i] * (ranges_[i].second - ranges_[i].first);
      arg += lg->coeffs[i] * natural;
    }
    return std::exp(-arg * arg / (2.0 * lg->variance)) /
           std::sqrt(kTwoPi * lg->variance);
  }
  if (const auto* lo = std::get_if<Logistic>(&form_)) {
    if (!lo->observed.has_value()) {
      throw std::runtime_error(
          "logistic sensor '" + lo->discrete_child +
          "' evaluated before its discrete state was observed");
    }
    double natural = ranges_[0].first +
                     unit_point[0] * (ranges_[0].second - ranges_[0].first);
    double sig = 1.0 / (1.0 + std::exp(lo->gain * (natural - lo->threshold)));
    return *lo->observed ? sig : 1.0 - sig;
  }
  if (const auto* u = std::get_if<Uniform>(&form_)) {
    return u->level;
  }
  const auto& prod = std::get<PointwiseProduct>(form_);
  double result = 1.0;
  std::vector<double> sub;
  for (const auto& term : prod.terms) {
    sub.clear();
    for (const auto& name : term.scope_) {
      sub.push_back(unit_point[scope_index(scope_, name)]);
    }
    result *= term.evaluate(sub);
  }
  return result;
}

ContinuousFactor ContinuousFactor::instantiate_evidence(
    const Evidence& evidence) const {
  for (std::size_t i = 0; i < scope_.size(); ++i) {
    auto it = evidence.continuous.find(scope_[i]);
    if (it == evidence.continuous.end()) continue;
    if (it->second < ranges_[i].first || it->second > ranges_[i].second) {
      throw std::invalid_argument("evidence for '" + scope_[i] +
                                  "' lies outside the variable range");
    }
  }

  if (const auto* lg = std::get_if<LinearGaussian>(&form_)) {
    Scope remaining;
    std::vector<std::pair<double, double>> ranges;
    std::vector<double> coeffs;
    double offset = lg->offset;
    for (std::size_t i = 0; i < scope_.size(); ++i) {
      auto it = evidence.continuous.find(scope_[i]);
      if (it != evidence.continuous.end()) {
        offset -= lg->coeffs[i] * it->second;
      } else {
        remaining.push_back(scope_[i]);
        ranges.push_back(ranges_[i]);
        coeffs.push_back(lg->coeffs[i]);
      }
    }
    return linear_gaussian(std::move(remaining), std::move(ranges),
                           std::move(coeffs), offset, lg->variance);
  }
  if (const auto* lo = std::get_if<Logistic>(&form_)) {
    auto it = evidence.discrete.find(lo->discrete_child);
    if (it == evidence.discrete.end()) {
      auto cont = evidence.continuous.find(scope_[0]);
      if (cont != evidence.continuous.end()) {
        throw std::invalid_argument(
            "cannot instantiate a logistic sensor on its continuous argument");
      }
      return *this;
    }
    // The first declared state of the discrete child selects the sigmoid.
    bool observed_true = it->second == "true" || it->second == "1";
    return logistic(scope_[0], ranges_[0], lo->gain, lo->threshold,
                    lo->discrete_child, observed_true);
  }
  if (std::holds_alternative<Uniform>(form_)) {
    if (evidence.observes(scope_[0])) {
      const auto* u = std::get_if<Uniform>(&form_);
      // Fully observed uniform term reduces to a constant over no variables.
      ContinuousFactor f;
      f.form_ = Uniform{u->level};
      return f;
    }
    return *this;
  }
  const auto& prod = std::get<PointwiseProduct>(form_);
  std::vector<ContinuousFactor> terms;
  terms.reserve(prod.terms.size());
  for (const auto& term : prod.terms) {
    terms.push_back(term.instantiate_evidence(evidence));
  }
  return product(std::move(terms));
}

double product_evaluate(const std::vector<ContinuousFactor>& factors,
                        const Scope& point_scope,
                        std::span<const double> unit_point) {
  double result = 1.0;
  std::vector<double> sub;
  for (const auto& f : factors) {
    sub.clear();
    for (const auto& name : f.scope()) {
      int idx = scope_index(point_scope, name);
      if (idx < 0) {
        throw std::invalid_argument("point scope does not cover variable: " +
                                    name);
      }
      sub.push_back(unit_point[idx]);
    }
    result *= f.evaluate(sub);
  }
  return result;
}

BoundFactor::BoundFactor(const ContinuousFactor& factor,
                         const Scope& point_scope)
    : factor_(&factor) {
  for (const auto& name : factor.scope()) {
    int idx = scope_index(point_scope, name);
    if (idx < 0) {
      throw std::invalid_argument("point scope does not cover variable: " +
                                  name);
    }
    indices_.push_back(idx);
  }
}

double BoundFactor::evaluate(std::span<const double> unit_point) const {
  std::vector<double> sub(indices_.size());
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    sub[i] = unit_point[indices_[i]];
  }
  return factor_->evaluate(sub);
}

}  // namespace bspinfer
