#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bspinfer/factors.hpp"

namespace bspinfer {

// Hybrid Bayesian network: continuous variables plus observed discrete
// sensors, each factor designated to a child variable.
struct HybridNetwork {
  struct NodeFactor {
    std::string child;
    ContinuousFactor factor;
  };

  std::vector<VariableDomain> variables;
  std::vector<NodeFactor> factors;
  Evidence evidence;
  std::string query;

  const VariableDomain* find_variable(const std::string& name) const;
  int variable_index(const std::string& name) const;  // -1 if absent
};

struct NetworkParseError : std::runtime_error {
  int line;
  NetworkParseError(int line_number, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_number) + ": " + what),
        line(line_number) {}
};

// Line-oriented network description:
//   var <name> continuous <a> <b>
//   var <name> discrete <state,...>
//   factor uniform <var> [level=<l>]
//   factor lingauss <child> <coeff>*<var> ... var=<variance> [offset=<o>]
//   factor logistic <child> <parent> gain=<g> thresh=<t>
//   evidence <name>=<value>
//   query <name>
// '#' starts a comment; blank lines are ignored.
HybridNetwork parse_network(std::string_view text);

HybridNetwork load_network_file(const std::string& path);

}  // namespace bspinfer
