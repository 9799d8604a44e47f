#include "bspinfer/network.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace bspinfer {

const VariableDomain* HybridNetwork::find_variable(
    const std::string& name) const {
  for (const auto& v : variables) {
    if (v.name == name) return &v;
  }
  return nullptr;
}

int HybridNetwork::variable_index(const std::string& name) const {
  for (std::size_t i = 0; i < variables.size(); ++i) {
    if (variables[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> tokens;
  std::string t;
  while (ss >> t) tokens.push_back(t);
  return tokens;
}

double parse_number(const std::string& s, int line) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw NetworkParseError(line, "expected a number, got '" + s + "'");
  }
  return v;
}

// "key=value" -> value, or empty if the token has a different key.
std::string keyed_value(const std::string& token, const std::string& key) {
  std::string prefix = key + "=";
  if (token.rfind(prefix, 0) != 0) return {};
  return token.substr(prefix.size());
}

const VariableDomain& require_var(const HybridNetwork& net,
                                  const std::string& name, int line) {
  const VariableDomain* v = net.find_variable(name);
  if (!v) throw NetworkParseError(line, "unknown variable '" + name + "'");
  return *v;
}

const VariableDomain& require_continuous(const HybridNetwork& net,
                                         const std::string& name, int line) {
  const VariableDomain& v = require_var(net, name, line);
  if (v.discrete) {
    throw NetworkParseError(line, "variable '" + name + "' is not continuous");
  }
  return v;
}

}  // namespace

HybridNetwork parse_network(std::string_view text) {
  HybridNetwork net;
  int line_number = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    std::string line(nl == std::string_view::npos
                         ? text.substr(start)
                         : text.substr(start, nl - start));
    ++line_number;
    if (nl == std::string_view::npos) start = text.size() + 1;
    else start = nl + 1;

    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto tokens = split_ws(line);
    if (tokens.empty()) continue;

    if (tokens[0] == "var") {
      if (tokens.size() < 3) {
        throw NetworkParseError(line_number, "malformed var declaration");
      }
      VariableDomain v;
      v.name = tokens[1];
      if (net.find_variable(v.name)) {
        throw NetworkParseError(line_number,
                                "duplicate variable '" + v.name + "'");
      }
      if (tokens[2] == "continuous") {
        if (tokens.size() != 5) {
          throw NetworkParseError(line_number,
                                  "expected: var <name> continuous <a> <b>");
        }
        v.lo = parse_number(tokens[3], line_number);
        v.hi = parse_number(tokens[4], line_number);
        if (!(v.lo < v.hi)) {
          throw NetworkParseError(line_number, "range must have a < b");
        }
      } else if (tokens[2] == "discrete") {
        if (tokens.size() != 4) {
          throw NetworkParseError(line_number,
                                  "expected: var <name> discrete <state,...>");
        }
        v.discrete = true;
        std::string states = tokens[3];
        std::size_t s = 0;
        while (s <= states.size()) {
          std::size_t c = states.find(',', s);
          std::string st = c == std::string::npos ? states.substr(s)
                                                  : states.substr(s, c - s);
          if (st.empty()) {
            throw NetworkParseError(line_number, "empty state label");
          }
          v.states.push_back(st);
          if (c == std::string::npos) break;
          s = c + 1;
        }
      } else {
        throw NetworkParseError(line_number,
                                "variable kind must be continuous or discrete");
      }
      net.variables.push_back(std::move(v));
    } else if (tokens[0] == "factor") {
      if (tokens.size() < 3) {
        throw NetworkParseError(line_number, "malformed factor declaration");
      }
      const std::string& kind = tokens[1];
      if (kind == "uniform") {
        const VariableDomain& v = require_continuous(net, tokens[2], line_number);
        double level = 1.0;
        for (std::size_t i = 3; i < tokens.size(); ++i) {
          std::string val = keyed_value(tokens[i], "level");
          if (val.empty()) {
            throw NetworkParseError(line_number,
                                    "unexpected token '" + tokens[i] + "'");
          }
          level = parse_number(val, line_number);
        }
        net.factors.push_back(
            {v.name, ContinuousFactor::uniform(v.name, {v.lo, v.hi}, level)});
      } else if (kind == "lingauss") {
        if (tokens.size() < 5) {
          throw NetworkParseError(
              line_number,
              "expected: factor lingauss <child> <coeff>*<var> ... var=<v>");
        }
        require_continuous(net, tokens[2], line_number);
        Scope scope;
        std::vector<std::pair<double, double>> ranges;
        std::vector<double> coeffs;
        double variance = -1.0, offset = 0.0;
        for (std::size_t i = 3; i < tokens.size(); ++i) {
          std::string val = keyed_value(tokens[i], "var");
          if (!val.empty()) {
            variance = parse_number(val, line_number);
            continue;
          }
          val = keyed_value(tokens[i], "offset");
          if (!val.empty()) {
            offset = parse_number(val, line_number);
            continue;
          }
          std::size_t star = tokens[i].find('*');
          if (star == std::string::npos) {
            throw NetworkParseError(line_number,
                                    "expected <coeff>*<var>, got '" +
                                        tokens[i] + "'");
          }
          double c = parse_number(tokens[i].substr(0, star), line_number);
          std::string name = tokens[i].substr(star + 1);
          const VariableDomain& v = require_continuous(net, name, line_number);
          scope.push_back(v.name);
          ranges.push_back({v.lo, v.hi});
          coeffs.push_back(c);
        }
        if (!(variance > 0.0)) {
          throw NetworkParseError(line_number,
                                  "lingauss needs var=<variance> > 0");
        }
        net.factors.push_back(
            {tokens[2], ContinuousFactor::linear_gaussian(
                            std::move(scope), std::move(ranges),
                            std::move(coeffs), offset, variance)});
      } else if (kind == "logistic") {
        if (tokens.size() != 6) {
          throw NetworkParseError(
              line_number,
              "expected: factor logistic <child> <parent> gain=<g> thresh=<t>");
        }
        const VariableDomain& child = require_var(net, tokens[2], line_number);
        if (!child.discrete) {
          throw NetworkParseError(line_number,
                                  "logistic child must be a discrete variable");
        }
        const VariableDomain& parent =
            require_continuous(net, tokens[3], line_number);
        std::string gain_str = keyed_value(tokens[4], "gain");
        std::string thresh_str = keyed_value(tokens[5], "thresh");
        if (gain_str.empty() || thresh_str.empty()) {
          throw NetworkParseError(line_number,
                                  "logistic needs gain=<g> thresh=<t>");
        }
        net.factors.push_back(
            {child.name,
             ContinuousFactor::logistic(parent.name, {parent.lo, parent.hi},
                                        parse_number(gain_str, line_number),
                                        parse_number(thresh_str, line_number),
                                        child.name)});
      } else {
        throw NetworkParseError(line_number, "unknown factor kind '" + kind +
                                                 "'");
      }
    } else if (tokens[0] == "evidence") {
      if (tokens.size() != 2) {
        throw NetworkParseError(line_number, "expected: evidence <name>=<value>");
      }
      std::size_t eq = tokens[1].find('=');
      if (eq == std::string::npos) {
        throw NetworkParseError(line_number, "expected: evidence <name>=<value>");
      }
      std::string name = tokens[1].substr(0, eq);
      std::string value = tokens[1].substr(eq + 1);
      const VariableDomain& v = require_var(net, name, line_number);
      if (v.discrete) {
        bool known = false;
        for (const auto& st : v.states) known = known || st == value;
        if (!known) {
          throw NetworkParseError(line_number, "unknown state '" + value +
                                                   "' for variable '" + name +
                                                   "'");
        }
        net.evidence.discrete[name] = value;
      } else {
        double x = parse_number(value, line_number);
        if (x < v.lo || x > v.hi) {
          throw NetworkParseError(line_number,
                                  "evidence outside the range of '" + name +
                                      "'");
        }
        net.evidence.continuous[name] = x;
      }
    } else if (tokens[0] == "query") {
      if (tokens.size() != 2) {
        throw NetworkParseError(line_number, "expected: query <name>");
      }
      require_continuous(net, tokens[1], line_number);
      net.query = tokens[1];
    } else {
      throw NetworkParseError(line_number,
                              "unknown directive '" + tokens[0] + "'");
    }
  }

  if (net.query.empty()) {
    throw NetworkParseError(line_number, "network declares no query variable");
  }
  if (net.evidence.observes(net.query)) {
    throw NetworkParseError(line_number, "query variable is observed");
  }
  return net;
}

HybridNetwork load_network_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open network file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_network(ss.str());
}

}  // namespace bspinfer
