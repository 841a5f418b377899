#include "rvsl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rvsl/rng.hpp"

namespace rvsl::ad {
namespace {

struct Eval {
  double loss = 0.0;
  std::uint64_t signature = 0;
  std::string non_finite;
};

Eval evaluate(const Recipe& recipe) {
  Graph g;
  Var root = recipe(g);
  Eval e;
  const std::size_t bad = g.first_non_finite();
  if (bad < g.size()) {
    const Node& n = g.node(bad);
    e.non_finite = "node " + std::to_string(bad) + " (" + std::string(op_name(n.kind)) +
                   (n.tag.empty() ? "" : ", " + n.tag) + ")";
    return e;
  }
  e.loss = root.value().item();
  e.signature = g.kink_signature();
  return e;
}

}  // namespace

GradCheckReport grad_check(const Recipe& recipe, double tolerance, GradCheckOptions options) {
  GradCheckReport report;

  Graph g;
  Var root = recipe(g);
  if (const std::size_t bad = g.first_non_finite(); bad < g.size()) {
    report.failure = "non-finite value at node " + std::to_string(bad) + " (" +
                     std::string(op_name(g.node(bad).kind)) + ")";
    return report;
  }
  g.backward(root);
  const std::uint64_t base_signature = g.kink_signature();

  std::vector<Parameter*> params = g.bound_parameters();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    // The leaf id for p is found by scanning; graphs here are small.
    for (std::size_t id = 0; id < g.size(); ++id) {
      if (g.node(id).param == p) {
        analytic.push_back(g.node(id).grad);
        break;
      }
    }
  }

  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_probes_per_param > 0 && coords.size() > options.max_probes_per_param) {
      for (std::size_t i = 0; i < options.max_probes_per_param; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(coords.size() - i));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(options.max_probes_per_param);
    }
    for (std::size_t c : coords) {
      const double original = p.value[c];
      p.value[c] = original + options.step;
      const Eval plus = evaluate(recipe);
      p.value[c] = original - options.step;
      const Eval minus = evaluate(recipe);
      p.value[c] = original;
      if (!plus.non_finite.empty() || !minus.non_finite.empty()) {
        report.failure = "non-finite loss probing " + p.name + "[" + std::to_string(c) + "] at " +
                         (plus.non_finite.empty() ? minus.non_finite : plus.non_finite);
        report.passed = false;
        return report;
      }
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++report.skipped_kinks;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * options.step);
      const double a = analytic[pi][c];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.probes;
      if (rel > report.max_rel_error || report.worst.empty()) {
        if (rel >= report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst = p.name + "[" + std::to_string(c) + "]";
        }
      }
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace rvsl::ad
