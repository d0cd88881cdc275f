#pragma once

// Central-difference gradient verification.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "revmod/core.hpp"

namespace revmod {

struct GradCheckTarget {
  std::string name;
  std::span<double> param;           // perturbed in place, restored afterwards
  std::span<const double> analytic;  // same length as param
};

struct GradCheckGroup {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double cosine = 1.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = true;

  const GradCheckGroup* group(std::string_view name) const {
    for (const auto& g : groups)
      if (g.name == name) return &g;
    return nullptr;
  }
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares analytic gradients against a five-point central difference per
/// component. `max_per_group` > 0 checks an evenly strided subset of large groups.
inline GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradCheckTarget> targets,
                                  double eps, double tolerance, std::size_t max_per_group = 0) {
  GradCheckReport rep;
  rep.tolerance = tolerance;
  for (const auto& tg : targets) {
    require_dims(tg.param.size() == tg.analytic.size(), "grad_check: analytic gradient size mismatch in " + tg.name);
    GradCheckGroup grp;
    grp.name = tg.name;
    const std::size_t n = tg.param.size();
    const std::size_t stride = (max_per_group == 0 || n <= max_per_group) ? 1 : (n + max_per_group - 1) / max_per_group;
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = tg.param[i];
      auto at = [&](double d) {
        tg.param[i] = orig + d;
        return loss();
      };
      // fourth-order stencil: truncation error O(eps^4) lets eps stay large
      // enough that roundoff in the loss does not dominate
      const double num = (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
      tg.param[i] = orig;
      const double an = tg.analytic[i];
      grp.max_rel_error = std::max(grp.max_rel_error, relative_error(an, num));
      ab += an * num;
      aa += an * an;
      bb += num * num;
      ++grp.checked;
    }
    grp.cosine = (aa > 0 && bb > 0) ? ab / std::sqrt(aa * bb) : (aa == bb ? 1.0 : 0.0);
    grp.pass = grp.max_rel_error <= tolerance;
    rep.max_rel_error = std::max(rep.max_rel_error, grp.max_rel_error);
    rep.pass = rep.pass && grp.pass;
    rep.groups.push_back(std::move(grp));
  }
  return rep;
}

/// Single flat parameter vector variant.
inline GradCheckReport grad_check(const std::function<double(std::span<const double>)>& loss,
                                  std::vector<double> params, std::span<const double> analytic, double eps,
                                  double tolerance) {
  std::vector<double> x = std::move(params);
  GradCheckTarget tg{"params", x, analytic};
  return grad_check([&] { return loss(x); }, std::span<const GradCheckTarget>(&tg, 1), eps, tolerance);
}

}  // namespace revmod
