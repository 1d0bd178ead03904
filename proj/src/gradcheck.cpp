#include "rp3d/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rp3d/rng.hpp"

namespace rp3d {

GradCheckResult gradcheck(const std::function<Tensor()>& f,
                          const std::vector<Tensor>& params, double eps,
                          int max_coords_per_param, std::uint64_t sample_seed) {
  Tensor out = f();
  if (out.numel() != 1) {
    throw std::invalid_argument("gradcheck: function output must be scalar, got " +
                                shape_str(out.shape()));
  }
  GradTable gt = backward(out);

  GradCheckResult res;
  Rng rng(sample_seed);
  for (const auto& p : params) {
    const auto* g = gt.find(p.node().get());
    const int n = p.numel();
    std::vector<int> coords;
    if (max_coords_per_param > 0 && n > max_coords_per_param) {
      coords.reserve(static_cast<std::size_t>(max_coords_per_param));
      for (int c = 0; c < max_coords_per_param; ++c) coords.push_back(rng.uniform_int(0, n - 1));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    } else {
      coords.resize(static_cast<std::size_t>(n));
      for (int c = 0; c < n; ++c) coords[static_cast<std::size_t>(c)] = c;
    }
    auto& vals = p.node()->value;
    for (int c : coords) {
      const double saved = vals[static_cast<std::size_t>(c)];
      vals[static_cast<std::size_t>(c)] = saved + eps;
      const double up = f().at(0);
      vals[static_cast<std::size_t>(c)] = saved - eps;
      const double dn = f().at(0);
      vals[static_cast<std::size_t>(c)] = saved;
      const double numeric = (up - dn) / (2.0 * eps);
      const double analytic = g ? (*g)[static_cast<std::size_t>(c)] : 0.0;
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      ++res.n_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p.name();
        res.worst_index = c;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace rp3d
