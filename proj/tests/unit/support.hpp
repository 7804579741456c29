#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dkaf/nn/graph.hpp"

namespace dkaf::testing {

// Largest relative error between analytic and central-difference gradients over up to
// `per_param` sampled entries of every parameter.
inline double max_grad_error(nn::ParamStore& ps, const std::function<nn::Var(nn::Graph&)>& build,
                             int per_param = 12, double step = 1e-4) {
  ps.zero_grad();
  {
    nn::Graph g;
    g.backward(build(g));
  }
  auto loss_at = [&] {
    nn::Graph g;
    return g.scalar(build(g));
  };
  Rng rng(99);
  double worst = 0.0;
  for (const auto& p : ps.all()) {
    const int n = static_cast<int>(p->value.size());
    for (int k = 0; k < std::min(n, per_param); ++k) {
      int idx = n <= per_param ? k : static_cast<int>(rng.index(n));
      double& x = p->value.data()[idx];
      const double keep = x;
      x = keep + step;
      double up = loss_at();
      x = keep - step;
      double down = loss_at();
      x = keep;
      double numeric = (up - down) / (2 * step);
      double analytic = p->grad.data()[idx];
      double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
  }
  return worst;
}

// Random fixed projection turning any output into a scalar loss.
inline nn::Var project(nn::Graph& g, nn::Var out, unsigned seed = 5) {
  const auto& v = g.value(out);
  Rng rng(seed);
  nn::Mat r(v.rows(), v.cols());
  for (int i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(-1.0, 1.0);
  return g.sum(g.cmul(out, g.constant(r)));
}

}  // namespace dkaf::testing
