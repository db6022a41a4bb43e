#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "predaqp/neural.hpp"

namespace predaqp::testing {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Sign pattern of every hidden pre-activation; a central difference is only
/// meaningful when both probes see the same pattern.
inline void append_relu_pattern(const nn::ForwardCache& cache, std::vector<std::uint8_t>& out) {
  for (const auto& l : cache.layers)
    for (Eigen::Index i = 0; i < l.pre_activation.size(); ++i) out.push_back(l.pre_activation.data()[i] > 0.0);
}

/// Central difference of `loss` w.r.t. `*param`; empty when the kink signature
/// changes between the two probes.
template <class Loss, class Signature>
std::optional<double> probe_relative_error(double* param, double analytic, Loss&& loss, Signature&& signature,
                                           double h = 1e-4) {
  const double orig = *param;
  *param = orig + h;
  const double fp = loss();
  const auto sp = signature();
  *param = orig - h;
  const double fm = loss();
  const auto sm = signature();
  *param = orig;
  if (sp != sm || sp != signature()) return std::nullopt;
  return relative_error(analytic, (fp - fm) / (2.0 * h));
}

}  // namespace predaqp::testing
