#pragma once

#include "mshot/common.hpp"
#include "mshot/nn.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

namespace testing {

/// Largest elementwise |analytic - numeric| / max(|analytic| + |numeric|, floor)
/// over every parameter of p, using central differences with step h.
template <typename P>
double grad_check(P& p, const P& analytic, const std::function<double(P&)>& loss,
                  double h = 1e-4, double floor = 1e-6) {
  auto refs = mshot::refs_of(p);
  P copy = analytic;
  auto grads = mshot::refs_of(copy);
  double worst = 0.0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    auto& m = *refs.mats[k];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double old = m.data()[i];
      m.data()[i] = old + h;
      const double lp = loss(p);
      m.data()[i] = old - h;
      const double lm = loss(p);
      m.data()[i] = old;
      const double num = (lp - lm) / (2 * h);
      const double ana = grads.mats[k]->data()[i];
      worst = std::max(worst, std::abs(ana - num) / std::max(std::abs(ana) + std::abs(num), floor));
    }
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mshot_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
