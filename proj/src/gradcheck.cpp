#include "zsr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "zsr/error.hpp"

namespace zsr {

std::vector<double> finite_diff_gradient(const std::function<double(std::span<const double>)>& f,
                                         std::span<const double> theta, double h,
                                         std::span<const std::size_t> coords) {
  if (!(h > 0)) throw ValidationError("finite_diff_gradient: step h must be > 0");
  std::vector<std::size_t> probe(coords.begin(), coords.end());
  if (probe.empty()) {
    probe.resize(theta.size());
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = i;
  }
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> out;
  out.reserve(probe.size());
  for (std::size_t i : probe) {
    if (i >= point.size()) throw ValidationError("finite_diff_gradient: coordinate out of range");
    const double saved = point[i];
    point[i] = saved + h;
    const double up = f(point);
    point[i] = saved - h;
    const double down = f(point);
    point[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_gradient: non-finite objective at coordinate " +
                         std::to_string(i));
    }
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor) {
  if (analytic.size() != numeric.size()) {
    throw ValidationError("max_relative_error: length mismatch");
  }
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace zsr
