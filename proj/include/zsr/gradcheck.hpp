#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace zsr {

/// Central finite differences, (f(θ+h·e_i) − f(θ−h·e_i)) / 2h, evaluated and
/// accumulated in 64-bit. `coords` restricts the coordinates probed (all when
/// empty); the returned vector has one entry per probed coordinate.
/// Throws NumericError naming the coordinate when f is non-finite.
std::vector<double> finite_diff_gradient(const std::function<double(std::span<const double>)>& f,
                                         std::span<const double> theta, double h,
                                         std::span<const std::size_t> coords = {});

/// Worst per-coordinate relative error |a−n| / max(|a|, |n|, floor).
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor);

}  // namespace zsr
