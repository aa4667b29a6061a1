#include "scalefuse/stats.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <type_traits>
#include <cmath>

namespace scalefuse {

namespace {

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

// Unsigned key with the same order as the (non-NaN) floating value.
template <typename T>
Bits<T> ordered_key(T x) {
  constexpr Bits<T> kSign = Bits<T>{1} << (8 * sizeof(T) - 1);
  const auto bits = std::bit_cast<Bits<T>>(x);
  return (bits & kSign) ? ~bits : bits | kSign;
}

template <typename T>
T lower_median_impl(std::vector<T>& values) {
  if (values.empty()) return T(0);
  const std::size_t rank = (values.size() - 1) / 2;
  if (values.size() < 8192) {
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(rank);
    std::nth_element(values.begin(), mid, values.end());
    return *mid;
  }
  // Exact radix select: find the top-16-bit bucket holding the rank, then
  // select inside it.
  constexpr int kShift = 8 * sizeof(T) - 16;
  std::vector<std::uint32_t> count(std::size_t{1} << 16, 0);
  for (const T v : values) ++count[ordered_key(v) >> kShift];
  std::size_t below = 0;
  std::size_t bucket = 0;
  while (below + count[bucket] <= rank) below += count[bucket++];
  std::vector<T> members;
  members.reserve(count[bucket]);
  for (const T v : values) {
    if ((ordered_key(v) >> kShift) == bucket) members.push_back(v);
  }
  const auto mid = members.begin() + static_cast<std::ptrdiff_t>(rank - below);
  std::nth_element(members.begin(), mid, members.end());
  return *mid;
}

}  // namespace

double lower_median(std::vector<double> values) { return lower_median_impl(values); }
float lower_median(std::vector<float> values) { return lower_median_impl(values); }

double median_absolute_deviation(std::vector<double> values, double center) {
  for (auto& v : values) v = std::abs(v - center);
  return lower_median_impl(values);
}

double median_absolute_deviation(std::vector<double> values) {
  const double center = lower_median(values);
  return median_absolute_deviation(std::move(values), center);
}

RobustSpread robust_spread(std::vector<double> values) {
  RobustSpread out;
  out.median = lower_median(values);
  out.mad = median_absolute_deviation(std::move(values), out.median);
  return out;
}

}  // namespace scalefuse
