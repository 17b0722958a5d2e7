// Copyright 2026 The dpro Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
#ifndef DPRO_TIME_UTIL_HPP_
#define DPRO_TIME_UTIL_HPP_

#include <cmath>
#include <cstdint>

namespace dpro {

// All simulated time is integer microseconds.
using Us = std::int64_t;

// Round-half-to-even, the rounding used whenever fractional microseconds
// enter the integer time domain (trace ingest, synthetic duration models).
inline Us round_us(double value) {
  const double floor_v = std::floor(value);
  const double frac = value - floor_v;
  auto lo = static_cast<Us>(floor_v);
  if (frac > 0.5) return lo + 1;
  if (frac < 0.5) return lo;
  return (lo % 2 == 0) ? lo : lo + 1;
}

}  // namespace dpro

#endif  // DPRO_TIME_UTIL_HPP_
