/*
 * Copyright (c) 2026 The opsforge Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <cstdint>

namespace opsforge {

/// Exact summation of doubles. Every finite double is a multiple of
/// 2^-1074, so the running sum is kept as a wide fixed-point integer and
/// rounded once, to nearest-even, when read. The result is independent of
/// the order and grouping of additions, which makes partial sums from
/// different workers mergeable without drift.
class ExactSum {
 public:
  void add(double x);
  void merge(const ExactSum& other);

  /// The correctly rounded sum. NaN if a NaN (or +inf and -inf) was added,
  /// ±inf if an infinity was added or the exact sum overflows.
  double value() const;

  bool operator==(const ExactSum& other) const;

 private:
  static constexpr int kLimbBits = 32;
  // 2098 significant bit positions plus headroom for sums of up to 2^64
  // terms.
  static constexpr int kLimbs = 70;

  void normalize();

  std::array<int64_t, kLimbs> limbs_{};
  uint32_t pending_ = 0;
  bool pos_inf_ = false;
  bool neg_inf_ = false;
  bool nan_ = false;
};

} // namespace opsforge
