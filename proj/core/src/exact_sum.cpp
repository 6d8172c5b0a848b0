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

#include "opsforge/exact_sum.hpp"

#include <bit>
#include <cmath>
#include <limits>

namespace opsforge {

namespace {

constexpr int kMinExp = -1074;
constexpr int64_t kMask = (int64_t{1} << 32) - 1;
// Each add changes a limb by less than 2^32, so 2^30 adds fit in int64.
constexpr uint32_t kNormalizeEvery = 1u << 30;

} // namespace

void ExactSum::add(double x) {
  if (!std::isfinite(x)) {
    if (std::isnan(x)) {
      nan_ = true;
    } else if (x > 0) {
      pos_inf_ = true;
    } else {
      neg_inf_ = true;
    }
    return;
  }
  if (x == 0.0) {
    return;
  }
  int e = 0;
  const double m = std::frexp(std::fabs(x), &e);
  uint64_t mant = static_cast<uint64_t>(std::ldexp(m, 53));
  int exp = e - 53;
  if (exp < kMinExp) {
    mant >>= (kMinExp - exp);
    exp = kMinExp;
  }
  const int pos = exp - kMinExp;
  const int limb = pos / kLimbBits;
  const unsigned __int128 v = static_cast<unsigned __int128>(mant)
      << (pos % kLimbBits);
  const int64_t parts[3] = {
      static_cast<int64_t>(v & kMask),
      static_cast<int64_t>((v >> 32) & kMask),
      static_cast<int64_t>(v >> 64)};
  const bool neg = x < 0;
  for (int i = 0; i < 3; ++i) {
    limbs_[limb + i] += neg ? -parts[i] : parts[i];
  }
  if (++pending_ >= kNormalizeEvery) {
    normalize();
  }
}

void ExactSum::merge(const ExactSum& other) {
  ExactSum o = other;
  o.normalize();
  normalize();
  for (int i = 0; i < kLimbs; ++i) {
    limbs_[i] += o.limbs_[i];
  }
  pending_ = 2;
  nan_ = nan_ || o.nan_;
  pos_inf_ = pos_inf_ || o.pos_inf_;
  neg_inf_ = neg_inf_ || o.neg_inf_;
}

void ExactSum::normalize() {
  for (int i = 0; i + 1 < kLimbs; ++i) {
    const int64_t carry = limbs_[i] >> 32;
    limbs_[i] &= kMask;
    limbs_[i + 1] += carry;
  }
  pending_ = 0;
}

double ExactSum::value() const {
  if (nan_ || (pos_inf_ && neg_inf_)) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  if (pos_inf_) {
    return std::numeric_limits<double>::infinity();
  }
  if (neg_inf_) {
    return -std::numeric_limits<double>::infinity();
  }
  ExactSum s = *this;
  s.normalize();
  const bool negative = s.limbs_[kLimbs - 1] < 0;
  if (negative) {
    for (auto& l : s.limbs_) {
      l = -l;
    }
    s.normalize();
  }
  int top = kLimbs - 1;
  while (top >= 0 && s.limbs_[top] == 0) {
    --top;
  }
  if (top < 0) {
    return 0.0;
  }
  auto limb = [&](int i) -> uint64_t {
    return i >= 0 ? static_cast<uint64_t>(s.limbs_[i]) : 0;
  };
  // The three highest limbs hold at least 65 significant bits; everything
  // below only matters as a sticky bit.
  unsigned __int128 window = (static_cast<unsigned __int128>(limb(top)) << 64) |
      (static_cast<unsigned __int128>(limb(top - 1)) << 32) | limb(top - 2);
  bool sticky = false;
  for (int i = top - 3; i >= 0; --i) {
    if (s.limbs_[i] != 0) {
      sticky = true;
      break;
    }
  }
  const int window_lsb_exp = (top - 2) * kLimbBits + kMinExp;
  const uint64_t hi = static_cast<uint64_t>(window >> 64);
  const int msb_in_window = hi != 0 ? 64 + 63 - std::countl_zero(hi)
                                    : 63 - std::countl_zero(static_cast<uint64_t>(window));
  const int msb_exp = window_lsb_exp + msb_in_window;
  const int lsb_exp = std::max(msb_exp - 52, kMinExp);
  const int drop = lsb_exp - window_lsb_exp;
  uint64_t mant = 0;
  if (drop <= 0) {
    mant = static_cast<uint64_t>(window) << -drop;
  } else {
    mant = static_cast<uint64_t>(window >> drop);
    const unsigned __int128 rem =
        window & ((static_cast<unsigned __int128>(1) << drop) - 1);
    const unsigned __int128 half = static_cast<unsigned __int128>(1)
        << (drop - 1);
    if (rem > half || (rem == half && (sticky || (mant & 1)))) {
      ++mant;
    }
  }
  const double magnitude = std::ldexp(static_cast<double>(mant), lsb_exp);
  return negative ? -magnitude : magnitude;
}

bool ExactSum::operator==(const ExactSum& other) const {
  ExactSum a = *this;
  ExactSum b = other;
  a.normalize();
  b.normalize();
  return a.limbs_ == b.limbs_ && a.nan_ == b.nan_ && a.pos_inf_ == b.pos_inf_ &&
      a.neg_inf_ == b.neg_inf_;
}

} // namespace opsforge
