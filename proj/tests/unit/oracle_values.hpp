#pragma once

// Generated by tests/oracles/scalar_oracles.py. Do not edit by hand.

namespace ovw::oracle {

inline constexpr double kSigmoidTwo = 0.8807970779778823;
inline constexpr double kSoftmax123_0 = 0.09003057317038046;
inline constexpr double kSoftmax123_1 = 0.24472847105479764;
inline constexpr double kSoftmax123_2 = 0.6652409557748218;
inline constexpr double kDflHalfTargets = 1.548663333587965;
inline constexpr double kDflMixedTargets = 1.4424133335879652;
inline constexpr double kContrastiveTwoPositives = 0.6924254913534913;
inline constexpr double kDecodeMixedOffset = 29.88926785330667;
inline constexpr double kSingleHeadUpdate0 = 0.8135182436771436;
inline constexpr double kSingleHeadUpdate1 = -0.655173912547052;
inline constexpr double kSimplifiedUpdate0 = 0.7690413483846186;
inline constexpr double kSimplifiedUpdate1 = -0.5822540145355705;

}  // namespace ovw::oracle
