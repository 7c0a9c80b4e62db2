#pragma once

// Shared numeric tolerances. Tests compare against these constants rather
// than repeating literals.
namespace abw {

inline constexpr double kSvdReconstructTol = 1e-6;   // relative Frobenius
inline constexpr double kSvdPairwiseOrthoTol = 1e-6; // orthogonalized direction sets
inline constexpr double kOrthoTol = 1e-8;            // orthonormality of factor columns
inline constexpr double kSpanTol = 1e-8;             // span/basis invariance checks
inline constexpr double kMeanEquivalenceTol = 1e-2;  // 1x1 SOM vs pool mean, relative

} // namespace abw
