#pragma once
// Zero-phase smoothing of recorded trial signals, plus the finite-difference
// helpers used to estimate accelerations from filtered velocities.

#include "bilc/types.hpp"

namespace bilc {

/// Forward-backward second-order Butterworth low-pass. `cutoff_ratio` is the
/// cutoff as a fraction of Nyquist, strictly inside (0, 1). The signal is
/// extended by odd reflection (3x the filter order = 6 samples per end) and
/// each pass starts from the steady state of its first sample, so a constant
/// series passes through unchanged and phase lag cancels exactly.
/// Throws if the series is shorter than 7 samples, the cutoff is out of
/// range, or the input is not finite.
Vec zero_phase_filter(const Vec& signal, double cutoff_ratio);

/// Same filter applied independently to every coordinate of a vector series.
std::vector<Vec> zero_phase_filter(const std::vector<Vec>& series,
                                   double cutoff_ratio);

/// Time derivative of a uniformly sampled series: central differences in the
/// interior, a second-order one-sided stencil at the first point (both exact
/// on quadratics). Returns one derivative per input slot j = 0..N-1 for a
/// series of N+1 samples.
std::vector<Vec> discrete_derivative(const std::vector<Vec>& series,
                                     double dt);

}  // namespace bilc
