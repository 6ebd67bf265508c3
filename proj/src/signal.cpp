#include "bilc/signal.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bilc {

namespace {

constexpr int kPad = 6;  // 3x the filter order

struct Biquad {
  double b0, b1, b2, a1, a2;
};

// Bilinear-transform Butterworth low-pass of order 2, unit DC gain.
Biquad design_lowpass(double cutoff_ratio) {
  const double k = std::tan(std::numbers::pi * cutoff_ratio / 2.0);
  const double sqrt2 = std::numbers::sqrt2;
  const double norm = 1.0 + sqrt2 * k + k * k;
  Biquad q;
  q.b0 = k * k / norm;
  q.b1 = 2.0 * q.b0;
  q.b2 = q.b0;
  q.a1 = 2.0 * (k * k - 1.0) / norm;
  q.a2 = (1.0 - sqrt2 * k + k * k) / norm;
  return q;
}

// Direct-form II transposed, state initialized to the steady state of x0 so
// that a constant input produces a constant output from the first sample.
void filter_in_place(const Biquad& q, Vec& x) {
  double z1 = (1.0 - q.b0) * x[0];
  double z2 = (q.b2 - q.a2) * x[0];
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double in = x[i];
    const double out = q.b0 * in + z1;
    z1 = q.b1 * in - q.a1 * out + z2;
    z2 = q.b2 * in - q.a2 * out;
    x[i] = out;
  }
}

}  // namespace

Vec zero_phase_filter(const Vec& signal, double cutoff_ratio) {
  if (!(cutoff_ratio > 0.0 && cutoff_ratio < 1.0))
    throw std::invalid_argument("filter cutoff must lie strictly in (0, 1)");
  if (signal.size() < kPad + 1)
    throw std::invalid_argument(
        "zero-phase filter needs at least 7 samples for warm-up padding");
  if (!signal.allFinite())
    throw std::invalid_argument("filter input must be finite");

  const Biquad q = design_lowpass(cutoff_ratio);
  const Eigen::Index n = signal.size();

  // Odd (point-symmetric) reflection about both end samples.
  Vec ext(n + 2 * kPad);
  for (int i = 0; i < kPad; ++i)
    ext[i] = 2.0 * signal[0] - signal[kPad - i];
  ext.segment(kPad, n) = signal;
  for (int i = 0; i < kPad; ++i)
    ext[kPad + n + i] = 2.0 * signal[n - 1] - signal[n - 2 - i];

  filter_in_place(q, ext);
  ext.reverseInPlace();
  filter_in_place(q, ext);
  ext.reverseInPlace();

  return ext.segment(kPad, n);
}

std::vector<Vec> zero_phase_filter(const std::vector<Vec>& series,
                                   double cutoff_ratio) {
  if (series.empty())
    throw std::invalid_argument("filter input series is empty");
  const Eigen::Index dim = series.front().size();
  const Eigen::Index n = static_cast<Eigen::Index>(series.size());
  std::vector<Vec> out(series.size(), Vec::Zero(dim));
  Vec channel(n);
  for (Eigen::Index c = 0; c < dim; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) channel[i] = series[i][c];
    Vec filtered = zero_phase_filter(channel, cutoff_ratio);
    for (Eigen::Index i = 0; i < n; ++i) out[i][c] = filtered[i];
  }
  return out;
}

std::vector<Vec> discrete_derivative(const std::vector<Vec>& series,
                                     double dt) {
  if (series.size() < 2)
    throw std::invalid_argument("derivative needs at least 2 samples");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const std::size_t n = series.size() - 1;
  std::vector<Vec> out(n);
  // Second-order one-sided stencil at the boundary keeps the whole estimate
  // exact for quadratic series (e.g. velocities of cubic trajectories).
  out[0] = series.size() >= 3 ? ((-3.0 * series[0] + 4.0 * series[1] -
                                  series[2]) /
                                 (2.0 * dt))
                                    .eval()
                              : ((series[1] - series[0]) / dt).eval();
  for (std::size_t j = 1; j < n; ++j)
    out[j] = (series[j + 1] - series[j - 1]) / (2.0 * dt);
  return out;
}

}  // namespace bilc
