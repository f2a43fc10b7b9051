#pragma once

#include <cmath>
#include <vector>

#include "cfmkit/errors.hpp"

namespace cfmkit {

struct Peak {
  double mass = 0.0;    // Da
  double height = 0.0;  // relative intensity
};

using Spectrum = std::vector<Peak>;

inline double total_intensity(const Spectrum& s) {
  double t = 0.0;
  for (const auto& p : s) t += p.height;
  return t;
}

// Scales heights so they sum to 100.
inline Spectrum normalize_spectrum(const Spectrum& s) {
  if (s.empty()) throw EmptySpectrum("cannot normalize an empty spectrum");
  double t = total_intensity(s);
  if (t <= 0.0) throw EmptySpectrum("spectrum has no positive intensity");
  Spectrum out = s;
  for (auto& p : out) p.height *= 100.0 / t;
  return out;
}

}  // namespace cfmkit
