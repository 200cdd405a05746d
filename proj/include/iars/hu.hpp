#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "iars/image.hpp"

namespace iars {

// Seven moment invariants of a binary region. raw_phi holds the invariant
// values; phi is the sign-preserving log transform applied to them so the
// seven entries are comparable in scale.
struct HuDescriptor {
  std::array<double, 7> raw_phi{};
  std::array<double, 7> phi{};
};

// Moments use x = column, y = row, origin at the top-left pixel.
inline HuDescriptor hu_moments(const BinaryMask& mask) {
  double m00 = 0, m10 = 0, m01 = 0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        m00 += 1;
        m10 += x;
        m01 += y;
      }
  if (m00 == 0) throw std::invalid_argument("hu_moments: empty mask");
  const double xbar = m10 / m00, ybar = m01 / m00;

  double mu11 = 0, mu20 = 0, mu02 = 0, mu30 = 0, mu03 = 0, mu21 = 0, mu12 = 0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        const double dx = x - xbar, dy = y - ybar;
        mu11 += dx * dy;
        mu20 += dx * dx;
        mu02 += dy * dy;
        mu30 += dx * dx * dx;
        mu03 += dy * dy * dy;
        mu21 += dx * dx * dy;
        mu12 += dx * dy * dy;
      }

  const double n2 = m00 * m00;            // mu00^((p+q+2)/2) for p+q = 2
  const double n3 = std::pow(m00, 2.5);   // and for p+q = 3
  const double e20 = mu20 / n2, e02 = mu02 / n2, e11 = mu11 / n2;
  const double e30 = mu30 / n3, e03 = mu03 / n3, e21 = mu21 / n3, e12 = mu12 / n3;

  HuDescriptor h;
  const double s1 = e30 + e12, s2 = e21 + e03;  // recurring sums
  h.raw_phi[0] = e20 + e02;
  h.raw_phi[1] = (e20 - e02) * (e20 - e02) + 4.0 * e11 * e11;
  h.raw_phi[2] = (e30 - 3.0 * e12) * (e30 - 3.0 * e12) + (3.0 * e21 - e03) * (3.0 * e21 - e03);
  h.raw_phi[3] = s1 * s1 + s2 * s2;
  h.raw_phi[4] = (e30 - 3.0 * e12) * s1 * (s1 * s1 - 3.0 * s2 * s2) +
                 (3.0 * e21 - e03) * s2 * (3.0 * s1 * s1 - s2 * s2);
  h.raw_phi[5] = (e20 - e02) * (s1 * s1 - s2 * s2) + 4.0 * e11 * s1 * s2;
  h.raw_phi[6] = (3.0 * e21 - e03) * s1 * (s1 * s1 - 3.0 * s2 * s2) -
                 (e30 - 3.0 * e12) * s2 * (3.0 * s1 * s1 - s2 * s2);

  for (int i = 0; i < 7; ++i) {
    const double v = h.raw_phi[static_cast<std::size_t>(i)];
    const double sign = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
    h.phi[static_cast<std::size_t>(i)] = -sign * std::log10(std::abs(v) + 1e-30);
  }
  return h;
}

// Euclidean distance between log-transformed descriptors.
inline double hu_distance(const HuDescriptor& a, const HuDescriptor& b) {
  double q = 0;
  for (int i = 0; i < 7; ++i) {
    const double d = a.phi[static_cast<std::size_t>(i)] - b.phi[static_cast<std::size_t>(i)];
    q += d * d;
  }
  return std::sqrt(q);
}

}  // namespace iars
