#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <vector>

#include "tate/data/segment.hpp"

namespace tate {

struct SynthSpec {
  std::size_t classes = 3;
  std::size_t per_class = 100;
  std::array<std::size_t, 3> widths{20, 12, 32};
  // Maximum sequence length; each segment draws a length in [ceil(L/2), L].
  std::array<std::size_t, 3> lengths{12, 16, 8};
  double separation = 5.0;
  double noise = 1.0;
  // Per-modality multiplier on the class separation. Textual carries the
  // strongest signal and visual the weakest.
  std::array<double, 3> strength{0.3, 0.45, 0.7};
  std::size_t latent_dim = 8;
  std::uint64_t seed = 7;
};

/// Class-conditional Gaussian sequences.
///
/// Every class owns a latent vector z_c. Modality m maps it through a fixed
/// random matrix P_m, normalizes, and scales by separation * strength[m] to get
/// the class anchor, so all three modalities of one class derive from the same
/// latent. A segment adds one segment-level offset and independent
/// per-timestep noise (both N(0, noise^2)) to the anchor.
inline Dataset synth_generate(const SynthSpec& spec) {
  if (spec.classes == 0) throw std::invalid_argument("synth: classes must be positive");
  if (spec.separation < 0.0 || spec.noise < 0.0) {
    throw std::invalid_argument("synth: separation and noise must be non-negative");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (spec.widths[i] == 0 || spec.lengths[i] == 0) throw std::invalid_argument("synth: widths and lengths must be positive");
    if (spec.lengths[i] > kMaxLength[i]) throw std::invalid_argument("synth: length exceeds the modality maximum");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> latents(spec.classes, std::vector<double>(spec.latent_dim));
  for (auto& z : latents)
    for (auto& v : z) v = gauss(rng);

  // anchors[m][c] : width d_m
  std::array<std::vector<std::vector<double>>, 3> anchors;
  for (std::size_t m = 0; m < 3; ++m) {
    const std::size_t d = spec.widths[m];
    std::vector<double> proj(d * spec.latent_dim);
    for (auto& v : proj) v = gauss(rng);
    for (std::size_t c = 0; c < spec.classes; ++c) {
      std::vector<double> a(d, 0.0);
      double norm = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t k = 0; k < spec.latent_dim; ++k) a[i] += proj[i * spec.latent_dim + k] * latents[c][k];
        norm += a[i] * a[i];
      }
      norm = std::sqrt(norm);
      const double s = norm > 0.0 ? spec.separation * spec.strength[m] / norm : 0.0;
      for (auto& v : a) v *= s;
      anchors[m].push_back(std::move(a));
    }
  }

  Dataset ds;
  ds.class_count = spec.classes;
  ds.widths = spec.widths;
  const std::size_t total = spec.classes * spec.per_class;
  ds.segments.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    Segment s;
    s.label = i % spec.classes;
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth-%06zu", i);
    s.id = buf;
    for (std::size_t m = 0; m < 3; ++m) {
      const std::size_t d = spec.widths[m];
      const std::size_t lo = (spec.lengths[m] + 1) / 2;
      std::uniform_int_distribution<std::size_t> len(lo, spec.lengths[m]);
      const std::size_t n = len(rng);
      std::vector<double> offset(d);
      for (auto& v : offset) v = spec.noise * gauss(rng);
      Tensor t({n, d});
      const auto& anchor = anchors[m][s.label];
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) t(r, c) = anchor[c] + offset[c] + spec.noise * gauss(rng);
      s.features[m] = std::move(t);
    }
    ds.segments.push_back(std::move(s));
  }
  return ds;
}

}  // namespace tate
