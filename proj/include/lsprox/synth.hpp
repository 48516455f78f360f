#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "lsprox/sequence.hpp"

namespace lsprox::bgsub {

// Synthetic surveillance-style scene: a rank-r background with smooth
// illumination drift, moving (and optionally stationary) rectangles of
// contrasting intensity, and additive Gaussian noise.
struct SynthConfig {
  int height = 32;
  int width = 32;
  int n_frames = 32;
  int background_rank = 2;
  double drift = 0.2;         // amplitude of the temporal coefficient drift
  int objects = 2;            // moving rectangles
  int object_size = 6;        // square side, pixels
  double object_speed = 1.0;  // pixels per frame; 0 = stationary
  int static_objects = 0;     // extra rectangles fixed in place for the whole sequence
  double noise = 0.01;        // stddev of additive Gaussian noise
  std::uint64_t seed = 0;

  void validate() const {
    if (height < 1 || width < 1 || n_frames < 1)
      throw std::invalid_argument("SynthConfig: height, width, n_frames must be >= 1");
    if (background_rank < 1) throw std::invalid_argument("SynthConfig: background_rank >= 1");
    if (objects < 0 || static_objects < 0)
      throw std::invalid_argument("SynthConfig: object counts must be >= 0");
    if ((objects + static_objects > 0) &&
        (object_size < 1 || object_size > height || object_size > width))
      throw std::invalid_argument("SynthConfig: objects must fit inside the frame");
    if (!(object_speed >= 0.0)) throw std::invalid_argument("SynthConfig: speed must be >= 0");
    if (!(noise >= 0.0)) throw std::invalid_argument("SynthConfig: noise must be >= 0");
    if (!(drift >= 0.0 && drift <= 1.0))
      throw std::invalid_argument("SynthConfig: drift must lie in [0, 1]");
  }
};

struct SynthSequence {
  Sequence seq;                                        // frames + combined masks
  std::vector<std::vector<double>> background;         // clean background per frame
  std::vector<std::vector<std::uint8_t>> static_mask;  // stationary-object pixels only
};

inline SynthSequence synth_sequence(const SynthConfig& cfg) {
  cfg.validate();
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int hpx = cfg.height, wpx = cfg.width, n = cfg.n_frames;
  const std::size_t npx = static_cast<std::size_t>(hpx) * wpx;

  // Spatial basis: a bright base pattern plus zero-mean low-frequency fields.
  std::vector<std::vector<double>> basis(static_cast<std::size_t>(cfg.background_rank),
                                         std::vector<double>(npx));
  for (int r = 0; r < cfg.background_rank; ++r) {
    const double fy = 1.0 + std::floor(unit(rng) * 2.0);
    const double fx = 1.0 + std::floor(unit(rng) * 2.0);
    const double phase = two_pi * unit(rng);
    const double amp = r == 0 ? 0.1 : 0.25 / std::max(1, cfg.background_rank - 1);
    const double offset = r == 0 ? 0.5 : 0.0;
    for (int i = 0; i < hpx; ++i)
      for (int j = 0; j < wpx; ++j)
        basis[static_cast<std::size_t>(r)][static_cast<std::size_t>(i) * wpx + j] =
            offset + amp * std::cos(two_pi * (fy * i / hpx + fx * j / wpx) + phase);
  }
  // Temporal coefficients: c_0 drifts around 1, the others around 0.
  std::vector<double> tempo_freq(static_cast<std::size_t>(cfg.background_rank));
  std::vector<double> tempo_phase(static_cast<std::size_t>(cfg.background_rank));
  for (int r = 0; r < cfg.background_rank; ++r) {
    tempo_freq[static_cast<std::size_t>(r)] = 1.0 + std::floor(unit(rng) * 3.0);
    tempo_phase[static_cast<std::size_t>(r)] = two_pi * unit(rng);
  }

  struct Rect {
    double y0, x0;      // start position (top-left)
    double vy, vx;      // velocity, pixels per frame
    double intensity;
    bool is_static;
  };
  std::vector<Rect> rects;
  const int total_objects = cfg.objects + cfg.static_objects;
  for (int o = 0; o < total_objects; ++o) {
    Rect rc;
    rc.is_static = o >= cfg.objects;
    rc.y0 = unit(rng) * (hpx - cfg.object_size);
    rc.x0 = unit(rng) * (wpx - cfg.object_size);
    const double angle = two_pi * unit(rng);
    const double speed = rc.is_static ? 0.0 : cfg.object_speed;
    rc.vy = speed * std::sin(angle);
    rc.vx = speed * std::cos(angle);
    rc.intensity = (o % 2 == 0) ? 0.92 + 0.06 * unit(rng)   // bright
                                : 0.02 + 0.06 * unit(rng);  // dark
    rects.push_back(rc);
  }

  // Reflect a coordinate into [0, limit] (bouncing off the borders).
  auto fold = [](double p, double limit) {
    if (limit <= 0.0) return 0.0;
    double m = std::fmod(p, 2.0 * limit);
    if (m < 0.0) m += 2.0 * limit;
    return m <= limit ? m : 2.0 * limit - m;
  };

  std::normal_distribution<double> gauss(0.0, 1.0);
  SynthSequence out;
  out.seq.h = hpx;
  out.seq.w = wpx;
  for (int t = 0; t < n; ++t) {
    std::vector<double> bg(npx, 0.0);
    for (int r = 0; r < cfg.background_rank; ++r) {
      // The base layer drifts around 1 at half amplitude so the scene cannot
      // wash out the object contrast; the extra layers oscillate around 0.
      const double base = r == 0 ? 1.0 : 0.0;
      const double amp = r == 0 ? 0.5 * cfg.drift : cfg.drift;
      const double c =
          base + amp * std::sin(two_pi * tempo_freq[static_cast<std::size_t>(r)] * t / n +
                                tempo_phase[static_cast<std::size_t>(r)]);
      const std::vector<double>& b = basis[static_cast<std::size_t>(r)];
      for (std::size_t i = 0; i < npx; ++i) bg[i] += c * b[i];
    }

    std::vector<double> frame = bg;
    std::vector<std::uint8_t> mask(npx, 0);
    std::vector<std::uint8_t> stat(npx, 0);
    for (const Rect& rc : rects) {
      const int y = static_cast<int>(std::lround(fold(rc.y0 + t * rc.vy,
                                                      static_cast<double>(hpx - cfg.object_size))));
      const int x = static_cast<int>(std::lround(fold(rc.x0 + t * rc.vx,
                                                      static_cast<double>(wpx - cfg.object_size))));
      for (int i = y; i < y + cfg.object_size; ++i)
        for (int j = x; j < x + cfg.object_size; ++j) {
          const std::size_t p = static_cast<std::size_t>(i) * wpx + j;
          frame[p] = rc.intensity;
          mask[p] = 1;
          if (rc.is_static) stat[p] = 1;
        }
    }
    if (cfg.noise > 0.0)
      for (std::size_t i = 0; i < npx; ++i) frame[i] += cfg.noise * gauss(rng);
    for (std::size_t i = 0; i < npx; ++i) frame[i] = std::min(1.0, std::max(0.0, frame[i]));

    out.seq.frames.push_back(std::move(frame));
    out.seq.masks.push_back(std::move(mask));
    out.seq.frame_ids.push_back(t);
    out.background.push_back(std::move(bg));
    out.static_mask.push_back(std::move(stat));
  }
  return out;
}

}  // namespace lsprox::bgsub
