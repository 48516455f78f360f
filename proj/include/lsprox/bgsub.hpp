#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "lsprox/matrix.hpp"

namespace lsprox::bgsub {

// Otsu's threshold on a 256-bin histogram over [0, max(values)]. Returns the
// bin-edge threshold maximizing the between-class variance; ties resolve to
// the lowest threshold. Needs at least two distinct values.
inline double otsu_threshold(const std::vector<double>& values) {
  if (values.size() < 2)
    throw std::runtime_error("otsu_threshold: need at least 2 values");
  double vmax = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("otsu_threshold: values must be finite and >= 0");
    vmax = std::max(vmax, v);
  }
  bool distinct = false;
  for (const double v : values)
    if (v != values.front()) {
      distinct = true;
      break;
    }
  if (!distinct) throw std::runtime_error("otsu_threshold: degenerate histogram");

  constexpr int kBins = 256;
  std::array<long long, kBins> count{};
  for (double v : values) {
    int bin = static_cast<int>(v / vmax * kBins);
    if (bin > kBins - 1) bin = kBins - 1;
    ++count[static_cast<std::size_t>(bin)];
  }
  const double bin_width = vmax / kBins;

  // Prefix sums accumulate in ascending bin order; the exhaustive-search
  // definition summed the same way gives bit-identical class statistics.
  double total_mass = 0.0;
  long long total_count = 0;
  for (int k = 0; k < kBins; ++k) {
    total_count += count[static_cast<std::size_t>(k)];
    total_mass += static_cast<double>(count[static_cast<std::size_t>(k)]) * (k + 0.5) * bin_width;
  }

  int best_t = 0;
  double best_var = -1.0;
  long long c0 = 0;
  double m0 = 0.0;
  for (int t = 0; t < kBins; ++t) {
    c0 += count[static_cast<std::size_t>(t)];
    m0 += static_cast<double>(count[static_cast<std::size_t>(t)]) * (t + 0.5) * bin_width;
    const long long c1 = total_count - c0;
    double var = 0.0;
    if (c0 > 0 && c1 > 0) {
      const double mu0 = m0 / static_cast<double>(c0);
      const double mu1 = (total_mass - m0) / static_cast<double>(c1);
      var = static_cast<double>(c0) * static_cast<double>(c1) * (mu0 - mu1) * (mu0 - mu1);
    }
    if (var > best_var) {
      best_var = var;
      best_t = t;
    }
  }
  return (best_t + 1) * bin_width;
}

struct DetectResult {
  double threshold = 0.0;
  std::vector<std::vector<std::uint8_t>> masks;  // one per column of S, values {0, 1}
};

// Foreground detection: one global Otsu threshold over |S| for the whole
// batch, mask = |s| > threshold. Column j of S is frame j (h*w rows).
inline DetectResult detect(const Matrix& s, int h, int w) {
  require_finite(s, "detect");
  if (s.rows() != static_cast<Eigen::Index>(h) * w)
    throw std::invalid_argument("detect: S rows must equal h*w");
  std::vector<double> mags;
  mags.reserve(static_cast<std::size_t>(s.size()));
  for (Eigen::Index j = 0; j < s.cols(); ++j)
    for (Eigen::Index i = 0; i < s.rows(); ++i) mags.push_back(std::abs(s(i, j)));
  DetectResult out;
  out.threshold = otsu_threshold(mags);
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(s.rows()));
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      mask[static_cast<std::size_t>(i)] = std::abs(s(i, j)) > out.threshold ? 1 : 0;
    out.masks.push_back(std::move(mask));
  }
  return out;
}

struct EvalReport {
  double threshold = std::numeric_limits<double>::quiet_NaN();
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_defined = false;
  bool recall_defined = false;
  bool f1_defined = false;
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  struct FrameCounts {
    long long tp = 0, fp = 0, fn = 0;
  };
  std::vector<FrameCounts> per_frame;
};

// Pixel-level micro-averaged precision/recall/F1 over all frames. A 0/0 ratio
// is reported via the *_defined flags rather than coerced to zero.
inline EvalReport evaluate(const std::vector<std::vector<std::uint8_t>>& masks,
                           const std::vector<std::vector<std::uint8_t>>& truth) {
  if (masks.size() != truth.size())
    throw std::invalid_argument("evaluate: frame count mismatch");
  if (masks.empty()) throw std::invalid_argument("evaluate: no frames");
  EvalReport rep;
  for (std::size_t f = 0; f < masks.size(); ++f) {
    if (masks[f].size() != truth[f].size())
      throw std::invalid_argument("evaluate: mask size mismatch at frame " + std::to_string(f));
    EvalReport::FrameCounts fc;
    for (std::size_t i = 0; i < masks[f].size(); ++i) {
      const std::uint8_t m = masks[f][i];
      const std::uint8_t t = truth[f][i];
      if (m > 1 || t > 1)
        throw std::invalid_argument("evaluate: masks must be strictly {0,1}");
      if (m && t)
        ++fc.tp;
      else if (m && !t)
        ++fc.fp;
      else if (!m && t)
        ++fc.fn;
    }
    rep.tp += fc.tp;
    rep.fp += fc.fp;
    rep.fn += fc.fn;
    rep.per_frame.push_back(fc);
  }
  if (rep.tp + rep.fp > 0) {
    rep.precision = static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fp);
    rep.precision_defined = true;
  }
  if (rep.tp + rep.fn > 0) {
    rep.recall = static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fn);
    rep.recall_defined = true;
  }
  if (rep.precision_defined && rep.recall_defined) {
    rep.f1_defined = true;
    const double pr = rep.precision + rep.recall;
    rep.f1 = pr > 0.0 ? 2.0 * rep.precision * rep.recall / pr : 0.0;
  }
  return rep;
}

}  // namespace lsprox::bgsub
