#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsprox/autodiff.hpp"
#include "lsprox/image.hpp"
#include "lsprox/matrix.hpp"

namespace lsprox::bgsub {

// A grayscale image sequence with optional per-frame binary ground truth.
struct Sequence {
  int h = 0;
  int w = 0;
  std::vector<std::vector<double>> frames;        // row-major, values in [0, 1]
  std::vector<std::vector<std::uint8_t>> masks;   // {0, 1}; empty when unknown
  std::vector<int> frame_ids;

  int n() const { return static_cast<int>(frames.size()); }
};

inline int count_sequence_files(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw std::runtime_error("count_sequence_files: '" + dir + "' is not a directory");
  int n = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = img::lower_ext(entry.path().filename().string());
    if (ext == ".pgm" || ext == ".png") ++n;
  }
  return n;
}

// Loads PGM/PNG frames from a directory in sorted filename order. A frame
// range [start, start+count) is applied first (count < 0 means "to the end");
// when sample > 0 that many frames are then drawn without replacement.
inline Sequence load_sequence(const std::string& dir, int start = 0, int count = -1,
                              int sample = 0, std::uint64_t seed = 0) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw std::runtime_error("load_sequence: '" + dir + "' is not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = img::lower_ext(entry.path().filename().string());
    if (ext == ".pgm" || ext == ".png") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::runtime_error("load_sequence: no PGM/PNG files in '" + dir + "'");

  if (start < 0 || start >= static_cast<int>(files.size()))
    throw std::runtime_error("load_sequence: start index " + std::to_string(start) +
                             " out of range (have " + std::to_string(files.size()) + " frames)");
  const int avail = static_cast<int>(files.size()) - start;
  const int span = count < 0 ? avail : std::min(count, avail);
  if (count >= 0 && count > avail)
    throw std::runtime_error("load_sequence: requested " + std::to_string(count) +
                             " frames from " + std::to_string(start) + ", only " +
                             std::to_string(avail) + " available");
  std::vector<int> picked(static_cast<std::size_t>(span));
  for (int i = 0; i < span; ++i) picked[static_cast<std::size_t>(i)] = start + i;
  if (sample > 0) {
    if (sample > span)
      throw std::runtime_error("load_sequence: cannot sample " + std::to_string(sample) +
                               " of " + std::to_string(span) + " frames");
    std::mt19937_64 rng(seed);
    for (int i = 0; i < sample; ++i) {
      std::uniform_int_distribution<int> pick(i, span - 1);
      std::swap(picked[static_cast<std::size_t>(i)], picked[static_cast<std::size_t>(pick(rng))]);
    }
    picked.resize(static_cast<std::size_t>(sample));
    std::sort(picked.begin(), picked.end());
  }

  Sequence seq;
  for (int ix : picked) {
    const std::string& path = files[static_cast<std::size_t>(ix)];
    img::Image im = img::read_image(path);
    if (seq.frames.empty()) {
      seq.h = im.h;
      seq.w = im.w;
    } else if (im.h != seq.h || im.w != seq.w) {
      throw std::runtime_error("load_sequence: '" + path + "' is " + std::to_string(im.w) + "x" +
                               std::to_string(im.h) + ", expected " + std::to_string(seq.w) +
                               "x" + std::to_string(seq.h));
    }
    seq.frames.push_back(std::move(im.v));
    seq.frame_ids.push_back(ix);
  }
  return seq;
}

// (h*w x n) matrix; column j is frame j in row-major pixel order.
inline Matrix sequence_to_matrix(const Sequence& seq) {
  if (seq.n() == 0) throw std::invalid_argument("sequence_to_matrix: empty sequence");
  Matrix d(static_cast<Eigen::Index>(seq.h) * seq.w, seq.n());
  for (int j = 0; j < seq.n(); ++j)
    for (Eigen::Index i = 0; i < d.rows(); ++i)
      d(i, j) = seq.frames[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
  return d;
}

inline ad::Tensor sequence_to_tensor(const Sequence& seq) {
  if (seq.n() == 0) throw std::invalid_argument("sequence_to_tensor: empty sequence");
  ad::Tensor t(ad::Shape{seq.n(), 1, seq.h, seq.w});
  const std::size_t hw = static_cast<std::size_t>(seq.h) * seq.w;
  for (int j = 0; j < seq.n(); ++j)
    for (std::size_t i = 0; i < hw; ++i) t[static_cast<std::size_t>(j) * hw + i] =
        seq.frames[static_cast<std::size_t>(j)][i];
  return t;
}

}  // namespace lsprox::bgsub
