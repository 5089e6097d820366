#pragma once

#include <cstdint>
#include <vector>

namespace cmwm {

using BitVec = std::vector<uint8_t>;  // entries are 0 or 1

/// Per-sentence extraction result: sigmoid confidences, thresholded bits,
/// and pivot flags for bits whose confidence is far from 0.5.
struct ExtractedBits {
  std::vector<double> confidences;  // each in (0,1)
  BitVec bits;                      // bits[i] = confidences[i] >= 0.5
  std::vector<uint8_t> pivots;      // |confidences[i] - 0.5| >= pivot_margin

  static ExtractedBits from_confidences(const std::vector<double>& conf,
                                        double pivot_margin) {
    ExtractedBits e;
    e.confidences = conf;
    for (double c : conf) {
      e.bits.push_back(c >= 0.5 ? 1 : 0);
      const double d = c >= 0.5 ? c - 0.5 : 0.5 - c;
      e.pivots.push_back(d >= pivot_margin ? 1 : 0);
    }
    return e;
  }
};

constexpr double kDefaultPivotMargin = 0.4;

}  // namespace cmwm
