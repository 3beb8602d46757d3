#pragma once

#include <cstdint>

#include "s2c/raster.hpp"

namespace s2c {

/// Pixel counts with water as the positive class. Summing is the global
/// (micro) aggregation across tiles.
struct Confusion {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend Confusion operator+(Confusion a, const Confusion& b) { return a += b; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

Confusion confusion(const BinaryMask& pred, const BinaryMask& truth);

/// 100 (tp + tn) / total.
double pixel_accuracy(const Confusion& c);

struct ClassIou {
  double water = 0.0;     // percent; meaningless when !water_present
  double nonwater = 0.0;  // percent; meaningless when !nonwater_present
  bool water_present = false;
  bool nonwater_present = false;
};

ClassIou class_iou(const Confusion& c);

/// Mean over classes with a non-empty union; 100 when neither has one.
double mean_iou(const Confusion& c);

}  // namespace s2c
