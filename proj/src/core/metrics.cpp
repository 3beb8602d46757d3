#include "s2c/metrics.hpp"

#include "s2c/error.hpp"

namespace s2c {

Confusion confusion(const BinaryMask& pred, const BinaryMask& truth) {
  require(pred.width() == truth.width() && pred.height() == truth.height(), "confusion: mask shapes differ");
  Confusion c;
  const auto p = pred.data();
  const auto t = truth.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]) {
      if (t[i]) ++c.tp;
      else ++c.fp;
    } else {
      if (t[i]) ++c.fn;
      else ++c.tn;
    }
  }
  return c;
}

double pixel_accuracy(const Confusion& c) {
  require(c.total() > 0, "pixel_accuracy of an empty confusion");
  return 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

ClassIou class_iou(const Confusion& c) {
  require(c.total() > 0, "IoU of an empty confusion");
  ClassIou r;
  const auto water_union = c.tp + c.fp + c.fn;
  const auto land_union = c.tn + c.fp + c.fn;
  r.water_present = water_union > 0;
  r.nonwater_present = land_union > 0;
  if (r.water_present) r.water = 100.0 * static_cast<double>(c.tp) / static_cast<double>(water_union);
  if (r.nonwater_present) r.nonwater = 100.0 * static_cast<double>(c.tn) / static_cast<double>(land_union);
  return r;
}

double mean_iou(const Confusion& c) {
  const auto r = class_iou(c);
  if (r.water_present && r.nonwater_present) return (r.water + r.nonwater) / 2.0;
  if (r.water_present) return r.water;
  if (r.nonwater_present) return r.nonwater;
  return 100.0;
}

}  // namespace s2c
