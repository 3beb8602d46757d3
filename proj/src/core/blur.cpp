#include <algorithm>
#include <cmath>

#include "s2c/error.hpp"
#include "s2c/synth.hpp"

namespace s2c::synth {

namespace {

// Half-sample symmetric reflection (d c b a | a b c d | d c b a), periodic for
// kernels wider than the image.
int reflect(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

}  // namespace

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) fail(ErrorKind::usage, "gaussian blur requires sigma > 0");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

ProbabilityMask gaussian_blur(const BinaryMask& mask, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int w = mask.width();
  const int h = mask.height();

  std::vector<double> rows(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * mask.at(y, reflect(x + k, w));
      rows[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  std::vector<double> out(rows.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * rows[static_cast<std::size_t>(reflect(y + k, h)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = std::clamp(acc, 0.0, 1.0);
    }
  }
  return ProbabilityMask(w, h, std::move(out));
}

BinaryMask coarsen_mask(const BinaryMask& fine, double sigma, double threshold) {
  require(threshold > 0.0 && threshold < 1.0, "coarsen threshold must be in (0,1)");
  return gaussian_blur(fine, sigma).threshold(threshold);
}

}  // namespace s2c::synth
