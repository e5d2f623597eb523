#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace mvs {

/// One colour plane, rows = image rows (y), cols = image columns (x).
template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr Eigen::Index kStandardSide = 224;

/// RGB image as three planes. `value_max` is the top of the declared pixel
/// range: 1 for standardized tensors, 255 or 65535 for raw decoded files.
template <typename Scalar>
struct ImageTensor {
  static constexpr int kChannels = 3;

  std::array<Plane<Scalar>, kChannels> channels;
  Scalar value_max{1};

  ImageTensor() = default;
  ImageTensor(Eigen::Index height, Eigen::Index width, Scalar fill = Scalar(0), Scalar max = Scalar(1))
      : value_max(max) {
    for (auto& c : channels) c = Plane<Scalar>::Constant(height, width, fill);
  }

  Eigen::Index height() const { return channels[0].rows(); }
  Eigen::Index width() const { return channels[0].cols(); }
  bool empty() const { return channels[0].size() == 0; }

  Scalar& operator()(int c, Eigen::Index y, Eigen::Index x) { return channels[c](y, x); }
  Scalar operator()(int c, Eigen::Index y, Eigen::Index x) const { return channels[c](y, x); }

  template <typename Other>
  ImageTensor<Other> cast() const {
    ImageTensor<Other> out;
    out.value_max = static_cast<Other>(value_max);
    for (int c = 0; c < kChannels; ++c) out.channels[c] = channels[c].template cast<Other>();
    return out;
  }

  Scalar min_value() const {
    Scalar m = channels[0].minCoeff();
    for (const auto& c : channels) m = std::min(m, c.minCoeff());
    return m;
  }
  Scalar max_value() const {
    Scalar m = channels[0].maxCoeff();
    for (const auto& c : channels) m = std::max(m, c.maxCoeff());
    return m;
  }

  friend bool operator==(const ImageTensor& a, const ImageTensor& b) {
    if (a.height() != b.height() || a.width() != b.width()) return false;
    for (int c = 0; c < kChannels; ++c)
      if ((a.channels[c] != b.channels[c]).any()) return false;
    return true;
  }
};

using Image = ImageTensor<float>;

template <typename Scalar>
Scalar max_abs_difference(const ImageTensor<Scalar>& a, const ImageTensor<Scalar>& b) {
  Scalar d = 0;
  for (int c = 0; c < ImageTensor<Scalar>::kChannels; ++c)
    d = std::max(d, (a.channels[c] - b.channels[c]).abs().maxCoeff());
  return d;
}

/// Column j maps to column width-1-j.
template <typename Scalar>
ImageTensor<Scalar> mirror_horizontal(const ImageTensor<Scalar>& image) {
  ImageTensor<Scalar> out;
  out.value_max = image.value_max;
  for (int c = 0; c < ImageTensor<Scalar>::kChannels; ++c) out.channels[c] = image.channels[c].rowwise().reverse();
  return out;
}

namespace detail {

inline Eigen::Index clamp_index(Eigen::Index i, Eigen::Index n) { return std::clamp<Eigen::Index>(i, 0, n - 1); }

/// Symmetric reflection including the edge sample: ... c b a | a b c ... | z y x ...
inline Eigen::Index reflect_index(Eigen::Index i, Eigen::Index n) {
  if (n == 1) return 0;
  const Eigen::Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace detail

/// Bilinear resize with half-pixel centres and edge replication.
template <typename Scalar>
ImageTensor<Scalar> resize_bilinear(const ImageTensor<Scalar>& image, Eigen::Index out_h, Eigen::Index out_w) {
  const Eigen::Index in_h = image.height(), in_w = image.width();
  if (in_h == out_h && in_w == out_w) return image;

  ImageTensor<Scalar> out(out_h, out_w, Scalar(0), image.value_max);
  const double sy = double(in_h) / double(out_h);
  const double sx = double(in_w) / double(out_w);

  std::vector<Eigen::Index> x0(out_w), x1(out_w);
  std::vector<double> fx(out_w);
  for (Eigen::Index x = 0; x < out_w; ++x) {
    const double src = std::max(0.0, (x + 0.5) * sx - 0.5);
    const auto base = static_cast<Eigen::Index>(std::floor(src));
    x0[x] = detail::clamp_index(base, in_w);
    x1[x] = detail::clamp_index(base + 1, in_w);
    fx[x] = src - double(base);
  }
  for (Eigen::Index y = 0; y < out_h; ++y) {
    const double src = std::max(0.0, (y + 0.5) * sy - 0.5);
    const auto base = static_cast<Eigen::Index>(std::floor(src));
    const Eigen::Index y0 = detail::clamp_index(base, in_h), y1 = detail::clamp_index(base + 1, in_h);
    const double fy = src - double(base);
    for (int c = 0; c < ImageTensor<Scalar>::kChannels; ++c) {
      const auto& p = image.channels[c];
      for (Eigen::Index x = 0; x < out_w; ++x) {
        const double top = (1 - fx[x]) * p(y0, x0[x]) + fx[x] * p(y0, x1[x]);
        const double bot = (1 - fx[x]) * p(y1, x0[x]) + fx[x] * p(y1, x1[x]);
        out.channels[c](y, x) = static_cast<Scalar>((1 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

/// Rescale to [0,1] by the declared range maximum and resample to 224x224.
template <typename Scalar>
ImageTensor<Scalar> standardize(const ImageTensor<Scalar>& image, Eigen::Index side = kStandardSide) {
  ImageTensor<Scalar> scaled;
  if (image.value_max == Scalar(1)) {
    scaled = image;
  } else {
    scaled.value_max = Scalar(1);
    const Scalar inv = Scalar(1) / image.value_max;
    for (int c = 0; c < ImageTensor<Scalar>::kChannels; ++c) scaled.channels[c] = image.channels[c] * inv;
  }
  auto out = resize_bilinear(scaled, side, side);
  for (auto& c : out.channels) c = c.max(Scalar(0)).min(Scalar(1));
  return out;
}

/// Resample `image` through the affine map `forward` (output = forward * input,
/// homogeneous pixel coordinates). Border pixels are filled by reflection.
template <typename Scalar>
ImageTensor<Scalar> warp_affine(const ImageTensor<Scalar>& image, const Eigen::Matrix3d& forward) {
  const Eigen::Index h = image.height(), w = image.width();
  if (forward.isIdentity(0.0)) return image;
  const Eigen::Matrix3d inverse = forward.inverse();

  ImageTensor<Scalar> out(h, w, Scalar(0), image.value_max);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Vector3d src = inverse * Eigen::Vector3d(double(x), double(y), 1.0);
      const double xs = src.x(), ys = src.y();
      const double xf = std::floor(xs), yf = std::floor(ys);
      const double ax = xs - xf, ay = ys - yf;
      const auto xi = static_cast<Eigen::Index>(xf), yi = static_cast<Eigen::Index>(yf);
      const Eigen::Index xa = detail::reflect_index(xi, w), xb = detail::reflect_index(xi + 1, w);
      const Eigen::Index ya = detail::reflect_index(yi, h), yb = detail::reflect_index(yi + 1, h);
      for (int c = 0; c < ImageTensor<Scalar>::kChannels; ++c) {
        const auto& p = image.channels[c];
        const double top = (1 - ax) * p(ya, xa) + ax * p(ya, xb);
        const double bot = (1 - ax) * p(yb, xa) + ax * p(yb, xb);
        out.channels[c](y, x) = static_cast<Scalar>((1 - ay) * top + ay * bot);
      }
    }
  }
  return out;
}

}  // namespace mvs
