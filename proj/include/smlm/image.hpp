#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace smlm {

/// Dense row-major 2D array. `u` indexes columns (x), `v` indexes rows (y).
template <typename T>
class Image
{
public:
  Image() = default;
  Image(int width, int height, T fill = T{})
    : width_(width), height_(height)
  {
    if (width < 0 || height < 0)
      throw std::invalid_argument("Image: negative dimension");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int u, int v) { return data_[index(u, v)]; }
  const T& operator()(int u, int v) const { return data_[index(u, v)]; }

  std::size_t index(int u, int v) const
  {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u);
  }

  bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Image& other) const
  {
    return width_ == other.width_ && height_ == other.height_;
  }

  template <typename U>
  Image<U> cast() const
  {
    Image<U> out(width_, height_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Image& a, const Image& b)
  {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using ImageD = Image<double>;
using ImageF = Image<float>;

struct Point2
{
  double x = 0.0;
  double y = 0.0;
};

struct Point3
{
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Camera pixel lattice in nanometres. Pixel (u, v) covers
/// [origin_x + u*pitch, origin_x + (u+1)*pitch) and likewise in y.
struct PixelGrid
{
  int width = 0;
  int height = 0;
  double pixel_size = 100.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  /// Each pixel is sampled on an oversample x oversample sub-lattice and averaged.
  int oversample = 1;

  double center_x(int u) const { return origin_x + (u + 0.5) * pixel_size; }
  double center_y(int v) const { return origin_y + (v + 0.5) * pixel_size; }
};

} // namespace smlm
