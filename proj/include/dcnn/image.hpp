#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dcnn/error.hpp"

namespace dcnn {

/// Marker stored in disparity cells without a value.
inline constexpr float kInvalidDisparity = std::numeric_limits<float>::infinity();

inline bool is_valid_disparity(float v) { return std::isfinite(v); }

/// Nearest 8-bit level of an intensity in [0,1], ties away from zero.
inline std::uint8_t to_level(float v) {
  long q = std::lround(static_cast<double>(v) * 255.0);
  if (q < 0) q = 0;
  if (q > 255) q = 255;
  return static_cast<std::uint8_t>(q);
}

inline void require_dims(int width, int height, const char* what) {
  if (width < 1 || height < 1)
    throw ParameterError(std::string(what) + ": dimensions must be at least 1x1, got " +
                         std::to_string(width) + "x" + std::to_string(height));
}

/// Single-channel intensity raster, row-major, values in [0,1].
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 0.0f)
      : width_(width), height_(height), data_(checked_size(width, height), fill) {}
  GrayImage(int width, int height, std::vector<float> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != checked_size(width, height))
      throw ParameterError("GrayImage: data length does not match dimensions");
    for (float v : data_)
      if (!(v >= 0.0f && v <= 1.0f)) throw ParameterError("GrayImage: intensity outside [0,1]");
  }

  static GrayImage from_levels(int width, int height, const std::vector<std::uint8_t>& levels) {
    if (levels.size() != checked_size(width, height))
      throw ParameterError("GrayImage: level count does not match dimensions");
    std::vector<float> d(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) d[i] = levels[i] / 255.0f;
    return GrayImage(width, height, std::move(d));
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float& operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  /// Quantized view used wherever intensities are compared.
  std::vector<std::uint8_t> levels() const {
    std::vector<std::uint8_t> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = to_level(data_[i]);
    return out;
  }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  static std::size_t checked_size(int w, int h) {
    require_dims(w, h, "GrayImage");
    return static_cast<std::size_t>(w) * h;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Per-pixel disparities; cells without a value hold kInvalidDisparity.
class DisparityMap {
 public:
  DisparityMap() = default;
  DisparityMap(int width, int height, float fill = kInvalidDisparity)
      : width_(width), height_(height) {
    require_dims(width, height, "DisparityMap");
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }
  DisparityMap(int width, int height, std::vector<float> data) : width_(width), height_(height) {
    require_dims(width, height, "DisparityMap");
    if (data.size() != static_cast<std::size_t>(width) * height)
      throw ParameterError("DisparityMap: data length does not match dimensions");
    data_ = std::move(data);
    for (auto& v : data_) {
      if (!std::isfinite(v)) v = kInvalidDisparity;
      else if (v < 0.0f) throw ParameterError("DisparityMap: negative disparity");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float& operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }
  const std::vector<float>& data() const { return data_; }

  bool valid(std::size_t i) const { return is_valid_disparity(data_[i]); }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (float v : data_) n += is_valid_disparity(v);
    return n;
  }

  const std::optional<int>& ndisp() const { return ndisp_; }
  void set_ndisp(std::optional<int> n) {
    ndisp_ = n;
    validate();
  }

  void validate() const {
    for (float v : data_) {
      if (!is_valid_disparity(v)) continue;
      if (v < 0.0f) throw ParameterError("DisparityMap: negative disparity");
      if (ndisp_ && v >= static_cast<float>(*ndisp_))
        throw ParameterError("DisparityMap: disparity " + std::to_string(v) +
                             " not below ndisp " + std::to_string(*ndisp_));
    }
  }

  /// Bitwise equality, so two invalid cells compare equal.
  friend bool operator==(const DisparityMap& a, const DisparityMap& b) {
    if (a.width_ != b.width_ || a.height_ != b.height_ || a.data_.size() != b.data_.size())
      return false;
    for (std::size_t i = 0; i < a.data_.size(); ++i) {
      std::uint32_t x, y;
      std::memcpy(&x, &a.data_[i], 4);
      std::memcpy(&y, &b.data_[i], 4);
      if (x != y) return false;
    }
    return true;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
  std::optional<int> ndisp_;
};

/// Binary raster; nonzero means selected.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0) : width(w), height(h) {
    require_dims(w, h, "Mask");
    data.assign(static_cast<std::size_t>(w) * h, fill);
  }
  std::uint8_t operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  bool selected(std::size_t i) const { return data[i] != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v != 0;
    return n;
  }
  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Per-pixel confidence in [0,1] with a validity flag.
struct ConfidenceMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  ConfidenceMap() = default;
  ConfidenceMap(int w, int h) : width(w), height(h) {
    require_dims(w, h, "ConfidenceMap");
    values.assign(static_cast<std::size_t>(w) * h, 0.0f);
    valid.assign(values.size(), 0);
  }
  std::size_t size() const { return values.size(); }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
  }
};

}  // namespace dcnn
