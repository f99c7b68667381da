#pragma once

#include <array>
#include <string>

#include "dcnet/rng.hpp"
#include "dcnet/tensor.hpp"

namespace dcnet {

// 8-bit interleaved RGB.
struct ImageBuffer {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  std::uint8_t* at(std::int64_t y, std::int64_t x) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::int64_t y, std::int64_t x) const {
    return pixels.data() + (y * width + x) * 3;
  }
};

// Readers: .png, .jpg/.jpeg, and the headerless raw form (u32 height,
// u32 width, RGB bytes, little-endian) used by synthetic tests.
// Writers: .png and .raw only, so outputs stay lossless.
ImageBuffer read_image(const std::string& path);
void write_image(const std::string& path, const ImageBuffer& img);

ImageBuffer read_raw(const std::string& path);
void write_raw(const std::string& path, const ImageBuffer& img);

struct TransformDesc {
  enum class Kind { kIdentity, kRotation, kHFlip, kVFlip, kAffine };
  Kind kind = Kind::kIdentity;
  double angle_deg = 0.0;               // rotation
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};  // affine rows [a b tx; c d ty], t in side fractions

  bool is_identity() const { return kind == Kind::kIdentity; }
};

// Round-trippable single-token encoding (no commas, safe in manifests):
// identity | rot:<deg> | hflip | vflip | affine:a;b;tx;c;d;ty
std::string transform_str(const TransformDesc& t);
TransformDesc parse_transform(const std::string& s);

// One seeded draw from the family: rotation ({90,180,270} or uniform
// (-30,30) degrees), horizontal/vertical flip, or a mild affine (scale and
// shear within 10%, translation within 5% of the side).
TransformDesc draw_transform(Rng& rng);

// Rotation is about the image center on the kept canvas, bilinear, edges
// replicated; right-angle rotations of square images are exact
// permutations. Flips are exact. Affine maps output to source coordinates
// about the center; near-singular matrices (|det| < 1e-6) are rejected.
ImageBuffer apply_transform(const ImageBuffer& img, const TransformDesc& t);

// Square crop of side min(H,W) at offsets floor((L - side)/2).
ImageBuffer center_square_crop(const ImageBuffer& img);

// Half-pixel-centered bilinear resize.
ImageBuffer resize_bilinear(const ImageBuffer& img, std::int64_t out_h, std::int64_t out_w);

struct ChannelStats {
  std::array<double, 3> mean{0, 0, 0};    // of samples scaled to [0,1]
  std::array<double, 3> stddev{1, 1, 1};
};

// Streaming per-channel moments over a set of images.
class StatsAccumulator {
 public:
  void add(const ImageBuffer& img);
  ChannelStats finish() const;

 private:
  std::array<double, 3> sum_{0, 0, 0};
  std::array<double, 3> sum_sq_{0, 0, 0};
  std::int64_t count_ = 0;
};

// [N,3,S,S] from same-sized images: (v/255 - mean) / stddev per channel.
TensorPtr normalize(const std::vector<ImageBuffer>& batch, const ChannelStats& stats);

}  // namespace dcnet
