#include "dcnet/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <jpeglib.h>
#include <png.h>

namespace dcnet {

namespace {

using i64 = std::int64_t;

constexpr double kPi = 3.14159265358979323846;

std::string lower_ext(const std::string& path) {
  auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return "";
  std::string ext = path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

void check_dims(i64 h, i64 w, const std::string& path) {
  if (h < 1 || w < 1 || h > (1 << 24) || w > (1 << 24))
    throw IoError(path + ": implausible image size " + std::to_string(h) + "x" +
                  std::to_string(w));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

ImageBuffer read_png_file(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": libpng init failed");
  }
  ImageBuffer img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": png decode failed");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  img.height = png_get_image_height(png, info);
  img.width = png_get_image_width(png, info);
  check_dims(img.height, img.width, path);
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": png did not reduce to RGB");
  }
  img.pixels.resize(static_cast<std::size_t>(img.height * img.width * 3));
  rows.resize(static_cast<std::size_t>(img.height));
  for (i64 y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_file(const std::string& path, const ImageBuffer& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path + ": libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::remove(path.c_str());
    throw IoError(path + ": png encode failed");
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (i64 y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct JpegErr {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_err_exit(j_common_ptr cinfo) {
  std::longjmp(reinterpret_cast<JpegErr*>(cinfo->err)->jump, 1);
}

ImageBuffer read_jpeg_file(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  jpeg_decompress_struct cinfo;
  JpegErr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_err_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError(path + ": jpeg decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  ImageBuffer img;
  img.height = cinfo.output_height;
  img.width = cinfo.output_width;
  check_dims(img.height, img.width, path);
  img.pixels.resize(static_cast<std::size_t>(img.height * img.width * 3));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() + static_cast<i64>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

// Bilinear tap with edge replication.
void sample_clamped(const ImageBuffer& img, double sx, double sy, std::uint8_t* out) {
  const i64 h = img.height, w = img.width;
  i64 x0 = static_cast<i64>(std::floor(sx));
  i64 y0 = static_cast<i64>(std::floor(sy));
  const double fx = sx - x0, fy = sy - y0;
  auto cx = [&](i64 v) { return std::clamp<i64>(v, 0, w - 1); };
  auto cy = [&](i64 v) { return std::clamp<i64>(v, 0, h - 1); };
  const std::uint8_t* p00 = img.at(cy(y0), cx(x0));
  const std::uint8_t* p01 = img.at(cy(y0), cx(x0 + 1));
  const std::uint8_t* p10 = img.at(cy(y0 + 1), cx(x0));
  const std::uint8_t* p11 = img.at(cy(y0 + 1), cx(x0 + 1));
  for (int ch = 0; ch < 3; ++ch) {
    double v = (1 - fy) * ((1 - fx) * p00[ch] + fx * p01[ch]) +
               fy * ((1 - fx) * p10[ch] + fx * p11[ch]);
    out[ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  }
}

// dst(y,x) <- src(map(y,x)) for right-angle rotations of a square image.
ImageBuffer rotate_square_exact(const ImageBuffer& img, int quarter_turns) {
  const i64 s = img.height;
  ImageBuffer out{s, s, std::vector<std::uint8_t>(img.pixels.size())};
  for (i64 y = 0; y < s; ++y)
    for (i64 x = 0; x < s; ++x) {
      i64 sx = 0, sy = 0;
      switch (quarter_turns) {
        case 1: sx = y; sy = s - 1 - x; break;
        case 2: sx = s - 1 - x; sy = s - 1 - y; break;
        default: sx = s - 1 - y; sy = x; break;
      }
      std::memcpy(out.at(y, x), img.at(sy, sx), 3);
    }
  return out;
}

ImageBuffer warp(const ImageBuffer& img, const std::array<double, 4>& lin, double tx, double ty) {
  const double cxr = (img.width - 1) / 2.0, cyr = (img.height - 1) / 2.0;
  ImageBuffer out{img.height, img.width, std::vector<std::uint8_t>(img.pixels.size())};
  for (i64 y = 0; y < img.height; ++y)
    for (i64 x = 0; x < img.width; ++x) {
      const double dx = x - cxr, dy = y - cyr;
      const double sx = lin[0] * dx + lin[1] * dy + cxr + tx;
      const double sy = lin[2] * dx + lin[3] * dy + cyr + ty;
      sample_clamped(img, sx, sy, out.at(y, x));
    }
  return out;
}

}  // namespace

ImageBuffer read_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::uint32_t dims[2];
  if (!is.read(reinterpret_cast<char*>(dims), 8)) throw IoError(path + ": raw header truncated");
  ImageBuffer img;
  img.height = dims[0];
  img.width = dims[1];
  check_dims(img.height, img.width, path);
  img.pixels.resize(static_cast<std::size_t>(img.height * img.width * 3));
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size())))
    throw IoError(path + ": raw pixels truncated");
  return img;
}

void write_raw(const std::string& path, const ImageBuffer& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  std::uint32_t dims[2] = {static_cast<std::uint32_t>(img.height),
                           static_cast<std::uint32_t>(img.width)};
  os.write(reinterpret_cast<const char*>(dims), 8);
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  if (!os) {
    std::remove(path.c_str());
    throw IoError("failed writing " + path);
  }
}

ImageBuffer read_image(const std::string& path) {
  const std::string ext = lower_ext(path);
  if (ext == "png") return read_png_file(path);
  if (ext == "jpg" || ext == "jpeg") return read_jpeg_file(path);
  if (ext == "raw") return read_raw(path);
  throw IoError(path + ": unsupported image extension ." + ext);
}

void write_image(const std::string& path, const ImageBuffer& img) {
  const std::string ext = lower_ext(path);
  if (ext == "png") return write_png_file(path, img);
  if (ext == "raw") return write_raw(path, img);
  throw IoError(path + ": only .png and .raw outputs are supported");
}

std::string transform_str(const TransformDesc& t) {
  char buf[160];
  switch (t.kind) {
    case TransformDesc::Kind::kIdentity: return "identity";
    case TransformDesc::Kind::kHFlip: return "hflip";
    case TransformDesc::Kind::kVFlip: return "vflip";
    case TransformDesc::Kind::kRotation:
      std::snprintf(buf, sizeof(buf), "rot:%.17g", t.angle_deg);
      return buf;
    case TransformDesc::Kind::kAffine:
      std::snprintf(buf, sizeof(buf), "affine:%.17g;%.17g;%.17g;%.17g;%.17g;%.17g", t.m[0], t.m[1],
                    t.m[2], t.m[3], t.m[4], t.m[5]);
      return buf;
  }
  throw Error("unreachable transform kind");
}

TransformDesc parse_transform(const std::string& s) {
  auto to_double = [&](const std::string& tok) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw ValidationError("bad transform: " + s);
    }
    if (used != tok.size()) throw ValidationError("bad transform: " + s);
    return v;
  };
  TransformDesc t;
  if (s == "identity") return t;
  if (s == "hflip") {
    t.kind = TransformDesc::Kind::kHFlip;
    return t;
  }
  if (s == "vflip") {
    t.kind = TransformDesc::Kind::kVFlip;
    return t;
  }
  if (s.rfind("rot:", 0) == 0) {
    t.kind = TransformDesc::Kind::kRotation;
    t.angle_deg = to_double(s.substr(4));
    return t;
  }
  if (s.rfind("affine:", 0) == 0) {
    t.kind = TransformDesc::Kind::kAffine;
    std::string rest = s.substr(7);
    for (int i = 0; i < 6; ++i) {
      auto semi = rest.find(';');
      if ((semi == std::string::npos) != (i == 5)) throw ValidationError("bad transform: " + s);
      t.m[i] = to_double(rest.substr(0, semi));
      rest = semi == std::string::npos ? "" : rest.substr(semi + 1);
    }
    return t;
  }
  throw ValidationError("bad transform: " + s);
}

TransformDesc draw_transform(Rng& rng) {
  TransformDesc t;
  switch (rng.below(4)) {
    case 0:
      t.kind = TransformDesc::Kind::kRotation;
      if (rng.below(2) == 0)
        t.angle_deg = 90.0 * static_cast<double>(1 + rng.below(3));
      else
        t.angle_deg = rng.uniform() * 60.0 - 30.0;
      break;
    case 1: t.kind = TransformDesc::Kind::kHFlip; break;
    case 2: t.kind = TransformDesc::Kind::kVFlip; break;
    default:
      t.kind = TransformDesc::Kind::kAffine;
      t.m[0] = 0.9 + 0.2 * rng.uniform();   // x scale
      t.m[4] = 0.9 + 0.2 * rng.uniform();   // y scale
      t.m[1] = 0.2 * rng.uniform() - 0.1;   // x shear
      t.m[3] = 0.2 * rng.uniform() - 0.1;   // y shear
      t.m[2] = 0.1 * rng.uniform() - 0.05;  // x shift, fraction of width
      t.m[5] = 0.1 * rng.uniform() - 0.05;  // y shift, fraction of height
      break;
  }
  return t;
}

ImageBuffer apply_transform(const ImageBuffer& img, const TransformDesc& t) {
  if (img.height < 1 || img.width < 1) throw ValidationError("apply_transform: empty image");
  switch (t.kind) {
    case TransformDesc::Kind::kIdentity: return img;
    case TransformDesc::Kind::kHFlip: {
      ImageBuffer out{img.height, img.width, std::vector<std::uint8_t>(img.pixels.size())};
      for (i64 y = 0; y < img.height; ++y)
        for (i64 x = 0; x < img.width; ++x)
          std::memcpy(out.at(y, x), img.at(y, img.width - 1 - x), 3);
      return out;
    }
    case TransformDesc::Kind::kVFlip: {
      ImageBuffer out{img.height, img.width, std::vector<std::uint8_t>(img.pixels.size())};
      for (i64 y = 0; y < img.height; ++y)
        std::memcpy(out.at(y, 0), img.at(img.height - 1 - y, 0),
                    static_cast<std::size_t>(img.width) * 3);
      return out;
    }
    case TransformDesc::Kind::kRotation: {
      double a = std::fmod(t.angle_deg, 360.0);
      if (a < 0) a += 360.0;
      if (img.height == img.width && (a == 90.0 || a == 180.0 || a == 270.0))
        return rotate_square_exact(img, static_cast<int>(a / 90.0));
      const double rad = t.angle_deg * kPi / 180.0;
      const double c = std::cos(rad), s = std::sin(rad);
      return warp(img, {c, s, -s, c}, 0.0, 0.0);
    }
    case TransformDesc::Kind::kAffine: {
      const double det = t.m[0] * t.m[4] - t.m[1] * t.m[3];
      if (std::fabs(det) < 1e-6)
        throw ValidationError("apply_transform: degenerate affine, |det| = " +
                              std::to_string(std::fabs(det)));
      return warp(img, {t.m[0], t.m[1], t.m[3], t.m[4]}, t.m[2] * img.width,
                  t.m[5] * img.height);
    }
  }
  throw Error("unreachable transform kind");
}

ImageBuffer center_square_crop(const ImageBuffer& img) {
  const i64 side = std::min(img.height, img.width);
  const i64 oy = (img.height - side) / 2, ox = (img.width - side) / 2;
  ImageBuffer out{side, side, std::vector<std::uint8_t>(static_cast<std::size_t>(side * side * 3))};
  for (i64 y = 0; y < side; ++y)
    std::memcpy(out.at(y, 0), img.at(oy + y, ox), static_cast<std::size_t>(side) * 3);
  return out;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, i64 out_h, i64 out_w) {
  if (out_h < 1 || out_w < 1) throw ValidationError("resize_bilinear: bad target size");
  if (out_h == img.height && out_w == img.width) return img;
  ImageBuffer out{out_h, out_w, std::vector<std::uint8_t>(static_cast<std::size_t>(out_h * out_w * 3))};
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (i64 y = 0; y < out_h; ++y)
    for (i64 x = 0; x < out_w; ++x)
      sample_clamped(img, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5, out.at(y, x));
  return out;
}

void StatsAccumulator::add(const ImageBuffer& img) {
  const std::uint8_t* p = img.pixels.data();
  const i64 n = img.height * img.width;
  for (i64 i = 0; i < n; ++i, p += 3)
    for (int ch = 0; ch < 3; ++ch) {
      const double v = p[ch] / 255.0;
      sum_[ch] += v;
      sum_sq_[ch] += v * v;
    }
  count_ += n;
}

ChannelStats StatsAccumulator::finish() const {
  if (count_ == 0) throw ValidationError("channel stats over zero pixels");
  ChannelStats s;
  for (int ch = 0; ch < 3; ++ch) {
    s.mean[ch] = sum_[ch] / count_;
    const double var = std::max(sum_sq_[ch] / count_ - s.mean[ch] * s.mean[ch], 1e-12);
    s.stddev[ch] = std::sqrt(var);
  }
  return s;
}

TensorPtr normalize(const std::vector<ImageBuffer>& batch, const ChannelStats& stats) {
  if (batch.empty()) throw ValidationError("normalize: empty batch");
  const i64 h = batch[0].height, w = batch[0].width;
  auto out = zeros<float>({static_cast<i64>(batch.size()), 3, h, w});
  float* dst = out->data.data();
  for (const auto& img : batch) {
    if (img.height != h || img.width != w)
      throw ShapeError("normalize: mixed image sizes in batch");
    for (int ch = 0; ch < 3; ++ch) {
      const float mean = static_cast<float>(stats.mean[ch]);
      const float inv = static_cast<float>(1.0 / stats.stddev[ch]);
      const std::uint8_t* p = img.pixels.data() + ch;
      for (i64 i = 0; i < h * w; ++i, p += 3)
        *dst++ = (static_cast<float>(*p) * (1.0f / 255.0f) - mean) * inv;
    }
  }
  return out;
}

}  // namespace dcnet
