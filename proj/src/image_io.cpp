#include "ptseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "ptseg/error.hpp"

namespace ptseg::io {
namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Image8 read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) {
    throw Error(ErrorCode::InvalidArgument, "PNG channel count must be 1 or 3");
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw Error(ErrorCode::Io, "cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::Io, "cannot decode PNG " + path.string() + ": " + img.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw Error(ErrorCode::InvalidArgument, "PNG channel count must be 1 or 3");
  }
  if (image.pixels.size() !=
      static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw Error(ErrorCode::ShapeMismatch, "image buffer size disagrees with its dimensions");
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0,
                               nullptr)) {
    throw Error(ErrorCode::Io, "cannot write PNG " + path.string() + ": " + img.message);
  }
}

Image8 to_image(const warp::FeatureMap& fm) {
  const int c = fm.shape.channels;
  if (c != 1 && c != 3) {
    throw Error(ErrorCode::ShapeMismatch, "only 1- or 3-channel maps can be saved as PNG");
  }
  Image8 out{fm.shape.width, fm.shape.height, c, {}};
  out.pixels.resize(fm.values.size());
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int k = 0; k < c; ++k) {
        out.pixels[(static_cast<std::size_t>(y) * out.width + x) * c + k] = to_byte(fm.at(k, y, x));
      }
    }
  }
  return out;
}

warp::FeatureMap to_feature_map(const Image8& image) {
  warp::FeatureMap fm(warp::Shape3{image.channels, image.height, image.width});
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int k = 0; k < image.channels; ++k) {
        fm.at(k, y, x) =
            image.pixels[(static_cast<std::size_t>(y) * image.width + x) * image.channels + k] /
            255.0;
      }
    }
  }
  return fm;
}

Image8 to_image(const LabelMap& labels) {
  Image8 out{labels.width, labels.height, 1, {}};
  out.pixels.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int v = labels.values[i];
    if (v < 0 || v > 255) {
      throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(v) + " does not fit a byte");
    }
    out.pixels[i] = static_cast<std::uint8_t>(v);
  }
  return out;
}

LabelMap to_label_map(const Image8& image) {
  if (image.channels != 1) throw Error(ErrorCode::InvalidArgument, "label PNGs are single-channel");
  LabelMap out(image.height, image.width);
  std::copy(image.pixels.begin(), image.pixels.end(), out.values.begin());
  return out;
}

void quantize(warp::FeatureMap& fm) {
  for (double& v : fm.values) v = static_cast<double>(to_byte(v)) / 255.0;
}

}  // namespace ptseg::io
