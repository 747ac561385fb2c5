#include "maskfuse/png_io.h"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "maskfuse/errors.h"

namespace maskfuse {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<uint32_t> values;
};

// libpng's default handlers print to stderr; keep the message for the
// exception instead.
struct PngErrorSink {
  char message[256] = {};
};

void OnPngError(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<PngErrorSink*>(png_get_error_ptr(png));
  std::snprintf(sink->message, sizeof sink->message, "%s", msg);
  png_longjmp(png, 1);
}

void OnPngWarning(png_structp, png_const_charp) {}

// libpng reports errors through longjmp. Only trivially destructible locals
// live between setjmp and the libpng calls below.
bool ReadGrayPngRaw(std::FILE* fp, GrayImage* image, std::string* error) {
  PngErrorSink sink;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, OnPngError, OnPngWarning);
  if (png == nullptr) {
    *error = "png_create_read_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    *error = "png_create_info_struct failed";
    return false;
  }
  png_bytep* volatile rows = nullptr;  // volatile: modified after setjmp
  volatile png_bytep buffer = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    png_free(png, rows);
    png_free(png, buffer);
    png_destroy_read_struct(&png, &info, nullptr);
    *error = sink.message[0] != 0 ? sink.message : "corrupt PNG data";
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color_type != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    *error = "expected a single-channel grayscale PNG";
    return false;
  }
  if (width > static_cast<png_uint_32>(kMaxDimension) ||
      height > static_cast<png_uint_32>(kMaxDimension)) {
    png_destroy_read_struct(&png, &info, nullptr);
    *error = "image larger than supported dimensions";
    return false;
  }
  if (depth < 8) png_set_packing(png);
  if (depth == 16) png_set_swap(png);  // native little-endian uint16 rows
  png_read_update_info(png, info);
  const size_t rowbytes = png_get_rowbytes(png, info);
  buffer = static_cast<png_bytep>(png_malloc(png, rowbytes * height));
  rows = static_cast<png_bytep*>(png_malloc(png, sizeof(png_bytep) * height));
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = buffer + r * rowbytes;
  png_read_image(png, rows);
  png_read_end(png, nullptr);

  image->height = static_cast<int>(height);
  image->width = static_cast<int>(width);
  image->values.resize(static_cast<size_t>(height) * width);
  for (png_uint_32 r = 0; r < height; ++r) {
    for (png_uint_32 c = 0; c < width; ++c) {
      uint32_t v = 0;
      if (depth == 16) {
        uint16_t s = 0;
        std::memcpy(&s, rows[r] + 2 * c, 2);
        v = s;
      } else {
        v = rows[r][c];
      }
      image->values[static_cast<size_t>(r) * width + c] = v;
    }
  }
  png_free(png, rows);
  png_free(png, buffer);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool WriteGrayPngRaw(std::FILE* fp, int height, int width, int depth,
                     const std::vector<uint8_t>& packed, std::string* error) {
  PngErrorSink sink;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, OnPngError, OnPngWarning);
  if (png == nullptr) {
    *error = "png_create_write_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    *error = "png_create_info_struct failed";
    return false;
  }
  png_bytep* volatile rows = nullptr;  // volatile: modified after setjmp
  if (setjmp(png_jmpbuf(png))) {
    png_free(png, rows);
    png_destroy_write_struct(&png, &info);
    *error = sink.message[0] != 0 ? sink.message : "PNG encoding failed";
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const size_t rowbytes = static_cast<size_t>(width) * (depth / 8);
  rows = static_cast<png_bytep*>(png_malloc(png, sizeof(png_bytep) * std::max(height, 1)));
  for (int r = 0; r < height; ++r) {
    rows[r] = const_cast<png_bytep>(packed.data()) + static_cast<size_t>(r) * rowbytes;
  }
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  png_free(png, rows);
  png_destroy_write_struct(&png, &info);
  return true;
}

GrayImage ReadGray(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  GrayImage image;
  std::string error;
  if (!ReadGrayPngRaw(fp.get(), &image, &error)) throw FormatError(path.string() + ": " + error);
  return image;
}

void WriteGray(const std::filesystem::path& path, int height, int width, int depth,
               const std::vector<uint8_t>& packed) {
  if (height < 1 || width < 1) {
    throw FormatError(path.string() + ": PNG images need at least one pixel");
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  std::string error;
  if (!WriteGrayPngRaw(fp.get(), height, width, depth, packed, &error)) {
    throw IoError(path.string() + ": " + error);
  }
}

}  // namespace

LabelMap ReadLabelMapPng(const std::filesystem::path& path) {
  const GrayImage image = ReadGray(path);
  LabelMap map(image.height, image.width);
  std::copy(image.values.begin(), image.values.end(), map.data().begin());
  return map;
}

void WriteLabelMapPng(const std::filesystem::path& path, const LabelMap& map) {
  std::vector<uint8_t> packed(map.data().size() * 2);
  size_t i = 0;
  for (uint32_t v : map.data()) {
    if (v > kMaxInstances) {
      throw BoundsError(path.string() + ": label " + std::to_string(v) +
                        " does not fit the 16-bit label format");
    }
    packed[i++] = static_cast<uint8_t>(v >> 8);  // PNG stores big-endian samples
    packed[i++] = static_cast<uint8_t>(v & 0xff);
  }
  WriteGray(path, map.height(), map.width(), 16, packed);
}

BinaryMask ReadBinaryPng(const std::filesystem::path& path) {
  const GrayImage image = ReadGray(path);
  BinaryMask mask(image.height, image.width);
  auto dst = mask.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = image.values[i] != 0 ? 1 : 0;
  return mask;
}

void WriteBinaryPng(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<uint8_t> packed(mask.data().size());
  for (size_t i = 0; i < packed.size(); ++i) packed[i] = mask.data()[i] ? 255 : 0;
  WriteGray(path, mask.height(), mask.width(), 8, packed);
}

}  // namespace maskfuse
