#include "mvs/image_io.hpp"

#include "mvs/error.hpp"

#include <png.h>
// jpeglib.h expects FILE and size_t to be declared first.
#include <cstdio>
#include <jpeglib.h>

#include <csetjmp>
#include <cmath>
#include <fstream>
#include <memory>
#include <vector>

namespace mvs {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode, ErrorKind kind) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(kind, "cannot open " + path.string());
  return f;
}

bool has_png_signature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

Image read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb", ErrorKind::UnreadableImage);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::UnreadableImage, "libpng init failed for " + path.string());
  }
  std::vector<unsigned char> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::UnreadableImage, "corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const auto row_bytes = png_get_rowbytes(png, info);
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::UnreadableImage, "unsupported channel layout in " + path.string());
  }
  buffer.resize(row_bytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image image(height, width, 0.0f, depth == 16 ? 65535.0f : 255.0f);
  for (png_uint_32 y = 0; y < height; ++y) {
    const unsigned char* row = rows[y];
    for (png_uint_32 x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        if (depth == 16) {
          const std::size_t i = (x * 3 + c) * 2;
          image(c, y, x) = float((row[i] << 8) | row[i + 1]);
        } else {
          image(c, y, x) = float(row[x * 3 + c]);
        }
      }
    }
  }
  return image;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
  auto file = open_file(path, "rb", ErrorKind::UnreadableImage);
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<unsigned char> pixels;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorKind::UnreadableImage, "corrupt JPEG " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const auto width = cinfo.output_width, height = cinfo.output_height;
  const auto stride = std::size_t(width) * cinfo.output_components;
  pixels.resize(stride * height);
  while (cinfo.output_scanline < height) {
    JSAMPROW row = pixels.data() + std::size_t(cinfo.output_scanline) * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);

  Image image(height, width, 0.0f, 255.0f);
  for (JDIMENSION y = 0; y < height; ++y)
    for (JDIMENSION x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) image(c, y, x) = float(pixels[y * stride + x * 3 + c]);
  return image;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::UnreadableImage, "no such image " + path.string());
  return has_png_signature(path) ? read_png(path) : read_jpeg(path);
}

void write_png(const std::filesystem::path& path, const Image& image, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw Error(ErrorKind::InvalidArgument, "bit depth must be 8 or 16");
  auto file = open_file(path, "wb", ErrorKind::IOFailure);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::IOFailure, "libpng init failed for " + path.string());
  }
  const auto width = static_cast<png_uint_32>(image.width());
  const auto height = static_cast<png_uint_32>(image.height());
  const std::size_t bytes = bit_depth / 8;
  std::vector<unsigned char> row(std::size_t(width) * 3 * bytes);
  const double scale = (bit_depth == 16 ? 65535.0 : 255.0) / double(image.value_max);

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::IOFailure, "failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < height; ++y) {
    for (png_uint_32 x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(std::round(double(image(c, y, x)) * scale), 0.0, bytes == 2 ? 65535.0 : 255.0);
        const auto q = static_cast<unsigned>(v);
        const std::size_t i = (std::size_t(x) * 3 + c) * bytes;
        if (bytes == 2) {
          row[i] = static_cast<unsigned char>(q >> 8);
          row[i + 1] = static_cast<unsigned char>(q & 0xff);
        } else {
          row[i] = static_cast<unsigned char>(q);
        }
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw Error(ErrorKind::IOFailure, "failed flushing " + path.string());
}

}  // namespace mvs
