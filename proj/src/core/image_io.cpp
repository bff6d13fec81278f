#include "core/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace efcn {

ImageU8 ImageU8::filled(int h, int w, int channels, std::uint8_t value) {
  if (h < 1 || w < 1 || (channels != 1 && channels != 3))
    throw ShapeError(cat("ImageU8: bad raster ", h, "x", w, "x", channels));
  ImageU8 img;
  img.h = h;
  img.w = w;
  img.channels = channels;
  img.pixels.assign(size_t(h) * w * channels, value);
  return img;
}

namespace {

// next token after whitespace and '#' comments
std::string pnm_token(std::istream& in, const std::string& path) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF) throw FormatError(cat(path, ": truncated header"));
  std::string tok;
  while (ch != EOF && !std::isspace(ch)) {
    tok.push_back(char(ch));
    ch = in.get();
  }
  return tok;
}

int pnm_int(std::istream& in, const std::string& path, const char* field) {
  const std::string tok = pnm_token(in, path);
  try {
    size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw FormatError(cat(path, ": bad ", field, " '", tok, "'"));
  }
}

}  // namespace

ImageU8 read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat(path, ": cannot open for reading"));
  const std::string magic = pnm_token(in, path);
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw FormatError(cat(path, ": expected P5 or P6, got '", magic, "'"));

  const int w = pnm_int(in, path, "width");
  const int h = pnm_int(in, path, "height");
  const int maxval = pnm_int(in, path, "maxval");
  if (w < 1 || h < 1) throw FormatError(cat(path, ": bad size ", w, "x", h));
  if (maxval != 255)
    throw FormatError(cat(path, ": only maxval 255 is supported, got ", maxval));

  ImageU8 img = ImageU8::filled(h, w, channels, 0);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          std::streamsize(img.pixels.size()));
  if (in.gcount() != std::streamsize(img.pixels.size()))
    throw FormatError(cat(path, ": truncated pixel data, expected ",
                          img.pixels.size(), " bytes, got ", in.gcount()));
  return img;
}

void write_image(const ImageU8& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw ShapeError(cat("write_image: unsupported channel count ", img.channels));
  if (img.pixels.size() != size_t(img.h) * img.w * img.channels)
    throw ShapeError("write_image: pixel buffer does not match the header");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(cat(path, ": cannot open for writing"));
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            std::streamsize(img.pixels.size()));
  if (!out) throw IoError(cat(path, ": write failed"));
}

Tensor<float> image_to_tensor(const ImageU8& img) {
  Tensor<float> t = Tensor<float>::zeros({1, img.channels, img.h, img.w});
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        t.at(0, c, y, x) = float(img.at(y, x, c)) / 255.0f;
  return t;
}

ImageU8 tensor_to_image(const Tensor<float>& t) {
  const Shape& s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3))
    throw ShapeError(cat("tensor_to_image: expected (1,1|3,H,W), got ", s.str()));
  ImageU8 img = ImageU8::filled(s.h, s.w, s.c, 0);
  for (int c = 0; c < s.c; ++c)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const float v = std::clamp(t.at(0, c, y, x), 0.0f, 1.0f);
        img.at(y, x, c) = std::uint8_t(std::lround(v * 255.0));
      }
  return img;
}

ImageU8 mask_to_image(const LabelMap& m, int batch_index) {
  if (batch_index < 0 || batch_index >= m.n)
    throw ShapeError(cat("mask_to_image: batch index ", batch_index, " of ", m.n));
  ImageU8 img = ImageU8::filled(m.h, m.w, 1, 0);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      const int v = m.at(batch_index, y, x);
      if (v < 0 || v > 255)
        throw ValidationError(cat("mask_to_image: label ", v, " does not fit a byte"));
      img.at(y, x, 0) = std::uint8_t(v);
    }
  return img;
}

}  // namespace efcn
