#include "ksac/pnm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ksac/errors.hpp"

namespace ksac {

namespace {

void write_header(std::ofstream& os, const char* magic, std::int64_t h, std::int64_t w) {
  os << magic << '\n' << w << ' ' << h << "\n255\n";
}

struct Header {
  std::string magic;
  std::int64_t width = 0;
  std::int64_t height = 0;
};

Header read_header(std::ifstream& is, const std::string& path) {
  Header h;
  int maxval = 0;
  auto next_token = [&]() {
    std::string tok;
    while (is >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return tok;
    }
    throw IoError(path + ": truncated header");
  };
  h.magic = next_token();
  h.width = std::stoll(next_token());
  h.height = std::stoll(next_token());
  maxval = std::stoi(next_token());
  is.get();
  if (maxval != 255 || h.width < 1 || h.height < 1) throw IoError(path + ": unsupported header");
  return h;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image, std::int64_t n) {
  const Shape s = image.shape();
  if (s.c != 3) throw ShapeError("write_ppm: expected 3 channels, got " + s.str());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  write_header(os, "P6", s.h, s.w);
  std::vector<unsigned char> row(static_cast<std::size_t>(s.w * 3));
  const auto data = image.data();
  for (std::int64_t y = 0; y < s.h; ++y) {
    for (std::int64_t x = 0; x < s.w; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(data[static_cast<std::size_t>(((n * 3 + c) * s.h + y) * s.w + x)]), 0.0, 1.0);
        row[static_cast<std::size_t>(x * 3 + c)] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  const Header h = read_header(is, path);
  if (h.magic != "P6") throw IoError(path + ": not a binary PPM");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h.width * h.height * 3));
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw IoError(path + ": truncated pixel data");
  }
  Tensor out = Tensor::zeros({1, 3, h.height, h.width});
  auto dst = out.mutable_data();
  const std::int64_t plane = h.height * h.width;
  for (std::int64_t p = 0; p < plane; ++p) {
    for (std::int64_t c = 0; c < 3; ++c) {
      dst[static_cast<std::size_t>(c * plane + p)] = static_cast<Real>(bytes[static_cast<std::size_t>(p * 3 + c)]) / Real(255);
    }
  }
  return out;
}

void write_pgm(const std::string& path, std::int64_t height, std::int64_t width,
               const std::vector<std::uint8_t>& pixels) {
  if (static_cast<std::int64_t>(pixels.size()) != height * width) throw ShapeError("write_pgm: size mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  write_header(os, "P5", height, width);
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw IoError("write failed: " + path);
}

void write_pgm(const std::string& path, const LabelMap& labels, std::int64_t n) {
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(labels.h * labels.w));
  for (std::int64_t y = 0; y < labels.h; ++y) {
    for (std::int64_t x = 0; x < labels.w; ++x) {
      const std::int32_t v = labels.at(n, y, x);
      if (v < 0 || v > 255) throw ContractError("write_pgm: label " + std::to_string(v) + " does not fit a byte");
      pixels[static_cast<std::size_t>(y * labels.w + x)] = static_cast<std::uint8_t>(v);
    }
  }
  write_pgm(path, labels.h, labels.w, pixels);
}

LabelMap read_pgm_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  const Header h = read_header(is, path);
  if (h.magic != "P5") throw IoError(path + ": not a binary PGM");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h.width * h.height));
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw IoError(path + ": truncated pixel data");
  }
  LabelMap out(1, h.height, h.width);
  std::copy(bytes.begin(), bytes.end(), out.values.begin());
  return out;
}

}  // namespace ksac
