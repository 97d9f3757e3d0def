#include "fogseg/imageio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fogseg/common.hpp"

namespace fs = std::filesystem;

namespace fogseg {

uint8_t quantize8(float v) {
  if (!(v >= 0.0f)) v = 0.0f;
  if (v > 1.0f) v = 1.0f;
  return uint8_t(std::lround(v * 255.0f));
}

Tensorf quantize_raster(const Tensorf& img) {
  Tensorf out(img.dims(), 0.0f);
  float* od = out.mutable_data();
  const float* id = img.data();
  for (int64_t i = 0; i < img.numel(); ++i) od[i] = quantize8(id[i]) / 255.0f;
  return out;
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write file: " + tmp);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw DataError("short write: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot finalize file: " + path + " (" + ec.message() + ")");
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

namespace {

// Skips whitespace and '#' comment lines between netpbm header tokens.
const char* pnm_token(const char* p, const char* end, std::string& out) {
  while (p < end) {
    if (*p == '#') {
      while (p < end && *p != '\n') ++p;
    } else if (std::isspace(uint8_t(*p))) {
      ++p;
    } else {
      break;
    }
  }
  out.clear();
  while (p < end && !std::isspace(uint8_t(*p))) out.push_back(*p++);
  if (out.empty()) throw DataError("truncated netpbm header");
  return p;
}

struct PnmHeader {
  int w = 0, h = 0, maxval = 0;
  const char* payload = nullptr;
};

PnmHeader parse_pnm(const std::string& bytes, const char* magic, const std::string& path) {
  const char* p = bytes.data();
  const char* end = p + bytes.size();
  std::string tok;
  p = pnm_token(p, end, tok);
  if (tok != magic) throw DataError("bad magic in " + path + " (want " + magic + ")");
  PnmHeader h;
  p = pnm_token(p, end, tok);
  h.w = std::stoi(tok);
  p = pnm_token(p, end, tok);
  h.h = std::stoi(tok);
  p = pnm_token(p, end, tok);
  h.maxval = std::stoi(tok);
  if (h.w <= 0 || h.h <= 0 || h.maxval != 255)
    throw DataError("unsupported netpbm geometry in " + path);
  if (p >= end || !std::isspace(uint8_t(*p))) throw DataError("bad header end in " + path);
  h.payload = p + 1;
  return h;
}

}  // namespace

void write_ppm(const std::string& path, const Tensorf& img) {
  if (img.ndim() != 3 || img.dim(0) != 3) throw DimensionError("write_ppm: raster must be {3,H,W}");
  const int H = img.dim(1), W = img.dim(2);
  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + size_t(3) * H * W);
  const float* d = img.data();
  const int64_t plane = int64_t(H) * W;
  for (int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) out.push_back(char(quantize8(d[c * plane + p])));
  atomic_write_file(path, out);
}

Tensorf read_ppm(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  const PnmHeader h = parse_pnm(bytes, "P6", path);
  const int64_t plane = int64_t(h.h) * h.w;
  if (bytes.data() + bytes.size() - h.payload < 3 * plane)
    throw DataError("truncated pixel data in " + path);
  Tensorf img({3, h.h, h.w}, 0.0f);
  float* d = img.mutable_data();
  const uint8_t* src = reinterpret_cast<const uint8_t*>(h.payload);
  for (int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) d[c * plane + p] = src[p * 3 + c] / 255.0f;
  return img;
}

void write_pgm(const std::string& path, const Tensori& labels) {
  if (labels.ndim() != 2) throw DimensionError("write_pgm: label map must be {H,W}");
  const int H = labels.dim(0), W = labels.dim(1);
  std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + size_t(H) * W);
  const int32_t* d = labels.data();
  for (int64_t i = 0; i < int64_t(H) * W; ++i) {
    if (d[i] < 0 || d[i] > 255) throw RangeError("write_pgm: label out of 8-bit range");
    out.push_back(char(uint8_t(d[i])));
  }
  atomic_write_file(path, out);
}

Tensori read_pgm(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  const PnmHeader h = parse_pnm(bytes, "P5", path);
  const int64_t n = int64_t(h.h) * h.w;
  if (bytes.data() + bytes.size() - h.payload < n)
    throw DataError("truncated pixel data in " + path);
  Tensori labels({h.h, h.w}, 0);
  int32_t* d = labels.mutable_data();
  const uint8_t* src = reinterpret_cast<const uint8_t*>(h.payload);
  for (int64_t i = 0; i < n; ++i) d[i] = src[i];
  return labels;
}

void write_pfm(const std::string& path, const Tensorf& depth) {
  if (depth.ndim() != 2) throw DimensionError("write_pfm: depth map must be {H,W}");
  static_assert(std::endian::native == std::endian::little);
  const int H = depth.dim(0), W = depth.dim(1);
  std::string out = "Pf\n" + std::to_string(W) + " " + std::to_string(H) + "\n-1.0\n";
  out.reserve(out.size() + size_t(4) * H * W);
  const float* d = depth.data();
  for (int y = H - 1; y >= 0; --y) {
    const char* row = reinterpret_cast<const char*>(d + int64_t(y) * W);
    out.append(row, size_t(4) * W);
  }
  atomic_write_file(path, out);
}

Tensorf read_pfm(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  const char* p = bytes.data();
  const char* end = p + bytes.size();
  std::string tok;
  p = pnm_token(p, end, tok);
  if (tok != "Pf") throw DataError("bad magic in " + path + " (want Pf)");
  p = pnm_token(p, end, tok);
  const int W = std::stoi(tok);
  p = pnm_token(p, end, tok);
  const int H = std::stoi(tok);
  p = pnm_token(p, end, tok);
  const double scale = std::stod(tok);
  if (W <= 0 || H <= 0 || scale >= 0) throw DataError("unsupported pfm geometry in " + path);
  if (p >= end || !std::isspace(uint8_t(*p))) throw DataError("bad header end in " + path);
  ++p;
  if (end - p < int64_t(4) * H * W) throw DataError("truncated depth data in " + path);
  Tensorf depth({H, W}, 0.0f);
  float* d = depth.mutable_data();
  for (int y = H - 1; y >= 0; --y) {
    std::memcpy(d + int64_t(y) * W, p, size_t(4) * W);
    p += size_t(4) * W;
  }
  return depth;
}

}  // namespace fogseg
