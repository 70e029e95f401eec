#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spicalib/error.hpp"
#include "spicalib/image.hpp"

namespace spicalib {

namespace detail {

inline void io_fail(const std::string& path, const char* what) {
  throw Error(ErrorKind::IoError, path + ": " + what);
}

inline float byteswap_f32(float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  u = ((u & 0xff000000u) >> 24) | ((u & 0x00ff0000u) >> 8) | ((u & 0x0000ff00u) << 8) |
      ((u & 0x000000ffu) << 24);
  std::memcpy(&v, &u, 4);
  return v;
}

// Reads one whitespace-delimited token, skipping PNM-style comments.
inline std::string pnm_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = in.get();
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

struct PfmHeader {
  int width = 0;
  int height = 0;
  int channels = 1;
  bool little_endian = true;
};

inline PfmHeader read_pfm_header(std::istream& in, const std::string& path) {
  PfmHeader h;
  std::string magic = pnm_token(in);
  if (magic == "Pf")
    h.channels = 1;
  else if (magic == "PF")
    h.channels = 3;
  else
    io_fail(path, "not a PFM file");
  try {
    h.width = std::stoi(pnm_token(in));
    h.height = std::stoi(pnm_token(in));
    h.little_endian = std::stod(pnm_token(in)) < 0.0;
  } catch (const std::exception&) {
    io_fail(path, "malformed PFM header");
  }
  if (h.width <= 0 || h.height <= 0) io_fail(path, "bad PFM dimensions");
  return h;
}

// PFM scanlines are stored bottom-to-top.
inline void read_pfm_rows(std::istream& in, const PfmHeader& h, const std::string& path,
                          std::vector<float>& out) {
  size_t row_floats = static_cast<size_t>(h.width) * h.channels;
  out.resize(row_floats * h.height);
  std::vector<float> row(row_floats);
  for (int y = h.height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row_floats * 4));
    if (!in) io_fail(path, "truncated PFM data");
    if (h.little_endian != (std::endian::native == std::endian::little))
      for (float& v : row) v = byteswap_f32(v);
    std::memcpy(out.data() + static_cast<size_t>(y) * row_floats, row.data(), row_floats * 4);
  }
}

inline void write_pfm_rows(std::ostream& out, int width, int height, int channels,
                           const std::vector<float>& data) {
  size_t row_floats = static_cast<size_t>(width) * channels;
  std::vector<float> row(row_floats);
  for (int y = height - 1; y >= 0; --y) {
    std::memcpy(row.data(), data.data() + static_cast<size_t>(y) * row_floats, row_floats * 4);
    if constexpr (std::endian::native != std::endian::little)
      for (float& v : row) v = byteswap_f32(v);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row_floats * 4));
  }
}

}  // namespace detail

inline void write_pfm(const std::string& path, const GridF& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) detail::io_fail(path, "cannot open for writing");
  out << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
  std::vector<float> data(img.size());
  for (size_t i = 0; i < img.size(); ++i) data[i] = static_cast<float>(img.data[i]);
  detail::write_pfm_rows(out, img.width, img.height, 1, data);
  if (!out) detail::io_fail(path, "write failed");
}

inline GridF read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::io_fail(path, "cannot open");
  detail::PfmHeader h = detail::read_pfm_header(in, path);
  if (h.channels != 1) detail::io_fail(path, "expected grayscale PFM");
  std::vector<float> data;
  detail::read_pfm_rows(in, h, path, data);
  GridF img(h.width, h.height);
  for (size_t i = 0; i < img.size(); ++i) img.data[i] = data[i];
  return img;
}

inline void write_pfm_color(const std::string& path, const Vec3Grid& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) detail::io_fail(path, "cannot open for writing");
  out << "PF\n" << img.width << " " << img.height << "\n-1.0\n";
  std::vector<float> data(img.size() * 3);
  for (size_t i = 0; i < img.size(); ++i)
    for (int c = 0; c < 3; ++c) data[i * 3 + c] = static_cast<float>(img.data[i](c));
  detail::write_pfm_rows(out, img.width, img.height, 3, data);
  if (!out) detail::io_fail(path, "write failed");
}

inline Vec3Grid read_pfm_color(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::io_fail(path, "cannot open");
  detail::PfmHeader h = detail::read_pfm_header(in, path);
  if (h.channels != 3) detail::io_fail(path, "expected color PFM");
  std::vector<float> data;
  detail::read_pfm_rows(in, h, path, data);
  Vec3Grid img(h.width, h.height, Eigen::Vector3d::Zero());
  for (size_t i = 0; i < img.size(); ++i)
    img.data[i] = Eigen::Vector3d(data[i * 3], data[i * 3 + 1], data[i * 3 + 2]);
  return img;
}

// Validity masks ride in binary PGM: 0 invalid, 255 valid, top-to-bottom rows.
inline void write_pgm(const std::string& path, const Mask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) detail::io_fail(path, "cannot open for writing");
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(mask.data.data()),
            static_cast<std::streamsize>(mask.size()));
  if (!out) detail::io_fail(path, "write failed");
}

inline Mask read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::io_fail(path, "cannot open");
  if (detail::pnm_token(in) != "P5") detail::io_fail(path, "not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(detail::pnm_token(in));
    h = std::stoi(detail::pnm_token(in));
    maxval = std::stoi(detail::pnm_token(in));
  } catch (const std::exception&) {
    detail::io_fail(path, "malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) detail::io_fail(path, "unsupported PGM");
  Mask mask(w, h);
  in.read(reinterpret_cast<char*>(mask.data.data()), static_cast<std::streamsize>(mask.size()));
  if (!in) detail::io_fail(path, "truncated PGM data");
  return mask;
}

// ASCII point cloud with float x, y, z vertex properties, millimeters.
inline void write_ply(const std::string& path, const std::vector<Eigen::Vector3d>& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) detail::io_fail(path, "cannot open for writing");
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char line[96];
  for (const auto& p : points) {
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g\n", static_cast<float>(p.x()),
                  static_cast<float>(p.y()), static_cast<float>(p.z()));
    out << line;
  }
  if (!out) detail::io_fail(path, "write failed");
}

inline std::vector<Eigen::Vector3d> read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::io_fail(path, "cannot open");
  std::string line;
  if (!std::getline(in, line) || line != "ply") detail::io_fail(path, "not a PLY file");
  size_t count = 0;
  bool ascii = false;
  while (std::getline(in, line)) {
    if (line.rfind("format ascii", 0) == 0) ascii = true;
    if (line.rfind("element vertex ", 0) == 0) count = std::stoul(line.substr(15));
    if (line == "end_header") break;
  }
  if (!ascii) detail::io_fail(path, "expected ASCII PLY");
  std::vector<Eigen::Vector3d> points;
  points.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    double x, y, z;
    if (!(in >> x >> y >> z)) detail::io_fail(path, "truncated PLY data");
    points.emplace_back(x, y, z);
  }
  return points;
}

}  // namespace spicalib
