#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fedctx/model.hpp"

namespace fedctx {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw ParseError(path + ": truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

inline std::vector<unsigned char> read_bytes(std::ifstream& in, std::size_t n,
                                             const std::string& path,
                                             const char* what) {
  std::vector<unsigned char> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(n));
  if (std::size_t(in.gcount()) != n)
    throw ParseError(path + ": truncated " + what + " (expected " +
                     std::to_string(n) + " bytes, got " +
                     std::to_string(in.gcount()) + ")");
  return bytes;
}

}  // namespace detail

// Loads a big-endian IDX image/label pair (the MNIST distribution format).
// Pixels are scaled from bytes to [0, 1].
inline LabeledDataset load_idx(const std::string& images_path,
                               const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw ParseError(images_path + ": cannot open file");
  const std::uint32_t img_magic = detail::read_be32(img, images_path);
  if (img_magic != kIdxImagesMagic)
    throw ParseError(images_path + ": bad magic number " + detail::hex32(img_magic) +
                     " (expected " + detail::hex32(kIdxImagesMagic) + ")");
  const std::uint32_t count = detail::read_be32(img, images_path);
  const std::uint32_t rows = detail::read_be32(img, images_path);
  const std::uint32_t cols = detail::read_be32(img, images_path);
  const std::size_t pixel_count = std::size_t(count) * rows * cols;
  const auto pixels = detail::read_bytes(img, pixel_count, images_path, "image data");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw ParseError(labels_path + ": cannot open file");
  const std::uint32_t lab_magic = detail::read_be32(lab, labels_path);
  if (lab_magic != kIdxLabelsMagic)
    throw ParseError(labels_path + ": bad magic number " + detail::hex32(lab_magic) +
                     " (expected " + detail::hex32(kIdxLabelsMagic) + ")");
  const std::uint32_t lab_count = detail::read_be32(lab, labels_path);
  if (lab_count != count)
    throw ParseError(labels_path + ": label count " + std::to_string(lab_count) +
                     " does not match image count " + std::to_string(count) +
                     " in " + images_path);
  const auto label_bytes = detail::read_bytes(lab, lab_count, labels_path, "label data");

  LabeledDataset data;
  data.features.resize(Eigen::Index(count), Eigen::Index(rows) * cols);
  data.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    for (std::uint32_t j = 0; j < rows * cols; ++j)
      data.features(i, j) = double(pixels[std::size_t(i) * rows * cols + j]) / 255.0;
    data.labels[i] = int(label_bytes[i]);
  }
  return data;
}

}  // namespace fedctx
