#include "tsdl/datasets.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <random>

namespace tsdl {

namespace {

constexpr double kPi = 3.14159265358979323846;

Matrix one_hot_bits(const std::vector<int>& bits) {
  Matrix m(2, int(bits.size()));
  for (std::size_t i = 0; i < bits.size(); ++i) m(bits[i] ? 1 : 0, int(i)) = 1.0;
  return m;
}

}  // namespace

TwoSpirals gen_two_spirals() {
  auto fill = [](Matrix& x, Matrix& y, int col, double angle, double radius, int cls) {
    const double px = radius * std::sin(angle) / 6.5;
    const double py = radius * std::cos(angle) / 6.5;
    const double sign = cls == 0 ? 1.0 : -1.0;
    x(0, col) = sign * px;
    x(1, col) = sign * py;
    y(cls, col) = 1.0;
  };

  TwoSpirals out;
  out.train.inputs = Matrix(2, 194);
  out.train.labels = Matrix(2, 194);
  for (int i = 0; i <= 96; ++i) {
    const double angle = i * kPi / 16.0;
    const double radius = 6.5 * (104.0 - i) / 104.0;
    fill(out.train.inputs, out.train.labels, i, angle, radius, 0);
    fill(out.train.inputs, out.train.labels, 97 + i, angle, radius, 1);
  }
  out.test.inputs = Matrix(2, 192);
  out.test.labels = Matrix(2, 192);
  for (int i = 0; i < 96; ++i) {
    const double angle = i * kPi / 16.0 + kPi / 32.0;
    const double radius = 6.5 * (104.0 - (i + 0.5)) / 104.0;
    fill(out.test.inputs, out.test.labels, i, angle, radius, 0);
    fill(out.test.inputs, out.test.labels, 96 + i, angle, radius, 1);
  }
  return out;
}

SequenceBatch gen_delay_bitstream(int delay, int count, int len, std::uint64_t seed) {
  if (delay < 0) throw std::invalid_argument("gen_delay_bitstream: delay must be >= 0");
  if (len <= delay) throw std::invalid_argument("gen_delay_bitstream: len must exceed delay");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<std::vector<int>> bits(count);
  for (auto& seq : bits) {
    seq.resize(len);
    for (int& b : seq) b = coin(rng);
  }

  SequenceBatch out;
  for (int t = 0; t < len; ++t) {
    Matrix x(1, count);
    std::vector<int> label(std::size_t(count), 0);
    for (int s = 0; s < count; ++s) {
      x(0, s) = bits[s][t];
      if (t >= delay) label[s] = bits[s][t - delay];
    }
    out.inputs.push_back(std::move(x));
    out.labels.push_back(one_hot_bits(label));
    out.mask.push_back(t >= delay ? 1 : 0);
  }
  return out;
}

SequenceBatch gen_delay_adder(int delay, int count, int len, std::uint64_t seed) {
  if (delay < 0) throw std::invalid_argument("gen_delay_adder: delay must be >= 0");
  if (len <= delay) throw std::invalid_argument("gen_delay_adder: len must exceed delay");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<std::vector<int>> bits(count);
  std::vector<std::vector<int>> sums(count);
  for (int s = 0; s < count; ++s) {
    bits[s].resize(len);
    sums[s].assign(len, 0);
    for (int& b : bits[s]) b = coin(rng);
    int carry = 0;
    for (int t = delay; t < len; ++t) {
      const int total = bits[s][t] + bits[s][t - delay] + carry;
      sums[s][t] = total & 1;
      carry = total >> 1;
    }
  }

  SequenceBatch out;
  for (int t = 0; t < len; ++t) {
    Matrix x(1, count);
    std::vector<int> label(std::size_t(count), 0);
    for (int s = 0; s < count; ++s) {
      x(0, s) = bits[s][t];
      label[s] = sums[s][t];
    }
    out.inputs.push_back(std::move(x));
    out.labels.push_back(one_hot_bits(label));
    out.mask.push_back(t >= delay ? 1 : 0);
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::FILE* f, const std::string& path) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4)
    throw IdxError("truncated IDX file: " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

LabeledBatch load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::unique_ptr<std::FILE, FileCloser> img(std::fopen(images_path.c_str(), "rb"));
  if (!img) throw IdxError("cannot open IDX file: " + images_path);
  if (read_be32(img.get(), images_path) != 0x00000803u)
    throw IdxError("bad magic in image IDX file: " + images_path);
  const std::uint32_t n = read_be32(img.get(), images_path);
  const std::uint32_t rows = read_be32(img.get(), images_path);
  const std::uint32_t cols = read_be32(img.get(), images_path);

  std::unique_ptr<std::FILE, FileCloser> lab(std::fopen(labels_path.c_str(), "rb"));
  if (!lab) throw IdxError("cannot open IDX file: " + labels_path);
  if (read_be32(lab.get(), labels_path) != 0x00000801u)
    throw IdxError("bad magic in label IDX file: " + labels_path);
  const std::uint32_t n_labels = read_be32(lab.get(), labels_path);
  if (n_labels != n)
    throw IdxError("count mismatch between IDX files: " + std::to_string(n) + " images vs " +
                   std::to_string(n_labels) + " labels");

  const std::size_t pixels = std::size_t(rows) * cols;
  std::vector<unsigned char> buf(pixels);
  LabeledBatch batch;
  batch.inputs = Matrix(int(pixels), int(n));
  batch.labels = Matrix(10, int(n));
  for (std::uint32_t i = 0; i < n; ++i) {
    if (std::fread(buf.data(), 1, pixels, img.get()) != pixels)
      throw IdxError("truncated IDX file: " + images_path);
    for (std::size_t p = 0; p < pixels; ++p) batch.inputs(int(p), int(i)) = buf[p] / 255.0;
    unsigned char digit;
    if (std::fread(&digit, 1, 1, lab.get()) != 1)
      throw IdxError("truncated IDX file: " + labels_path);
    if (digit > 9)
      throw IdxError("label out of range in IDX file: " + labels_path);
    batch.labels(digit, int(i)) = 1.0;
  }
  return batch;
}

}  // namespace tsdl
