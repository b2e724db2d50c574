#pragma once

#include "tsdl/matrix.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tsdl {

struct LabeledBatch {
  Matrix inputs;  // features x n
  Matrix labels;  // classes x n, one-hot
};

// Per-step matrices for recurrent tasks. mask[t] == 0 excludes a step from the
// loss (delay tasks mask the first N steps, where the label is undefined).
struct SequenceBatch {
  std::vector<Matrix> inputs;
  std::vector<Matrix> labels;
  std::vector<int> mask;
  int steps() const { return int(inputs.size()); }
};

// Two interleaved spirals, three revolutions, 97 points each. Train points sit
// at angles i*pi/16 with radius 6.5*(104-i)/104; test points at the angular
// midpoints with interpolated radii. Coordinates are divided by 6.5 so inputs
// land in [-1, 1]. Class 0 is the first spiral, class 1 its point reflection.
struct TwoSpirals {
  LabeledBatch train;  // 194 points
  LabeledBatch test;   // 192 points
};
TwoSpirals gen_two_spirals();

// Random bit stream; the label at step t is the input bit from step t-N,
// one-hot over {0,1}. Streams default to length N+50.
SequenceBatch gen_delay_bitstream(int delay, int count, int len, std::uint64_t seed);
inline SequenceBatch gen_delay_bitstream(int delay, int count, std::uint64_t seed) {
  return gen_delay_bitstream(delay, count, delay + 50, seed);
}

// Little-endian binary addition of the stream and its N-delayed copy: the
// unmasked label bits are the sum bits of the two numbers whose i-th binary
// digits arrive at steps N+i and i, carry propagated forward in time.
SequenceBatch gen_delay_adder(int delay, int count, int len, std::uint64_t seed);

// IDX-format loader (big-endian; magic 0x803 for image files, 0x801 for label
// files). Pixels are scaled to [0,1]; labels become one-hot over 10 classes.
// Malformed files raise IdxError whose message names the failure: "bad magic",
// "truncated", or "count mismatch".
class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
LabeledBatch load_mnist_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace tsdl
