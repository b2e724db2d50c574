#pragma once

#include "tsdl/activation.hpp"
#include "tsdl/ffnn.hpp"
#include "tsdl/matrix.hpp"
#include "tsdl/tape.hpp"

#include <cstdint>
#include <vector>

namespace tsdl {

// Rank-4 tensor [batch, h, w, channels] carried as a channels x (batch*h*w)
// matrix, column index (b*h + y)*w + x. Convolution sums keep exactly this
// layout, which makes the post-multiply reshape a no-op.
struct Tensor4 {
  int batch = 0;
  int h = 0;
  int w = 0;
  int channels = 0;
  Matrix m;
  void validate() const;
};

// One convolutional block: stride-1 "same" convolution, leaky-rectifier
// activation, then optional k x k max-pooling at stride k (pool_k = 1 skips).
struct ConvLayerSpec {
  int kernel_h = 3;
  int kernel_w = 3;
  int in_channels = 1;
  int out_channels = 1;
  int pool_k = 1;
  void validate() const;
};

// Patches with a leading bias row of ones: (1 + kh*kw*in_channels) rows,
// batch*out_h*out_w columns. Rows after the bias are ordered kernel-row-major
// with the channel fastest, matching the kernel flattening.
struct PatchMatrix {
  int batch = 0;
  int out_h = 0;
  int out_w = 0;
  Matrix m;
};

PatchMatrix extract_patches(const Tensor4& input, const ConvLayerSpec& spec);

// S = w * patches reshaped to rank 4 with the activation applied. w has one
// row per output channel; bias column first.
Tensor4 conv_forward(const ConvLayerSpec& spec, const Matrix& w, const PatchMatrix& patches);

// Least-squares kernel achieving the targets: w = t * pinv(patches).
Matrix conv_targets_to_weights(const Matrix& t, const PatchMatrix& patches, double lambda);

Tensor4 maxpool(const Tensor4& input, int k);

// One column per image, row index (y*w + x)*channels + ch.
Matrix flatten(const Tensor4& input);

// ----- whole-network plumbing -----

// Conv blocks followed by a dense head; hidden dense layers use the leaky
// rectifier, the last dense width is the linear output (softmax in the loss).
struct CnnSpec {
  int input_h = 0;
  int input_w = 0;
  int input_channels = 0;
  std::vector<ConvLayerSpec> conv;
  std::vector<int> dense;
  OutputHead output_head = OutputHead::softmax_xent;

  struct StageDims {
    int in_h, in_w, in_c;      // entering the conv layer
    int out_h, out_w, out_c;   // after pooling
  };
  std::vector<StageDims> stage_dims() const;
  int flatten_width() const;
  void validate() const;
};

struct CnnWeights {
  std::vector<Matrix> conv_w;   // out_channels x (1 + kh*kw*in_channels)
  std::vector<Matrix> dense_w;  // width x (1 + prev_width)
};

// Conv targets have one column per solve-batch patch; dense targets one per
// solve-batch image. The solve input batch is fixed during training.
struct CnnTargetParams {
  std::vector<Matrix> conv_t;
  std::vector<Matrix> dense_t;
  Tensor4 xbar;
};

Matrix cnn_forward_logits(const CnnSpec& spec, const CnnWeights& w, const Tensor4& x);

struct CnnMapTrace {
  std::vector<Matrix> conv_s;   // achieved convolution sums over the solve batch
  std::vector<Matrix> dense_s;  // achieved dense sums
};

// Sequential solve: each layer's kernel is the least-squares fit of its
// targets against the achieved activations of the previous layers.
std::pair<CnnWeights, CnnMapTrace> cnn_targets_to_weights_scu(const CnnSpec& spec,
                                                              const CnnTargetParams& t,
                                                              double lambda);

CnnTargetParams cnn_init_targets(const CnnSpec& spec, Tensor4 xbar, double sigma,
                                 std::uint64_t seed);
CnnTargetParams cnn_project_targets(const CnnSpec& spec, const CnnTargetParams& t,
                                    double lambda);
CnnWeights cnn_init_weights(const CnnSpec& spec, std::uint64_t seed);

// ----- tape builders -----

struct CnnTapeMapping {
  std::vector<Var> conv_targets;
  std::vector<Var> dense_targets;
  std::vector<Var> conv_weights;
  std::vector<Var> dense_weights;
};

// scu carries achieved activations forward; otherwise the optimistic variant
// carries the activated targets. Optional dropout masks (one per conv layer,
// shaped like the activation matrix) are applied after the activation and
// before pooling.
CnnTapeMapping tape_cnn_targets_to_weights(Tape& tape, const CnnSpec& spec,
                                           const CnnTargetParams& t, double lambda, bool scu,
                                           const std::vector<Matrix>* dropout = nullptr);

Var tape_cnn_forward(Tape& tape, const CnnSpec& spec, const std::vector<Var>& conv_weights,
                     const std::vector<Var>& dense_weights, const Tensor4& x,
                     const std::vector<Matrix>* dropout = nullptr);

}  // namespace tsdl
