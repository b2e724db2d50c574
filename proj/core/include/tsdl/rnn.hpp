#pragma once

#include "tsdl/ffnn.hpp"
#include "tsdl/matrix.hpp"
#include "tsdl/tape.hpp"

#include <vector>

namespace tsdl {

// Recurrent architecture. Layer 0 is the bias pseudo-layer, layer 1 the input,
// layer 2 receives the previous step's context-layer activations (so its width
// equals the context layer's), layers 3..nL are computed; layers past the
// context layer are the exit layers. Layer 3 reads {bias, input, feedback},
// each later layer just its predecessor.
struct RnnSpec {
  std::vector<int> layer_widths;  // d1..d_nL, with d2 == d_contextLayer
  int context_layer = 3;
  Activation activation = Activation::tanh_fn;
  OutputHead output_head = OutputHead::softmax_xent;

  int num_layers() const { return int(layer_widths.size()); }
  int width(int j) const { return j == 0 ? 1 : layer_widths[j - 1]; }
  std::vector<int> feed_sources(int j) const;
  int stack_width(int j) const;
  void validate() const;

  // in-(hidden recurrent)-out, e.g. 1-7-2: context layer 3, one exit layer.
  static RnnSpec simple(int d_in, int d_hidden, int d_out);
};

// Learnable per-step targets for each computed layer, stored time-concatenated:
// slot j holds d_j x (batch*steps) with step-major column blocks. The solve
// input sequence is fixed for the lifetime of training and may differ from the
// training sequences in both batch width and length.
struct RnnTargetParams {
  std::vector<Matrix> t;  // slots 3..nL
  std::vector<Matrix> xbar_seq;

  int steps() const { return int(xbar_seq.size()); }
  int target_batch() const { return xbar_seq.empty() ? 0 : xbar_seq.front().cols(); }
  Matrix target_block(int j, int step) const;
};

// Per-step work-space matrices of one unrolled run. a[j][t] = g(s[j][t]) for
// every computed layer (the feedback path needs the activation even on the
// last layer); y[t] = s[nL][t], the pre-softmax output.
struct RnnTrace {
  std::vector<std::vector<Matrix>> a;  // a[j][t], j = 0..nL
  std::vector<std::vector<Matrix>> s;  // s[j][t], j = 3..nL
  std::vector<Matrix> y;
};

RnnTrace rnn_forward(const RnnSpec& spec, const WeightParams& w,
                     const std::vector<Matrix>& x_seq);

// Targets-to-weights solve over time-concatenated blocks. The context-layer
// activations are first estimated optimistically from their own targets (the
// feedback loop cannot be run before the weights exist); every layer is then
// solved sequentially, and once the context layer's weights are known the
// dynamics are re-run up to that layer, exactly once, so the exit layers see
// the true recurrent activations instead of the optimistic estimate.
WeightParams rnn_targets_to_weights_scu(const RnnSpec& spec, const RnnTargetParams& t,
                                        double lambda);

// Fully optimistic variant: every layer carries g(T), no correction re-run.
WeightParams rnn_targets_to_weights_ocu(const RnnSpec& spec, const RnnTargetParams& t,
                                        double lambda);

RnnTargetParams rnn_init_targets(const RnnSpec& spec, std::vector<Matrix> xbar_seq,
                                 double sigma, std::uint64_t seed);

// Captures the achieved sums of one solve as the new targets (run once before
// training, like the feed-forward projection).
RnnTargetParams rnn_project_targets(const RnnSpec& spec, const RnnTargetParams& t,
                                    double lambda);

WeightParams rnn_init_weights(const RnnSpec& spec, std::uint64_t seed);

// ----- tape builders -----

struct RnnTapeMapping {
  std::vector<Var> targets;  // leaf per computed layer (time-concatenated)
  std::vector<Var> weights;
};

RnnTapeMapping tape_rnn_targets_to_weights(Tape& tape, const RnnSpec& spec,
                                           const RnnTargetParams& t, double lambda, bool scu);

std::vector<Var> tape_rnn_forward(Tape& tape, const RnnSpec& spec,
                                  const std::vector<Var>& weights,
                                  const std::vector<Matrix>& x_seq);

// Mean loss over the label-carrying steps only; steps with mask[t] == 0 are
// excluded entirely and contribute exactly zero gradient.
Var tape_rnn_masked_loss(Tape& tape, OutputHead head, const std::vector<Var>& ys,
                         const std::vector<Matrix>& labels, const std::vector<int>& mask);

}  // namespace tsdl
