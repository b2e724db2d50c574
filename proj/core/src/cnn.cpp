#include "tsdl/cnn.hpp"

#include "image_layout.hpp"

#include <cmath>
#include <random>

namespace tsdl::detail {

Matrix gather_patches(const Matrix& chans, int batch, int h, int w, int kh, int kw) {
  const int c = chans.rows();
  const int pad_t = (kh - 1) / 2;
  const int pad_l = (kw - 1) / 2;
  Matrix out(1 + kh * kw * c, batch * h * w);
  for (int col = 0; col < out.cols(); ++col) out(0, col) = 1.0;
  for (int b = 0; b < batch; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int col = (b * h + y) * w + x;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = y + ky - pad_t;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = x + kx - pad_l;
            if (ix < 0 || ix >= w) continue;
            const int in_col = (b * h + iy) * w + ix;
            const int row0 = 1 + (ky * kw + kx) * c;
            for (int ch = 0; ch < c; ++ch) out(row0 + ch, col) = chans(ch, in_col);
          }
        }
      }
    }
  }
  return out;
}

void scatter_patches(const Matrix& patches_bar, int batch, int h, int w, int kh, int kw,
                     Matrix& chans_bar) {
  const int c = chans_bar.rows();
  const int pad_t = (kh - 1) / 2;
  const int pad_l = (kw - 1) / 2;
  for (int b = 0; b < batch; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int col = (b * h + y) * w + x;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = y + ky - pad_t;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = x + kx - pad_l;
            if (ix < 0 || ix >= w) continue;
            const int in_col = (b * h + iy) * w + ix;
            const int row0 = 1 + (ky * kw + kx) * c;
            for (int ch = 0; ch < c; ++ch)
              chans_bar(ch, in_col) += patches_bar(row0 + ch, col);
          }
        }
      }
    }
  }
}

Matrix pool_max(const Matrix& chans, int batch, int h, int w, int k,
                std::vector<int>& arg_idx) {
  const int c = chans.rows();
  const int oh = h / k;
  const int ow = w / k;
  Matrix out(c, batch * oh * ow);
  arg_idx.assign(out.size(), 0);
  for (int ch = 0; ch < c; ++ch) {
    for (int b = 0; b < batch; ++b) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          int best_col = 0;
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
              const int col = (b * h + oy * k + dy) * w + ox * k + dx;
              const double v = chans(ch, col);
              if (v > best) {
                best = v;
                best_col = col;
              }
            }
          }
          const int out_col = (b * oh + oy) * ow + ox;
          out(ch, out_col) = best;
          arg_idx[std::size_t(ch) * out.cols() + out_col] =
              int(std::size_t(ch) * chans.cols() + best_col);
        }
      }
    }
  }
  return out;
}

Matrix flatten_image_cols(const Matrix& chans, int batch, int h, int w) {
  const int c = chans.rows();
  Matrix out(h * w * c, batch);
  for (int b = 0; b < batch; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch)
          out((y * w + x) * c + ch, b) = chans(ch, (b * h + y) * w + x);
  return out;
}

void unflatten_accumulate(const Matrix& flat_bar, int batch, int h, int w, int channels,
                          Matrix& chans_bar) {
  for (int b = 0; b < batch; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < channels; ++ch)
          chans_bar(ch, (b * h + y) * w + x) += flat_bar((y * w + x) * channels + ch, b);
}

}  // namespace tsdl::detail

namespace tsdl {

void Tensor4::validate() const {
  if (batch <= 0 || h <= 0 || w <= 0 || channels <= 0)
    throw std::invalid_argument("Tensor4: non-positive dimensions");
  if (m.rows() != channels || m.cols() != batch * h * w)
    throw std::invalid_argument("Tensor4: matrix " + shape_str(m) + " does not match [" +
                                std::to_string(batch) + "," + std::to_string(h) + "," +
                                std::to_string(w) + "," + std::to_string(channels) + "]");
}

void ConvLayerSpec::validate() const {
  if (kernel_h <= 0 || kernel_w <= 0 || in_channels <= 0 || out_channels <= 0 || pool_k <= 0)
    throw std::invalid_argument("ConvLayerSpec: non-positive field");
}

PatchMatrix extract_patches(const Tensor4& input, const ConvLayerSpec& spec) {
  input.validate();
  spec.validate();
  if (input.channels != spec.in_channels)
    throw std::invalid_argument("extract_patches: input has " +
                                std::to_string(input.channels) + " channels, layer expects " +
                                std::to_string(spec.in_channels));
  PatchMatrix p;
  p.batch = input.batch;
  p.out_h = input.h;
  p.out_w = input.w;
  p.m = detail::gather_patches(input.m, input.batch, input.h, input.w, spec.kernel_h,
                               spec.kernel_w);
  return p;
}

Tensor4 conv_forward(const ConvLayerSpec& spec, const Matrix& w, const PatchMatrix& patches) {
  spec.validate();
  const int taps = 1 + spec.kernel_h * spec.kernel_w * spec.in_channels;
  if (w.rows() != spec.out_channels || w.cols() != taps)
    throw std::invalid_argument("conv_forward: kernel " + shape_str(w) + ", expected " +
                                std::to_string(spec.out_channels) + "x" + std::to_string(taps));
  Tensor4 out;
  out.batch = patches.batch;
  out.h = patches.out_h;
  out.w = patches.out_w;
  out.channels = spec.out_channels;
  out.m = apply_activation(Activation::lrelu, matmul(w, patches.m));
  return out;
}

Matrix conv_targets_to_weights(const Matrix& t, const PatchMatrix& patches, double lambda) {
  if (t.cols() != patches.m.cols())
    throw std::invalid_argument("conv_targets_to_weights: targets " + shape_str(t) +
                                " vs patches " + shape_str(patches.m));
  return matmul(t, reg_pseudoinverse(patches.m, lambda));
}

Tensor4 maxpool(const Tensor4& input, int k) {
  input.validate();
  if (k <= 0 || input.h % k != 0 || input.w % k != 0)
    throw std::invalid_argument("maxpool: window " + std::to_string(k) +
                                " does not divide spatial dims " + std::to_string(input.h) +
                                "x" + std::to_string(input.w));
  std::vector<int> arg;
  Tensor4 out;
  out.batch = input.batch;
  out.h = input.h / k;
  out.w = input.w / k;
  out.channels = input.channels;
  out.m = detail::pool_max(input.m, input.batch, input.h, input.w, k, arg);
  return out;
}

Matrix flatten(const Tensor4& input) {
  input.validate();
  return detail::flatten_image_cols(input.m, input.batch, input.h, input.w);
}

// ----- whole-network plumbing -----

std::vector<CnnSpec::StageDims> CnnSpec::stage_dims() const {
  std::vector<StageDims> dims;
  int h = input_h, w = input_w, c = input_channels;
  for (const ConvLayerSpec& l : conv) {
    StageDims d{h, w, c, 0, 0, l.out_channels};
    if (l.pool_k > 1 && (h % l.pool_k != 0 || w % l.pool_k != 0))
      throw std::invalid_argument("CnnSpec: pool window " + std::to_string(l.pool_k) +
                                  " does not divide " + std::to_string(h) + "x" +
                                  std::to_string(w));
    d.out_h = h / l.pool_k;
    d.out_w = w / l.pool_k;
    dims.push_back(d);
    h = d.out_h;
    w = d.out_w;
    c = d.out_c;
  }
  return dims;
}

int CnnSpec::flatten_width() const {
  auto dims = stage_dims();
  if (dims.empty()) return input_h * input_w * input_channels;
  const auto& last = dims.back();
  return last.out_h * last.out_w * last.out_c;
}

void CnnSpec::validate() const {
  if (input_h <= 0 || input_w <= 0 || input_channels <= 0)
    throw std::invalid_argument("CnnSpec: bad input dims");
  if (dense.empty()) throw std::invalid_argument("CnnSpec: dense head required");
  int c = input_channels;
  for (const ConvLayerSpec& l : conv) {
    l.validate();
    if (l.in_channels != c)
      throw std::invalid_argument("CnnSpec: conv layer expects " +
                                  std::to_string(l.in_channels) + " channels, gets " +
                                  std::to_string(c));
    c = l.out_channels;
  }
  stage_dims();  // throws on indivisible pooling
}

Matrix cnn_forward_logits(const CnnSpec& spec, const CnnWeights& w, const Tensor4& x) {
  spec.validate();
  Tensor4 cur = x;
  auto dims = spec.stage_dims();
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const ConvLayerSpec& l = spec.conv[i];
    Tensor4 act = conv_forward(l, w.conv_w[i], extract_patches(cur, l));
    cur = l.pool_k > 1 ? maxpool(act, l.pool_k) : act;
  }
  Matrix prev = flatten(cur);
  Matrix logits;
  for (std::size_t i = 0; i < spec.dense.size(); ++i) {
    Matrix ones = Matrix::ones(1, prev.cols());
    Matrix b = concat_rows({&ones, &prev});
    Matrix s = matmul(w.dense_w[i], b);
    if (i + 1 < spec.dense.size())
      prev = apply_activation(Activation::lrelu, s);
    else
      logits = std::move(s);
  }
  return logits;
}

std::pair<CnnWeights, CnnMapTrace> cnn_targets_to_weights_scu(const CnnSpec& spec,
                                                              const CnnTargetParams& t,
                                                              double lambda) {
  spec.validate();
  CnnWeights w;
  CnnMapTrace tr;
  Tensor4 cur = t.xbar;
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const ConvLayerSpec& l = spec.conv[i];
    PatchMatrix p = extract_patches(cur, l);
    w.conv_w.push_back(conv_targets_to_weights(t.conv_t[i], p, lambda));
    Matrix s = matmul(w.conv_w.back(), p.m);
    tr.conv_s.push_back(s);
    Tensor4 act{p.batch, p.out_h, p.out_w, l.out_channels,
                apply_activation(Activation::lrelu, s)};
    cur = l.pool_k > 1 ? maxpool(act, l.pool_k) : act;
  }
  Matrix prev = flatten(cur);
  for (std::size_t i = 0; i < spec.dense.size(); ++i) {
    Matrix ones = Matrix::ones(1, prev.cols());
    Matrix b = concat_rows({&ones, &prev});
    w.dense_w.push_back(matmul(t.dense_t[i], reg_pseudoinverse(b, lambda)));
    Matrix s = matmul(w.dense_w.back(), b);
    tr.dense_s.push_back(s);
    if (i + 1 < spec.dense.size()) prev = apply_activation(Activation::lrelu, s);
  }
  return {std::move(w), std::move(tr)};
}

CnnTargetParams cnn_init_targets(const CnnSpec& spec, Tensor4 xbar, double sigma,
                                 std::uint64_t seed) {
  spec.validate();
  xbar.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  auto draw = [&](Matrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      double v = dist(rng);
      while (std::abs(v) > 2.0 * sigma) v = dist(rng);
      m.data()[i] = v;
    }
  };
  CnnTargetParams t;
  const int nbar = xbar.batch;
  auto dims = spec.stage_dims();
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    Matrix m(spec.conv[i].out_channels, nbar * dims[i].in_h * dims[i].in_w);
    draw(m);
    t.conv_t.push_back(std::move(m));
  }
  for (std::size_t i = 0; i < spec.dense.size(); ++i) {
    Matrix m(spec.dense[i], nbar);
    draw(m);
    t.dense_t.push_back(std::move(m));
  }
  t.xbar = std::move(xbar);
  return t;
}

CnnTargetParams cnn_project_targets(const CnnSpec& spec, const CnnTargetParams& t,
                                    double lambda) {
  auto [w, tr] = cnn_targets_to_weights_scu(spec, t, lambda);
  (void)w;
  CnnTargetParams out;
  out.conv_t = tr.conv_s;
  out.dense_t = tr.dense_s;
  out.xbar = t.xbar;
  return out;
}

CnnWeights cnn_init_weights(const CnnSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  CnnWeights w;
  for (const ConvLayerSpec& l : spec.conv) {
    const int fan_in = l.kernel_h * l.kernel_w * l.in_channels;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Matrix m(l.out_channels, 1 + fan_in);
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 1; c < m.cols(); ++c) m(r, c) = dist(rng);
    w.conv_w.push_back(std::move(m));
  }
  int prev = spec.flatten_width();
  for (int width : spec.dense) {
    const double limit = std::sqrt(6.0 / (prev + width));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(width, 1 + prev);
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 1; c < m.cols(); ++c) m(r, c) = dist(rng);
    w.dense_w.push_back(std::move(m));
    prev = width;
  }
  return w;
}

// ----- tape builders -----

namespace {

Var tape_conv_stack(Tape& tape, const CnnSpec& spec, std::vector<Var>* weights_out,
                    const std::vector<Var>* given_weights, const CnnTargetParams* t,
                    double lambda, bool scu, const Tensor4& x,
                    const std::vector<Matrix>* dropout, std::vector<Var>* targets_out) {
  // Shared walk for mapping (solve per layer) and forward (weights given).
  auto dims = spec.stage_dims();
  Var cur = tape.constant(x.m);
  int batch = x.batch;
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const ConvLayerSpec& l = spec.conv[i];
    const int h = dims[i].in_h, w = dims[i].in_w;
    Var patches = tape.extract_patches(cur, batch, h, w, l.kernel_h, l.kernel_w);
    Var wv;
    Var carried;
    if (given_weights) {
      wv = (*given_weights)[i];
      carried = tape.activation(Activation::lrelu, tape.matmul(wv, patches));
    } else {
      Var tv = tape.leaf(t->conv_t[i]);
      targets_out->push_back(tv);
      wv = tape.matmul(tv, tape_reg_pseudoinverse(tape, patches, lambda));
      Var pre = scu ? tape.matmul(wv, patches) : tv;
      carried = tape.activation(Activation::lrelu, pre);
    }
    if (weights_out) weights_out->push_back(wv);
    if (dropout && !(*dropout)[i].empty())
      carried = tape.hadamard(carried, tape.constant((*dropout)[i]));
    cur = l.pool_k > 1 ? tape.maxpool(carried, batch, h, w, l.pool_k) : carried;
  }
  const auto& last = dims.empty() ? CnnSpec::StageDims{0, 0, 0, spec.input_h, spec.input_w,
                                                       spec.input_channels}
                                  : dims.back();
  return tape.flatten_image(cur, batch, last.out_h, last.out_w);
}

}  // namespace

CnnTapeMapping tape_cnn_targets_to_weights(Tape& tape, const CnnSpec& spec,
                                           const CnnTargetParams& t, double lambda, bool scu,
                                           const std::vector<Matrix>* dropout) {
  spec.validate();
  CnnTapeMapping out;
  Var prev = tape_conv_stack(tape, spec, &out.conv_weights, nullptr, &t, lambda, scu, t.xbar,
                             dropout, &out.conv_targets);
  const int nbar = t.xbar.batch;
  Var ones = tape.constant(Matrix::ones(1, nbar));
  for (std::size_t i = 0; i < spec.dense.size(); ++i) {
    Var b = tape.concat_rows({ones, prev});
    Var tv = tape.leaf(t.dense_t[i]);
    out.dense_targets.push_back(tv);
    Var wv = tape.matmul(tv, tape_reg_pseudoinverse(tape, b, lambda));
    out.dense_weights.push_back(wv);
    if (i + 1 < spec.dense.size()) {
      Var pre = scu ? tape.matmul(wv, b) : tv;
      prev = tape.activation(Activation::lrelu, pre);
    }
  }
  return out;
}

Var tape_cnn_forward(Tape& tape, const CnnSpec& spec, const std::vector<Var>& conv_weights,
                     const std::vector<Var>& dense_weights, const Tensor4& x,
                     const std::vector<Matrix>* dropout) {
  spec.validate();
  Var prev =
      tape_conv_stack(tape, spec, nullptr, &conv_weights, nullptr, 0.0, true, x, dropout,
                      nullptr);
  Var ones = tape.constant(Matrix::ones(1, x.batch));
  Var logits;
  for (std::size_t i = 0; i < spec.dense.size(); ++i) {
    Var b = tape.concat_rows({ones, prev});
    Var s = tape.matmul(dense_weights[i], b);
    if (i + 1 < spec.dense.size())
      prev = tape.activation(Activation::lrelu, s);
    else
      logits = s;
  }
  return logits;
}

}  // namespace tsdl
