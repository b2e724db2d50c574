#pragma once

#include "tsdl/matrix.hpp"

#include <vector>

// Shared index arithmetic for the image-shaped primitives. Image tensors are
// stored as channels x (batch*h*w) matrices with column index (b*h + y)*w + x;
// convolutions use "same" zero padding at stride 1, so out_h = h, out_w = w.

namespace tsdl::detail {

// Patches matrix: (1 + kh*kw*channels) x (batch*h*w), leading row of ones,
// remaining rows indexed (ky*kw + kx)*channels + ch.
Matrix gather_patches(const Matrix& chans, int batch, int h, int w, int kh, int kw);

// Adjoint of gather_patches: accumulates into chans_bar (bias row dropped).
void scatter_patches(const Matrix& patches_bar, int batch, int h, int w, int kh, int kw,
                     Matrix& chans_bar);

// Per-window max with stride k; records the winning flat data index of every
// output element for the reverse pass.
Matrix pool_max(const Matrix& chans, int batch, int h, int w, int k,
                std::vector<int>& arg_idx);

// (h*w*c) x batch column-per-image layout, row index (y*w + x)*c + ch.
Matrix flatten_image_cols(const Matrix& chans, int batch, int h, int w);

void unflatten_accumulate(const Matrix& flat_bar, int batch, int h, int w, int channels,
                          Matrix& chans_bar);

}  // namespace tsdl::detail
