#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <vector>

// Forward-only float64 reference kernels for the 2.5D segmentation branch:
// sequence-reduction attention, Mix-FFN and MAE patch masking. Single head,
// single block, no normalization layers.
namespace thma::seg {

// N tokens x C channels.
using TokenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct AttentionParams {
  int d_head = 1;
  int gamma = 1;          // sequence reduction ratio, must divide N
  TokenMatrix w_reduce;   // (gamma*C) x C
  Vector b_reduce;        // C, or empty for no bias
  TokenMatrix w_q, w_k, w_v;  // C x d_head
  Vector b_q, b_k, b_v;       // d_head, or empty

  // gamma = 1 with an identity reduction map and no biases.
  static AttentionParams identity_reduction(const TokenMatrix& w_q, const TokenMatrix& w_k,
                                            const TokenMatrix& w_v);
};

struct FfnParams {
  TokenMatrix w1;         // C x H
  Vector b1;              // H
  TokenMatrix dw_kernel;  // H x 9, row-major 3x3 taps per channel
  Vector dw_bias;         // H
  TokenMatrix w2;         // H x C
  Vector b2;              // C

  static FfnParams zeros(int channels, int hidden);
};

struct SpatialShape {
  int height = 1;
  int width = 1;
};

// Groups gamma consecutive tokens into one row ((N/gamma) x (gamma*C)) and maps
// it back to C channels.
TokenMatrix reduce_tokens(const TokenMatrix& k, int gamma, const TokenMatrix& w_reduce, const Vector& b_reduce);

// Numerically stable row-wise softmax.
TokenMatrix softmax_rows(const TokenMatrix& scores);

// softmax(Q K^T / sqrt(d_head)) V with K and V taken from the reduced sequence.
TokenMatrix sr_attention(const TokenMatrix& x, const AttentionParams& p);

double gelu(double x);

// 3x3 depthwise convolution over an h x w token grid, zero padded.
TokenMatrix depthwise_conv3x3(const TokenMatrix& x, SpatialShape shape, const TokenMatrix& kernel,
                              const Vector& bias);

// y = W2(gelu(dwconv(W1 x + b1))) + b2 + x
TokenMatrix mix_ffn(const TokenMatrix& x, SpatialShape shape, const FfnParams& p);

struct MaskPartition {
  std::vector<std::size_t> visible;  // ascending
  std::vector<std::size_t> masked;   // ascending
};

// Uniform random split with round(mask_ratio * num_patches) masked patches.
MaskPartition mae_mask(std::size_t num_patches, double mask_ratio, std::uint64_t seed);

// Rows of `patches` selected by the visible indices: the encoder input.
TokenMatrix gather_visible(const TokenMatrix& patches, const MaskPartition& partition);

}  // namespace thma::seg
