#include "thma/segnumerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "thma/error.hpp"

namespace thma::seg {

namespace {

std::string shape_of(const TokenMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_tokens(const TokenMatrix& m, const char* what) {
  if (m.rows() < 1 || m.cols() < 1) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " must have N, C >= 1");
  }
  if (!m.allFinite()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " has non-finite entries");
}

void require_shape(const TokenMatrix& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " is " + shape_of(m) + ", expected " +
                                              std::to_string(rows) + "x" + std::to_string(cols));
  }
}

void require_bias(const Vector& b, Eigen::Index n, const char* what) {
  if (b.size() != 0 && b.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " has length " + std::to_string(b.size()) +
                                              ", expected " + std::to_string(n));
  }
}

TokenMatrix affine(const TokenMatrix& x, const TokenMatrix& w, const Vector& b) {
  TokenMatrix y = x * w;
  if (b.size() != 0) y.rowwise() += b.transpose();
  return y;
}

}  // namespace

AttentionParams AttentionParams::identity_reduction(const TokenMatrix& w_q, const TokenMatrix& w_k,
                                                    const TokenMatrix& w_v) {
  AttentionParams p;
  p.d_head = static_cast<int>(w_q.cols());
  p.gamma = 1;
  p.w_reduce = TokenMatrix::Identity(w_q.rows(), w_q.rows());
  p.w_q = w_q;
  p.w_k = w_k;
  p.w_v = w_v;
  return p;
}

FfnParams FfnParams::zeros(int channels, int hidden) {
  FfnParams p;
  p.w1 = TokenMatrix::Zero(channels, hidden);
  p.b1 = Vector::Zero(hidden);
  p.dw_kernel = TokenMatrix::Zero(hidden, 9);
  p.dw_bias = Vector::Zero(hidden);
  p.w2 = TokenMatrix::Zero(hidden, channels);
  p.b2 = Vector::Zero(channels);
  return p;
}

TokenMatrix reduce_tokens(const TokenMatrix& k, int gamma, const TokenMatrix& w_reduce, const Vector& b_reduce) {
  require_tokens(k, "K");
  if (gamma < 1) throw Error(ErrorCode::InvalidArgument, "gamma must be >= 1");
  const Eigen::Index n = k.rows();
  const Eigen::Index c = k.cols();
  if (n % gamma != 0) {
    throw Error(ErrorCode::IndivisibleSequence,
                "N = " + std::to_string(n) + " is not divisible by gamma = " + std::to_string(gamma));
  }
  require_shape(w_reduce, gamma * c, c, "W_reduce");
  require_bias(b_reduce, c, "b_reduce");
  // Row-major storage makes the (N/gamma) x (gamma*C) reshape a reinterpretation.
  Eigen::Map<const TokenMatrix> grouped(k.data(), n / gamma, gamma * c);
  return affine(grouped, w_reduce, b_reduce);
}

TokenMatrix softmax_rows(const TokenMatrix& scores) {
  TokenMatrix out(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double m = scores.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      out(i, j) = std::exp(scores(i, j) - m);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

TokenMatrix sr_attention(const TokenMatrix& x, const AttentionParams& p) {
  require_tokens(x, "x");
  const Eigen::Index c = x.cols();
  if (p.d_head < 1) throw Error(ErrorCode::InvalidArgument, "d_head must be >= 1");
  require_shape(p.w_q, c, p.d_head, "W_q");
  require_shape(p.w_k, c, p.d_head, "W_k");
  require_shape(p.w_v, c, p.d_head, "W_v");
  require_bias(p.b_q, p.d_head, "b_q");
  require_bias(p.b_k, p.d_head, "b_k");
  require_bias(p.b_v, p.d_head, "b_v");

  const TokenMatrix reduced = reduce_tokens(x, p.gamma, p.w_reduce, p.b_reduce);
  const TokenMatrix q = affine(x, p.w_q, p.b_q);
  const TokenMatrix k = affine(reduced, p.w_k, p.b_k);
  const TokenMatrix v = affine(reduced, p.w_v, p.b_v);
  const TokenMatrix scores = (q * k.transpose()) / std::sqrt(static_cast<double>(p.d_head));
  return softmax_rows(scores) * v;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

TokenMatrix depthwise_conv3x3(const TokenMatrix& x, SpatialShape shape, const TokenMatrix& kernel,
                              const Vector& bias) {
  const Eigen::Index h = shape.height;
  const Eigen::Index w = shape.width;
  if (h < 1 || w < 1 || h * w != x.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "spatial shape " + std::to_string(h) + "x" + std::to_string(w) +
                                              " does not cover " + std::to_string(x.rows()) + " tokens");
  }
  require_shape(kernel, x.cols(), 9, "depthwise kernel");
  require_bias(bias, x.cols(), "depthwise bias");

  TokenMatrix out = TokenMatrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index col = 0; col < w; ++col) {
      auto dst = out.row(r * w + col);
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const Eigen::Index rr = r + dr;
          const Eigen::Index cc = col + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          const int tap = (dr + 1) * 3 + (dc + 1);
          dst += x.row(rr * w + cc).cwiseProduct(kernel.col(tap).transpose());
        }
      }
      if (bias.size() != 0) dst += bias.transpose();
    }
  }
  return out;
}

TokenMatrix mix_ffn(const TokenMatrix& x, SpatialShape shape, const FfnParams& p) {
  require_tokens(x, "x");
  const Eigen::Index c = x.cols();
  if (p.w1.rows() != c) throw Error(ErrorCode::ShapeMismatch, "W1 rows must equal C");
  const Eigen::Index hidden = p.w1.cols();
  require_bias(p.b1, hidden, "b1");
  require_shape(p.w2, hidden, c, "W2");
  require_bias(p.b2, c, "b2");

  TokenMatrix h = depthwise_conv3x3(affine(x, p.w1, p.b1), shape, p.dw_kernel, p.dw_bias);
  h = h.unaryExpr([](double v) { return gelu(v); });
  return affine(h, p.w2, p.b2) + x;
}

MaskPartition mae_mask(std::size_t num_patches, double mask_ratio, std::uint64_t seed) {
  if (num_patches < 1) throw Error(ErrorCode::InvalidArgument, "num_patches must be >= 1");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw Error(ErrorCode::InvalidArgument, "mask_ratio must be in [0, 1)");

  const auto masked_count = static_cast<std::size_t>(std::llround(mask_ratio * static_cast<double>(num_patches)));
  std::vector<std::size_t> order(num_patches);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  MaskPartition out;
  out.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(masked_count));
  out.visible.assign(order.begin() + static_cast<std::ptrdiff_t>(masked_count), order.end());
  std::sort(out.masked.begin(), out.masked.end());
  std::sort(out.visible.begin(), out.visible.end());
  return out;
}

TokenMatrix gather_visible(const TokenMatrix& patches, const MaskPartition& partition) {
  TokenMatrix out(static_cast<Eigen::Index>(partition.visible.size()), patches.cols());
  for (std::size_t i = 0; i < partition.visible.size(); ++i) {
    const auto src = static_cast<Eigen::Index>(partition.visible[i]);
    if (src >= patches.rows()) throw Error(ErrorCode::ShapeMismatch, "visible index out of range");
    out.row(static_cast<Eigen::Index>(i)) = patches.row(src);
  }
  return out;
}

}  // namespace thma::seg
