#pragma once

#include <cstddef>
#include <span>

// Dense compute kernels. The functions in aggnn::kernels are OpenMP
// parallel; aggnn::kernels::serial holds straightforward single-threaded
// reference versions with identical signatures, kept for testing and for
// the benchmark comparison. Reductions inside a parallel kernel run in a
// fixed order so results do not depend on the thread count.
namespace aggnn::kernels {

// C[m x n] (+)= A[m x k] * B[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);
// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);
// C[m x n] (+)= A[k x m]^T * B[k x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);

// 3x3 convolution, stride 1, zero padding 1, NCHW layout.
struct ConvDims {
  std::size_t batch;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t height;
  std::size_t width;
};

void conv3x3_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> bias, std::span<double> y);
// Overwrites dx, dweight and dbias.
void conv3x3_backward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                      std::span<const double> dy, std::span<double> dx, std::span<double> dweight,
                      std::span<double> dbias);

// 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped.
struct PoolDims {
  std::size_t batch;
  std::size_t channels;
  std::size_t height;
  std::size_t width;
};

// argmax receives, per output element, the flat input index of the
// selected element. Ties resolve to the first element in row-major order.
void maxpool2x2_forward(const PoolDims& d, std::span<const double> x, std::span<double> y,
                        std::span<std::size_t> argmax);
void maxpool2x2_backward(const PoolDims& d, std::span<const double> dy, std::span<const std::size_t> argmax,
                         std::span<double> dx);

// Blended aggregation over per-unit Hadamard contributions
// z[j, i] = weight[j, i] * x[b, i]:
//
//   y[b, j] = mix[j,0] * sum_i z_i + mix[j,1] * A_fmean(z; power[j])
//           + mix[j,2] * A_gauss(z; exp(log_sigma[j])) + bias[j]
//
// An empty `power` span disables the F-Mean path, an empty `log_sigma`
// span disables the Gaussian path.
struct AggregationArgs {
  std::size_t batch;
  std::size_t in;
  std::size_t out;
  std::span<const double> x;          // batch x in
  std::span<const double> weight;     // out x in
  std::span<const double> bias;       // out
  std::span<const double> power;      // out, or empty
  std::span<const double> log_sigma;  // out, or empty
  std::span<const double> mix;        // out x 3
};

// Every span is overwritten. `mix` receives dL/dmix, summed over the batch.
struct AggregationGrads {
  std::span<double> x;
  std::span<double> weight;
  std::span<double> bias;
  std::span<double> power;
  std::span<double> log_sigma;
  std::span<double> mix;
};

// `paths` (batch x out x 3, may be empty) receives the unblended path
// outputs (linear, F-Mean, Gaussian); disabled paths are written as 0.
void aggregate_forward(const AggregationArgs& args, std::span<double> y, std::span<double> paths = {});
void aggregate_backward(const AggregationArgs& args, std::span<const double> dy, const AggregationGrads& grads);

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);

void conv3x3_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> bias, std::span<double> y);
void conv3x3_backward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                      std::span<const double> dy, std::span<double> dx, std::span<double> dweight,
                      std::span<double> dbias);

void maxpool2x2_forward(const PoolDims& d, std::span<const double> x, std::span<double> y,
                        std::span<std::size_t> argmax);
void maxpool2x2_backward(const PoolDims& d, std::span<const double> dy, std::span<const std::size_t> argmax,
                         std::span<double> dx);

void aggregate_forward(const AggregationArgs& args, std::span<double> y, std::span<double> paths = {});
void aggregate_backward(const AggregationArgs& args, std::span<const double> dy, const AggregationGrads& grads);

}  // namespace serial

}  // namespace aggnn::kernels
