#pragma once

#include <cstdint>
#include <vector>

#include "hnseg/geometry.hpp"
#include "hnseg/volume.hpp"

namespace hnseg::reference {

// Textbook single-threaded implementations of the hot kernels. They are the
// comparison baseline for the OpenMP kernels in unit tests and the benchmark;
// nothing in the production path calls them.

// x [N,Ci,D,H,W], w [Co,Ci,k,k,k], b [Co] -> y [N,Co,Do,Ho,Wo]
std::vector<float> conv3d_forward(const std::vector<float>& x,
                                  const std::int64_t xs[5],
                                  const std::vector<float>& w,
                                  const std::vector<float>& b, int k,
                                  int stride, int padding, std::int64_t ys[5]);

// dy with output dims ys -> dx
std::vector<float> conv3d_backward_input(const std::vector<float>& dy,
                                         const std::int64_t ys[5],
                                         const std::vector<float>& w,
                                         const std::int64_t xs[5], int k,
                                         int stride, int padding);

std::vector<float> conv3d_backward_weight(const std::vector<float>& dy,
                                          const std::int64_t ys[5],
                                          const std::vector<float>& x,
                                          const std::int64_t xs[5], int k,
                                          int stride, int padding);

// x [N,Ci,D,H,W], w [Ci,Co,2,2,2] -> y [N,Co,2D,2H,2W]
std::vector<float> conv_transpose3d_forward(const std::vector<float>& x,
                                            const std::int64_t xs[5],
                                            const std::vector<float>& w,
                                            const std::vector<float>& b,
                                            std::int64_t co);

// per-channel mean/variance over (N,D,H,W)
void batchnorm_stats(const std::vector<float>& x, const std::int64_t xs[5],
                     std::vector<float>& mean, std::vector<float>& var);

ScalarVolume resample_linear(const ScalarVolume& v, const ImageGeometry& target);

}  // namespace hnseg::reference
