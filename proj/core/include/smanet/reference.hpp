#pragma once

#include <vector>

#include "smanet/ops.hpp"

namespace smanet::reference {

// Slow, straight-loop double-precision kernels. They back the replay side of
// the finite-difference gradient checker and serve as oracles in tests, so
// they are written independently of the float kernels in ops.cpp.

void conv2d(const std::vector<double>& in, int n, int cin, int h, int w,
            const std::vector<double>& weight, int cout, int k, const double* bias,
            const ops::ConvSpec& spec, std::vector<double>& out);

void conv1d(const std::vector<double>& in, int n, int cin, int len,
            const std::vector<double>& weight, int cout, int k, const double* bias,
            const ops::ConvSpec& spec, std::vector<double>& out);

void fully_connected(const std::vector<double>& in, int n, int fin,
                     const std::vector<double>& weight, int fout,
                     const std::vector<double>& bias, std::vector<double>& out);

// training=true recomputes batch statistics from `in`; otherwise mean/var are
// the fixed statistics to normalize with.
void batch_norm(const std::vector<double>& in, int n, int c, int h, int w,
                const std::vector<double>& gamma, const std::vector<double>& beta,
                const std::vector<double>& mean, const std::vector<double>& var, bool training,
                double epsilon, std::vector<double>& out);

void global_avg_pool(const std::vector<double>& in, int n, int c, int h, int w,
                     std::vector<double>& out);

void softmax(const std::vector<double>& logits, int n, int k, std::vector<double>& out);

double cross_entropy_with_logits(const std::vector<double>& logits, int n, int k,
                                 const std::vector<int>& targets, bool mean);

}  // namespace smanet::reference
