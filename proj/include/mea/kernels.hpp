#ifndef MEA_KERNELS_HPP
#define MEA_KERNELS_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "mea/common.hpp"

// Data-parallel inner loops, OpenMP-parallelized. Every kernel either writes
// disjoint output slots per iteration or reduces in a fixed index order, so
// results are bit-identical to mea::reference for any thread count.

namespace mea::kernels {

// Number of frames a windowed pass produces: floor((n - frame_len)/hop) + 1.
// Throws InputError when n < frame_len.
std::size_t frame_count(std::size_t n_samples, std::size_t frame_len, std::size_t hop);

// out(t, :) = tanh(proj * window_t), windows of frame_len samples at stride
// hop. proj is dim x frame_len; out is resized to T x dim.
void project_frames_tanh(std::span<const double> samples, const Matrix& proj,
                         std::size_t frame_len, std::size_t hop, Matrix& out);

// One contextual layer: out_t = tanh(w * m_t + bias) with
// m_t = 0.5*prev_t + 0.25*prev_{t-1} + 0.25*prev_{t+1}, edges clamped.
void mix_layer_tanh(const Matrix& prev, const Matrix& w,
                    const std::vector<double>& bias, Matrix& out);

// Nearest centroid per point (squared L2, ties to the lowest index).
// sqdist may be null.
void assign_nearest(const Matrix& points, const Matrix& centroids,
                    std::vector<int>& assign, std::vector<double>* sqdist);

// Per-cluster sums and counts of the assigned points, accumulated in
// ascending point order within each cluster. Parallel over clusters.
void accumulate_clusters(const Matrix& points, const std::vector<int>& assign,
                         int k, Matrix& sums, std::vector<std::int64_t>& counts);

}  // namespace mea::kernels

// Serial reference implementations, kept for testing the parallel kernels
// and for the bench_kernels comparison target.
namespace mea::reference {

void project_frames_tanh(std::span<const double> samples, const Matrix& proj,
                         std::size_t frame_len, std::size_t hop, Matrix& out);
void mix_layer_tanh(const Matrix& prev, const Matrix& w,
                    const std::vector<double>& bias, Matrix& out);
void assign_nearest(const Matrix& points, const Matrix& centroids,
                    std::vector<int>& assign, std::vector<double>* sqdist);
void accumulate_clusters(const Matrix& points, const std::vector<int>& assign,
                         int k, Matrix& sums, std::vector<std::int64_t>& counts);

}  // namespace mea::reference

#endif
