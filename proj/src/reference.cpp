#include "mea/kernels.hpp"

#include <cmath>
#include <limits>

// Plain serial loops, same per-slot arithmetic as the kernels. Used by the
// kernel tests and the benchmark.

namespace mea::reference {

void project_frames_tanh(std::span<const double> samples, const Matrix& proj,
                         std::size_t frame_len, std::size_t hop, Matrix& out) {
    const std::size_t t_count = kernels::frame_count(samples.size(), frame_len, hop);
    const std::size_t dim = proj.rows();
    out = Matrix(t_count, dim);
    for (std::size_t t = 0; t < t_count; ++t) {
        const double* frame = samples.data() + t * hop;
        for (std::size_t i = 0; i < dim; ++i) {
            const double* w = proj.row(i);
            double s = 0.0;
            for (std::size_t j = 0; j < frame_len; ++j) s += w[j] * frame[j];
            out(t, i) = std::tanh(s);
        }
    }
}

void mix_layer_tanh(const Matrix& prev, const Matrix& w,
                    const std::vector<double>& bias, Matrix& out) {
    const std::size_t t_count = prev.rows();
    const std::size_t dim = prev.cols();
    out = Matrix(t_count, dim);
    std::vector<double> mixed(dim);
    for (std::size_t t = 0; t < t_count; ++t) {
        const std::size_t tm = t == 0 ? 0 : t - 1;
        const std::size_t tp = t + 1 >= t_count ? t_count - 1 : t + 1;
        for (std::size_t j = 0; j < dim; ++j) {
            mixed[j] = 0.5 * prev(t, j) + 0.25 * prev(tm, j) + 0.25 * prev(tp, j);
        }
        for (std::size_t i = 0; i < dim; ++i) {
            const double* wr = w.row(i);
            double s = bias[i];
            for (std::size_t j = 0; j < dim; ++j) s += wr[j] * mixed[j];
            out(t, i) = std::tanh(s);
        }
    }
}

void assign_nearest(const Matrix& points, const Matrix& centroids,
                    std::vector<int>& assign, std::vector<double>* sqdist) {
    const std::size_t n = points.rows();
    const std::size_t k = centroids.rows();
    const std::size_t dim = points.cols();
    assign.assign(n, 0);
    if (sqdist) sqdist->assign(n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        const double* pt = points.row(p);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            const double* ct = centroids.row(c);
            double d = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double diff = pt[j] - ct[j];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        assign[p] = best;
        if (sqdist) (*sqdist)[p] = best_d;
    }
}

void accumulate_clusters(const Matrix& points, const std::vector<int>& assign,
                         int k, Matrix& sums, std::vector<std::int64_t>& counts) {
    const std::size_t n = points.rows();
    const std::size_t dim = points.cols();
    sums = Matrix(static_cast<std::size_t>(k), dim);
    counts.assign(static_cast<std::size_t>(k), 0);
    for (int c = 0; c < k; ++c) {
        double* dst = sums.row(static_cast<std::size_t>(c));
        for (std::size_t p = 0; p < n; ++p) {
            if (assign[p] != c) continue;
            const double* pt = points.row(p);
            for (std::size_t j = 0; j < dim; ++j) dst[j] += pt[j];
            ++counts[static_cast<std::size_t>(c)];
        }
    }
}

}  // namespace mea::reference
