// Times the OpenMP kernels against the serial reference on synthetic inputs
// and checks that both produce identical bits.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mea/kernels.hpp"

using mea::Matrix;
using mea::Rng;

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
    fn();  // warm up
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < repeats; ++i) fn();
    const auto end = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(end - start).count() / repeats;
}

void report(const std::string& name, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-24s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx   %s\n", name.c_str(),
                serial_ms, parallel_ms, serial_ms / parallel_ms,
                identical ? "bit-identical" : "MISMATCH");
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.next_in(-1.0, 1.0);
    return m;
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (built without OpenMP)\n");
#endif

    Rng rng(42);
    const int repeats = 5;

    {
        const std::size_t n_samples = 16000 * 30;  // 30 s of audio
        std::vector<double> samples(n_samples);
        for (double& v : samples) v = rng.next_in(-1.0, 1.0);
        const Matrix proj = random_matrix(rng, 64, 400);
        Matrix out_ref, out_omp;
        const double serial = time_ms(
            [&] { mea::reference::project_frames_tanh(samples, proj, 400, 320, out_ref); },
            repeats);
        const double parallel = time_ms(
            [&] { mea::kernels::project_frames_tanh(samples, proj, 400, 320, out_omp); },
            repeats);
        report("project_frames_tanh", serial, parallel, out_ref == out_omp);
    }

    {
        const Matrix prev = random_matrix(rng, 4096, 64);
        const Matrix w = random_matrix(rng, 64, 64);
        std::vector<double> bias(64);
        for (double& v : bias) v = rng.next_in(-1.0, 1.0);
        Matrix out_ref, out_omp;
        const double serial =
            time_ms([&] { mea::reference::mix_layer_tanh(prev, w, bias, out_ref); }, repeats);
        const double parallel =
            time_ms([&] { mea::kernels::mix_layer_tanh(prev, w, bias, out_omp); }, repeats);
        report("mix_layer_tanh", serial, parallel, out_ref == out_omp);
    }

    {
        const Matrix points = random_matrix(rng, 50000, 48);
        const Matrix centroids = random_matrix(rng, 64, 48);
        std::vector<int> a_ref, a_omp;
        std::vector<double> d_ref, d_omp;
        const double serial = time_ms(
            [&] { mea::reference::assign_nearest(points, centroids, a_ref, &d_ref); }, repeats);
        const double parallel = time_ms(
            [&] { mea::kernels::assign_nearest(points, centroids, a_omp, &d_omp); }, repeats);
        report("assign_nearest", serial, parallel, a_ref == a_omp && d_ref == d_omp);

        Matrix s_ref, s_omp;
        std::vector<std::int64_t> c_ref, c_omp;
        const double serial2 = time_ms(
            [&] { mea::reference::accumulate_clusters(points, a_ref, 64, s_ref, c_ref); },
            repeats);
        const double parallel2 = time_ms(
            [&] { mea::kernels::accumulate_clusters(points, a_omp, 64, s_omp, c_omp); },
            repeats);
        report("accumulate_clusters", serial2, parallel2, s_ref == s_omp && c_ref == c_omp);
    }

    return 0;
}
