#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mea/kernels.hpp"

using namespace mea;

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.next_in(-1.0, 1.0);
    return m;
}

}  // namespace

TEST_CASE("frame_count matches floor((n - frame_len)/hop) + 1") {
    CHECK(kernels::frame_count(16000, 400, 320) == 49);
    CHECK(kernels::frame_count(400, 400, 320) == 1);
    CHECK(kernels::frame_count(719, 400, 320) == 1);
    CHECK(kernels::frame_count(720, 400, 320) == 2);
    CHECK_THROWS_AS(kernels::frame_count(399, 400, 320), InputError);
}

TEST_CASE("parallel kernels match the serial reference bit for bit") {
    Rng rng(99);
    std::vector<double> samples(16000 * 3);
    for (double& v : samples) v = rng.next_in(-1.0, 1.0);
    const Matrix proj = random_matrix(rng, 32, 400);

    Matrix a, b;
    kernels::project_frames_tanh(samples, proj, 400, 320, a);
    reference::project_frames_tanh(samples, proj, 400, 320, b);
    CHECK(a == b);

    const Matrix w = random_matrix(rng, 32, 32);
    std::vector<double> bias(32);
    for (double& v : bias) v = rng.next_in(-1.0, 1.0);
    Matrix c, d;
    kernels::mix_layer_tanh(a, w, bias, c);
    reference::mix_layer_tanh(b, w, bias, d);
    CHECK(c == d);

    const Matrix points = random_matrix(rng, 500, 16);
    const Matrix centroids = random_matrix(rng, 7, 16);
    std::vector<int> assign_k, assign_r;
    std::vector<double> dist_k, dist_r;
    kernels::assign_nearest(points, centroids, assign_k, &dist_k);
    reference::assign_nearest(points, centroids, assign_r, &dist_r);
    CHECK(assign_k == assign_r);
    CHECK(dist_k == dist_r);

    Matrix sums_k, sums_r;
    std::vector<std::int64_t> counts_k, counts_r;
    kernels::accumulate_clusters(points, assign_k, 7, sums_k, counts_k);
    reference::accumulate_clusters(points, assign_r, 7, sums_r, counts_r);
    CHECK(sums_k == sums_r);
    CHECK(counts_k == counts_r);
}

TEST_CASE("assign_nearest breaks ties to the lowest centroid index") {
    Matrix points(1, 2);
    points(0, 0) = 0.0;
    points(0, 1) = 0.0;
    Matrix centroids(3, 2);
    // Centroids 0 and 2 are identical; 1 is farther away.
    centroids(0, 0) = 1.0;
    centroids(1, 0) = 5.0;
    centroids(2, 0) = 1.0;
    std::vector<int> assign;
    kernels::assign_nearest(points, centroids, assign, nullptr);
    CHECK(assign == std::vector<int>{0});
}

TEST_CASE("mix_layer_tanh clamps edge neighbors") {
    // One-frame input: both neighbors clamp to the frame itself, so the mix
    // weights sum to 1 and the result equals tanh(w * prev + b).
    Matrix prev(1, 2);
    prev(0, 0) = 0.5;
    prev(0, 1) = -0.25;
    Matrix w(2, 2);
    w(0, 0) = 1.0;
    w(1, 1) = 1.0;
    std::vector<double> bias{0.1, -0.1};
    Matrix out;
    kernels::mix_layer_tanh(prev, w, bias, out);
    CHECK(out(0, 0) == doctest::Approx(std::tanh(0.5 + 0.1)).epsilon(1e-15));
    CHECK(out(0, 1) == doctest::Approx(std::tanh(-0.25 - 0.1)).epsilon(1e-15));
}
