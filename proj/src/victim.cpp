#include "mea/victim.hpp"

#include <algorithm>
#include <cmath>

#include "mea/kernels.hpp"

namespace mea::victim {

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.next_in(-1.0, 1.0) * scale;
    return m;
}

}  // namespace

VictimModel::VictimModel(const VictimConfig& cfg) : cfg_(cfg) {
    if (cfg.num_layers < 1 || cfg.dim < 1 || cfg.frame_len < 1 || cfg.hop < 1) {
        throw ParameterError("victim dimensions must be positive");
    }
    Rng rng(cfg.seed);
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(cfg.frame_len));
    const double layer_scale = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    input_proj_ = random_matrix(rng, static_cast<std::size_t>(cfg.dim),
                                static_cast<std::size_t>(cfg.frame_len), proj_scale);
    layer_w_.reserve(static_cast<std::size_t>(cfg.num_layers));
    layer_b_.reserve(static_cast<std::size_t>(cfg.num_layers));
    for (int n = 0; n < cfg.num_layers; ++n) {
        layer_w_.push_back(random_matrix(rng, static_cast<std::size_t>(cfg.dim),
                                         static_cast<std::size_t>(cfg.dim), layer_scale));
        std::vector<double> b(static_cast<std::size_t>(cfg.dim));
        for (double& v : b) v = rng.next_in(-1.0, 1.0) * layer_scale;
        layer_b_.push_back(std::move(b));
    }
}

std::size_t VictimModel::frames_for(std::size_t n_samples) const {
    return kernels::frame_count(n_samples, static_cast<std::size_t>(cfg_.frame_len),
                                static_cast<std::size_t>(cfg_.hop));
}

LayerRepresentations VictimModel::forward(std::span<const double> samples,
                                          const std::vector<int>& layers) const {
    if (layers.empty()) throw ParameterError("no layers requested");
    int max_layer = 0;
    for (int n : layers) {
        if (n < 1 || n > cfg_.num_layers) {
            throw ParameterError("unknown layer " + std::to_string(n) + " (model has 1.." +
                                 std::to_string(cfg_.num_layers) + ")");
        }
        max_layer = std::max(max_layer, n);
    }

    LayerRepresentations out;
    Matrix current;
    kernels::project_frames_tanh(samples, input_proj_, static_cast<std::size_t>(cfg_.frame_len),
                                 static_cast<std::size_t>(cfg_.hop), current);
    Matrix next;
    for (int n = 1; n <= max_layer; ++n) {
        kernels::mix_layer_tanh(current, layer_w_[static_cast<std::size_t>(n - 1)],
                                layer_b_[static_cast<std::size_t>(n - 1)], next);
        std::swap(current, next);
        if (std::find(layers.begin(), layers.end(), n) != layers.end()) {
            out.layers[n] = current;
        }
    }
    return out;
}

bool QueryLedger::try_charge(double duration_s) {
    if (!(duration_s > 0.0)) throw ParameterError("charge duration must be positive");
    std::lock_guard<std::mutex> lock(mu_);
    if (spent_s_ >= limit_s_) return false;
    spent_s_ += duration_s;
    ++request_count_;
    return true;
}

double QueryLedger::spent_s() const {
    std::lock_guard<std::mutex> lock(mu_);
    return spent_s_;
}

int QueryLedger::request_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return request_count_;
}

}  // namespace mea::victim
