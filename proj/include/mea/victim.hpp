#ifndef MEA_VICTIM_HPP
#define MEA_VICTIM_HPP

#include <cstdint>
#include <map>
#include <mutex>
#include <span>
#include <vector>

#include "mea/common.hpp"

namespace mea::victim {

struct VictimConfig {
    int num_layers = 12;
    int dim = 64;        // representation width D_v
    int frame_len = 400; // samples per frame
    int hop = 320;       // samples between frames
    std::uint64_t seed = 0;
};

struct LayerRepresentations {
    std::map<int, Matrix> layers;  // layer index -> T x dim

    std::size_t frames() const { return layers.empty() ? 0 : layers.begin()->second.rows(); }
};

// Seeded tanh network with neighbor mixing. Layer 0 is a projection of each
// frame; layer n mixes each timestep with its neighbors (0.5/0.25/0.25,
// edges clamped) before an affine map and tanh. Weights are uniform [-1,1]
// scaled by 1/sqrt(fan-in), drawn from splitmix64 in a fixed order
// (projection first, then W_n and b_n per layer), so a seed pins the model
// bit-exactly.
class VictimModel {
public:
    explicit VictimModel(const VictimConfig& cfg);

    // Representations for the requested layers (subset of 1..num_layers).
    LayerRepresentations forward(std::span<const double> samples,
                                 const std::vector<int>& layers) const;

    const VictimConfig& config() const { return cfg_; }
    std::size_t frames_for(std::size_t n_samples) const;

private:
    VictimConfig cfg_;
    Matrix input_proj_;                         // dim x frame_len
    std::vector<Matrix> layer_w_;               // [n-1]: dim x dim
    std::vector<std::vector<double>> layer_b_;  // [n-1]: dim
};

// Budget ledger for one API key. A request is accepted while spent < limit;
// the accepting request may overshoot the limit. Refusal mutates nothing.
class QueryLedger {
public:
    explicit QueryLedger(double limit_s) : limit_s_(limit_s) {}

    // True when accepted (duration added, count incremented).
    // duration_s must be > 0.
    bool try_charge(double duration_s);

    double limit_s() const { return limit_s_; }
    double spent_s() const;
    int request_count() const;

private:
    double limit_s_;
    double spent_s_ = 0.0;
    int request_count_ = 0;
    mutable std::mutex mu_;
};

}  // namespace mea::victim

#endif
