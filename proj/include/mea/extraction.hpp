#ifndef MEA_EXTRACTION_HPP
#define MEA_EXTRACTION_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mea/common.hpp"

namespace mea::extraction {

// Per-target-layer affine prediction heads mapping backbone features
// (backbone_dim) to the victim's representation space (victim_dim).
struct SurrogateHeads {
    std::vector<int> target_layers;  // ascending
    int victim_dim = 0;
    int backbone_dim = 0;
    std::vector<Matrix> weight;             // per layer: victim_dim x backbone_dim
    std::vector<std::vector<double>> bias;  // per layer: victim_dim

    static SurrogateHeads random_init(const std::vector<int>& target_layers, int victim_dim,
                                      int backbone_dim, std::uint64_t seed);

    std::size_t layer_slot(int layer) const;  // throws ParameterError if absent
    Matrix predict(int layer, const Matrix& features) const;  // T x victim_dim
    std::map<int, Matrix> predict_all(const Matrix& features) const;
};

struct TrainConfig;

void save_checkpoint(const SurrogateHeads& heads, const std::filesystem::path& path,
                     double final_loss = 0.0, const TrainConfig* config = nullptr);
SurrogateHeads load_checkpoint(const std::filesystem::path& path);

struct TrainConfig {
    double budget_hours = 0.0;
    std::optional<int> steps;  // unset: max(200, ceil(10000 * budget_hours))
    int batch_size = 24;
    double peak_lr = 0.0002;
    double warmup_fraction = 0.07;
    std::uint64_t seed = 0;
    double eps_norm = 1e-8;
    bool parallel = false;  // per-clip loss/gradient within a batch

    int resolved_steps() const;
    void validate() const;
};

struct TrainingPair {
    std::string clip_id;
    Matrix features;                // T x backbone_dim
    std::map<int, Matrix> victim;   // target layer -> T x victim_dim
};

// Distillation objective for one layer, summed over timesteps:
//   -log sigmoid(cos(h_t, hhat_t)) + (1/D) * ||h_t - hhat_t||_1
// Cosine of a vector with norm below eps_norm is defined as 0.
double layer_loss(const Matrix& h, const Matrix& hhat, double eps_norm = 1e-8);

// Sum of layer_loss over every target layer; both maps must cover the same
// layer set.
double total_loss(const std::map<int, Matrix>& victim, const std::map<int, Matrix>& predicted,
                  double eps_norm = 1e-8);

// d layer_loss / d hhat, elementwise. The L1 subgradient uses sign(0) = 0;
// timesteps where either norm is below eps_norm contribute only the L1 part.
Matrix loss_gradient(const Matrix& h, const Matrix& hhat, double eps_norm = 1e-8);

// Linear warmup to peak_lr over the first warmup_fraction of steps, then
// linear decay to zero: lr(0) = lr(steps) = 0, peak at the warmup boundary.
double lr_at(int step, const TrainConfig& config);

struct TracePoint {
    int step = 0;
    double lr = 0.0;
    double batch_loss = 0.0;
};

struct TrainResult {
    SurrogateHeads heads;
    std::vector<TracePoint> trace;
};

// Plain SGD on the head parameters; batches are drawn with replacement by a
// seeded PRNG; the per-batch gradient is reduced in batch-slot order, so
// parallel and serial runs match bit for bit.
TrainResult train(SurrogateHeads heads, const std::vector<TrainingPair>& pairs,
                  const TrainConfig& config);

void save_loss_trace(const std::vector<TracePoint>& trace, const std::filesystem::path& path);

}  // namespace mea::extraction

#endif
