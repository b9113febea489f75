#include "mea/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace mea::extraction {

namespace {

void check_same_shape(const Matrix& h, const Matrix& hhat) {
    if (h.rows() != hhat.rows() || h.cols() != hhat.cols()) {
        throw ParameterError("shape mismatch: " + std::to_string(h.rows()) + "x" +
                             std::to_string(h.cols()) + " vs " + std::to_string(hhat.rows()) +
                             "x" + std::to_string(hhat.cols()));
    }
    if (!h.all_finite() || !hhat.all_finite()) {
        throw InputError("non-finite representation entries");
    }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Accumulated gradient of one clip's loss w.r.t. the head parameters.
struct HeadGradient {
    std::vector<Matrix> weight;
    std::vector<std::vector<double>> bias;
    double loss = 0.0;

    void init(const SurrogateHeads& heads) {
        weight.clear();
        bias.clear();
        for (std::size_t s = 0; s < heads.target_layers.size(); ++s) {
            weight.emplace_back(static_cast<std::size_t>(heads.victim_dim),
                                static_cast<std::size_t>(heads.backbone_dim));
            bias.emplace_back(static_cast<std::size_t>(heads.victim_dim), 0.0);
        }
        loss = 0.0;
    }
};

}  // namespace

SurrogateHeads SurrogateHeads::random_init(const std::vector<int>& target_layers, int victim_dim,
                                           int backbone_dim, std::uint64_t seed) {
    if (target_layers.empty()) throw ParameterError("need at least one target layer");
    if (victim_dim < 1 || backbone_dim < 1) throw ParameterError("dims must be positive");

    SurrogateHeads heads;
    heads.target_layers = target_layers;
    std::sort(heads.target_layers.begin(), heads.target_layers.end());
    heads.victim_dim = victim_dim;
    heads.backbone_dim = backbone_dim;

    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(backbone_dim));
    for (std::size_t s = 0; s < heads.target_layers.size(); ++s) {
        Matrix w(static_cast<std::size_t>(victim_dim), static_cast<std::size_t>(backbone_dim));
        for (double& v : w.data()) v = rng.next_in(-1.0, 1.0) * scale;
        heads.weight.push_back(std::move(w));
        heads.bias.emplace_back(static_cast<std::size_t>(victim_dim), 0.0);
    }
    return heads;
}

std::size_t SurrogateHeads::layer_slot(int layer) const {
    for (std::size_t s = 0; s < target_layers.size(); ++s) {
        if (target_layers[s] == layer) return s;
    }
    throw ParameterError("no head for layer " + std::to_string(layer));
}

Matrix SurrogateHeads::predict(int layer, const Matrix& features) const {
    const std::size_t s = layer_slot(layer);
    if (features.cols() != static_cast<std::size_t>(backbone_dim)) {
        throw ParameterError("feature dim mismatch");
    }
    const Matrix& w = weight[s];
    const std::vector<double>& b = bias[s];
    Matrix out(features.rows(), static_cast<std::size_t>(victim_dim));
    for (std::size_t t = 0; t < features.rows(); ++t) {
        const double* f = features.row(t);
        double* dst = out.row(t);
        for (int i = 0; i < victim_dim; ++i) {
            const double* wr = w.row(static_cast<std::size_t>(i));
            double acc = b[static_cast<std::size_t>(i)];
            for (int j = 0; j < backbone_dim; ++j) acc += wr[j] * f[j];
            dst[i] = acc;
        }
    }
    return out;
}

std::map<int, Matrix> SurrogateHeads::predict_all(const Matrix& features) const {
    std::map<int, Matrix> out;
    for (int layer : target_layers) out[layer] = predict(layer, features);
    return out;
}

double layer_loss(const Matrix& h, const Matrix& hhat, double eps_norm) {
    check_same_shape(h, hhat);
    const std::size_t t_count = h.rows();
    const std::size_t dim = h.cols();
    double loss = 0.0;
    for (std::size_t t = 0; t < t_count; ++t) {
        const double* ht = h.row(t);
        const double* pt = hhat.row(t);
        double dot = 0.0, nh2 = 0.0, np2 = 0.0, l1 = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            dot += ht[d] * pt[d];
            nh2 += ht[d] * ht[d];
            np2 += pt[d] * pt[d];
            l1 += std::fabs(ht[d] - pt[d]);
        }
        const double nh = std::sqrt(nh2);
        const double np = std::sqrt(np2);
        const double cosine = (nh < eps_norm || np < eps_norm) ? 0.0 : dot / (nh * np);
        loss += std::log1p(std::exp(-cosine)) + l1 / static_cast<double>(dim);
    }
    return loss;
}

double total_loss(const std::map<int, Matrix>& victim, const std::map<int, Matrix>& predicted,
                  double eps_norm) {
    for (const auto& [layer, _] : victim) {
        if (!predicted.count(layer)) {
            throw ParameterError("missing predicted layer " + std::to_string(layer));
        }
    }
    for (const auto& [layer, _] : predicted) {
        if (!victim.count(layer)) {
            throw ParameterError("missing victim layer " + std::to_string(layer));
        }
    }
    double loss = 0.0;
    for (const auto& [layer, h] : victim) {
        loss += layer_loss(h, predicted.at(layer), eps_norm);
    }
    return loss;
}

Matrix loss_gradient(const Matrix& h, const Matrix& hhat, double eps_norm) {
    check_same_shape(h, hhat);
    const std::size_t t_count = h.rows();
    const std::size_t dim = h.cols();
    Matrix grad(t_count, dim);
    for (std::size_t t = 0; t < t_count; ++t) {
        const double* ht = h.row(t);
        const double* pt = hhat.row(t);
        double* g = grad.row(t);
        double dot = 0.0, nh2 = 0.0, np2 = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            dot += ht[d] * pt[d];
            nh2 += ht[d] * ht[d];
            np2 += pt[d] * pt[d];
        }
        const double nh = std::sqrt(nh2);
        const double np = std::sqrt(np2);
        const bool degenerate = nh < eps_norm || np < eps_norm;
        double coef = 0.0, cosine = 0.0;
        if (!degenerate) {
            cosine = dot / (nh * np);
            coef = -1.0 / (1.0 + std::exp(cosine));  // d(-log sigmoid(c))/dc = -sigmoid(-c)
        }
        for (std::size_t d = 0; d < dim; ++d) {
            double gc = 0.0;
            if (!degenerate) {
                gc = coef * (ht[d] / (nh * np) - cosine * pt[d] / np2);
            }
            g[d] = gc - sign(ht[d] - pt[d]) / static_cast<double>(dim);
        }
    }
    return grad;
}

int TrainConfig::resolved_steps() const {
    if (steps) {
        if (*steps < 0) throw ParameterError("steps must be >= 0");
        return *steps;
    }
    const int from_budget = static_cast<int>(std::ceil(10000.0 * budget_hours));
    return std::max(200, from_budget);
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (!(peak_lr > 0.0)) throw ParameterError("peak_lr must be positive");
    if (!(warmup_fraction > 0.0) || !(warmup_fraction < 1.0)) {
        throw ParameterError("warmup_fraction must be in (0, 1)");
    }
    if (!(eps_norm >= 0.0)) throw ParameterError("eps_norm must be >= 0");
    resolved_steps();
}

double lr_at(int step, const TrainConfig& config) {
    const int steps = config.resolved_steps();
    if (step < 0 || step > steps) {
        throw ParameterError("step " + std::to_string(step) + " outside [0, " +
                             std::to_string(steps) + "]");
    }
    long warm = std::llround(config.warmup_fraction * steps);
    warm = std::clamp<long>(warm, 1, std::max<long>(1, steps - 1));
    if (step <= warm) {
        return config.peak_lr * (static_cast<double>(step) / static_cast<double>(warm));
    }
    return config.peak_lr *
           (static_cast<double>(steps - step) / static_cast<double>(steps - warm));
}

TrainResult train(SurrogateHeads heads, const std::vector<TrainingPair>& pairs,
                  const TrainConfig& config) {
    config.validate();
    if (pairs.empty()) throw ParameterError("need at least one training pair");
    for (const TrainingPair& p : pairs) {
        if (p.victim.size() != heads.target_layers.size()) {
            throw ParameterError("pair " + p.clip_id + " does not cover the target layers");
        }
        for (int layer : heads.target_layers) {
            auto it = p.victim.find(layer);
            if (it == p.victim.end()) {
                throw ParameterError("pair " + p.clip_id + " missing layer " +
                                     std::to_string(layer));
            }
            if (it->second.rows() != p.features.rows()) {
                throw ParameterError("pair " + p.clip_id + " frame count mismatch");
            }
        }
    }

    const int steps = config.resolved_steps();
    TrainResult result;
    result.heads = std::move(heads);
    result.trace.reserve(static_cast<std::size_t>(steps));

    Rng rng(config.seed);
    const std::size_t n_layers = result.heads.target_layers.size();
    std::vector<HeadGradient> slot_grads(static_cast<std::size_t>(config.batch_size));

    for (int step = 1; step <= steps; ++step) {
        std::vector<std::size_t> batch(static_cast<std::size_t>(config.batch_size));
        for (std::size_t s = 0; s < batch.size(); ++s) {
            batch[s] = static_cast<std::size_t>(rng.next_below(pairs.size()));
        }

        // Per-slot loss and gradient; slots are independent, so the parallel
        // and serial paths produce identical bits.
#pragma omp parallel for schedule(static) if (config.parallel)
        for (std::int64_t s = 0; s < static_cast<std::int64_t>(batch.size()); ++s) {
            const TrainingPair& pair = pairs[batch[static_cast<std::size_t>(s)]];
            HeadGradient& hg = slot_grads[static_cast<std::size_t>(s)];
            hg.init(result.heads);
            for (std::size_t l = 0; l < n_layers; ++l) {
                const int layer = result.heads.target_layers[l];
                const Matrix& h = pair.victim.at(layer);
                const Matrix predicted = result.heads.predict(layer, pair.features);
                hg.loss += layer_loss(h, predicted, config.eps_norm);
                const Matrix g = loss_gradient(h, predicted, config.eps_norm);
                Matrix& gw = hg.weight[l];
                std::vector<double>& gb = hg.bias[l];
                for (std::size_t t = 0; t < g.rows(); ++t) {
                    const double* gt = g.row(t);
                    const double* ft = pair.features.row(t);
                    for (std::size_t i = 0; i < g.cols(); ++i) {
                        double* gw_row = gw.row(i);
                        const double gti = gt[i];
                        for (std::size_t j = 0; j < pair.features.cols(); ++j) {
                            gw_row[j] += gti * ft[j];
                        }
                        gb[i] += gti;
                    }
                }
            }
        }

        // Fixed-order reduction over batch slots.
        const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
        double batch_loss = 0.0;
        const double lr = lr_at(step, config);
        std::vector<Matrix> gw_total;
        std::vector<std::vector<double>> gb_total;
        for (std::size_t l = 0; l < n_layers; ++l) {
            gw_total.emplace_back(static_cast<std::size_t>(result.heads.victim_dim),
                                  static_cast<std::size_t>(result.heads.backbone_dim));
            gb_total.emplace_back(static_cast<std::size_t>(result.heads.victim_dim), 0.0);
        }
        for (std::size_t s = 0; s < batch.size(); ++s) {
            batch_loss += slot_grads[s].loss;
            for (std::size_t l = 0; l < n_layers; ++l) {
                const auto& src = slot_grads[s].weight[l].data();
                auto& dst = gw_total[l].data();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                for (std::size_t i = 0; i < gb_total[l].size(); ++i) {
                    gb_total[l][i] += slot_grads[s].bias[l][i];
                }
            }
        }
        batch_loss *= inv_batch;

        if (!std::isfinite(batch_loss)) {
            std::string ids;
            for (std::size_t s = 0; s < batch.size(); ++s) {
                ids += (s ? ", " : "") + pairs[batch[s]].clip_id;
            }
            throw NumericError("non-finite batch loss at step " + std::to_string(step) +
                               "; batch clips: " + ids);
        }

        for (std::size_t l = 0; l < n_layers; ++l) {
            auto& w = result.heads.weight[l].data();
            const auto& gw = gw_total[l].data();
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i] * inv_batch;
            auto& b = result.heads.bias[l];
            for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb_total[l][i] * inv_batch;
        }

        result.trace.push_back({step, lr, batch_loss});
    }
    return result;
}

void save_checkpoint(const SurrogateHeads& heads, const std::filesystem::path& path,
                     double final_loss) {
    json layers = json::object();
    for (std::size_t s = 0; s < heads.target_layers.size(); ++s) {
        layers[std::to_string(heads.target_layers[s])] = {
            {"weight", heads.weight[s].data()},  // row-major
            {"bias", heads.bias[s]},
        };
    }
    json doc{{"target_layers", heads.target_layers},
             {"victim_dim", heads.victim_dim},
             {"backbone_dim", heads.backbone_dim},
             {"heads", layers},
             {"final_loss", final_loss}};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << doc.dump(2) << "\n";
}

SurrogateHeads load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw ParseError("checkpoint " + path.string() + ": " + e.what());
    }
    SurrogateHeads heads;
    heads.target_layers = doc.at("target_layers").get<std::vector<int>>();
    heads.victim_dim = doc.at("victim_dim").get<int>();
    heads.backbone_dim = doc.at("backbone_dim").get<int>();
    for (int layer : heads.target_layers) {
        const json& entry = doc.at("heads").at(std::to_string(layer));
        Matrix w(static_cast<std::size_t>(heads.victim_dim),
                 static_cast<std::size_t>(heads.backbone_dim));
        w.data() = entry.at("weight").get<std::vector<double>>();
        if (w.data().size() !=
            static_cast<std::size_t>(heads.victim_dim) * static_cast<std::size_t>(heads.backbone_dim)) {
            throw ParseError("checkpoint weight size mismatch for layer " + std::to_string(layer));
        }
        heads.weight.push_back(std::move(w));
        heads.bias.push_back(entry.at("bias").get<std::vector<double>>());
    }
    return heads;
}

void save_loss_trace(const std::vector<TracePoint>& trace, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << "step,lr,batch_loss\n";
    char buf[96];
    for (const TracePoint& p : trace) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", p.step, p.lr, p.batch_loss);
        f << buf;
    }
}

}  // namespace mea::extraction
