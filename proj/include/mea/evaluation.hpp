#ifndef MEA_EVALUATION_HPP
#define MEA_EVALUATION_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mea/corpus.hpp"
#include "mea/extraction.hpp"
#include "mea/features.hpp"
#include "mea/victim.hpp"

namespace mea::evaluation {

// Mean over timesteps of one representation matrix.
std::vector<double> time_pool(const Matrix& reps);

// Nearest-centroid classifier over time-pooled representations of one
// layer; class = generator_label. Ties go to the lowest class id.
struct ProbeClassifier {
    int layer = 0;
    std::map<int, std::vector<double>> centroids;

    int predict(const std::vector<double>& pooled) const;
};

ProbeClassifier fit_probe(const std::vector<Matrix>& reps, const std::vector<int>& labels,
                          int layer);

// Fraction of positions where the two prediction lists agree.
double agreement(const std::vector<int>& victim_preds, const std::vector<int>& surrogate_preds);

// Mean cosine similarity over all timesteps of all clip pairs; vectors with
// norm below eps_norm contribute cosine 0.
double layer_similarity(const std::vector<Matrix>& victim_reps,
                        const std::vector<Matrix>& surrogate_reps, double eps_norm = 1e-8);

struct EvalReport {
    std::string method;
    double budget_s = 0.0;
    std::uint64_t seed = 0;
    double agreement = 0.0;
    std::map<int, double> layer_cosine;  // target layer -> mean cosine
    double probe_accuracy_victim = 0.0;
    double probe_accuracy_surrogate = 0.0;
    double heldout_loss = 0.0;  // mean total_loss per eval clip
    int probe_layer = 0;
};

void save_report(const EvalReport& r, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

// Table-style rendering of a method x budget grid of reports.
std::string render_report_table(const std::vector<EvalReport>& reports);

struct EvalMeta {
    std::string method;
    double budget_s = 0.0;
    std::uint64_t seed = 0;
};

// Full evaluation pass. The victim here is a budget-exempt local instance;
// probes are fit on probe_corpus and measured on eval_corpus (the two must
// be disjoint by clip id). probe_layer 0 selects the highest target layer.
EvalReport evaluate(const victim::VictimModel& model, const extraction::SurrogateHeads& heads,
                    const features::Backbone& backbone, const corpus::Corpus& eval_corpus,
                    const corpus::Corpus& probe_corpus, const EvalMeta& meta = {},
                    int probe_layer = 0);

}  // namespace mea::evaluation

#endif
