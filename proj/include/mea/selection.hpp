#ifndef MEA_SELECTION_HPP
#define MEA_SELECTION_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mea/corpus.hpp"
#include "mea/features.hpp"

namespace mea::selection {

enum class Method { random, loss, content, transcription, most_speakers };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

// One selected clip. `value` depends on the method: 0 for random, the loss
// score for loss, the min Jaccard distance to the already-picked set for
// content (1 for the seeded first pick), the cluster id for transcription,
// and the clip duration for most_speakers.
struct PlanStep {
    std::string clip_id;
    double running_total_s = 0.0;
    double value = 0.0;
};

struct SelectionPlan {
    Method method = Method::random;
    std::uint64_t seed = 0;
    double budget_s = 0.0;
    double total_duration_s = 0.0;
    bool exhausted = false;  // corpus ran out before reaching the budget
    std::vector<PlanStep> steps;

    std::vector<std::string> clip_ids() const;
};

void save_plan(const SelectionPlan& plan, const std::filesystem::path& path);
SelectionPlan load_plan(const std::filesystem::path& path);

// All strategies append clips until the running total reaches the budget H
// (the final clip may overshoot) or the corpus is exhausted. Ties anywhere
// break to the lowest clip id.

SelectionPlan select_random(const corpus::Corpus& c, double budget_s, std::uint64_t seed);

struct ClipScore {
    std::string clip_id;
    double score = 0.0;
};

// Proxy for a clip's pre-training loss: mean squared distance of its
// backbone frames to their nearest k-means centroid (quantization error).
ClipScore pretraining_loss_score(const corpus::Clip& clip, const features::Backbone& backbone,
                                 const features::KMeansModel& kmeans);

// Highest score first.
SelectionPlan select_by_loss(const corpus::Corpus& c,
                             const std::map<std::string, double>& scores, double budget_s);

// Farthest point sampling on trigram Jaccard distance: the first clip is
// seeded-uniform; each round picks the unsampled clip whose distance to the
// nearest sampled clip is largest.
SelectionPlan select_fps_content(const corpus::Corpus& c,
                                 const std::map<std::string, features::TrigramSet>& trigrams,
                                 double budget_s, std::uint64_t seed);

enum class ClusterOrder { shuffled, nearest_centroid };

// k-means over transcription embeddings, then round-robin across clusters
// in ascending cluster id; exhausted clusters are skipped.
SelectionPlan select_by_transcription(const corpus::Corpus& c,
                                      const std::map<std::string, std::vector<double>>& embeddings,
                                      int k, double budget_s, std::uint64_t seed,
                                      ClusterOrder order = ClusterOrder::shuffled);

// Round-robin over speakers in seeded order, shortest unused clip per
// speaker first, so the budget covers as many speakers as possible.
SelectionPlan select_most_speakers(const corpus::Corpus& c, double budget_s, std::uint64_t seed);

}  // namespace mea::selection

#endif
