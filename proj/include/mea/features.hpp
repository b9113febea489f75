#ifndef MEA_FEATURES_HPP
#define MEA_FEATURES_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mea/common.hpp"

namespace mea::features {

// Frozen attacker-side featurizer: tanh of a seeded random projection per
// frame. Shares the victim's frame geometry so frame counts line up clip by
// clip; the seed must not be the victim's.
class Backbone {
public:
    explicit Backbone(std::uint64_t seed, int dim = 48, int frame_len = 400, int hop = 320);

    Matrix features(std::span<const double> samples) const;  // T x dim

    int dim() const { return dim_; }
    int frame_len() const { return frame_len_; }
    int hop() const { return hop_; }
    std::uint64_t seed() const { return seed_; }

    // The attacker must not share the victim's weights.
    bool seed_clashes(std::uint64_t victim_seed) const { return seed_ == victim_seed; }

private:
    std::uint64_t seed_;
    int dim_, frame_len_, hop_;
    Matrix proj_;
};

struct KMeansModel {
    int k = 0;
    Matrix centroids;  // k x dim
    double inertia = 0.0;
    std::vector<double> inertia_trace;  // per Lloyd iteration, non-increasing

    // Identifies the model for token caches: hash over k, dim, and the
    // centroid bit patterns.
    std::uint64_t hash() const;
};

// Lloyd's algorithm. Init picks k distinct point indices by seeded sampling;
// iteration stops when the largest centroid shift drops below tol or after
// max_iters. An emptied cluster is reseeded to the point farthest from its
// assigned centroid. Assignment ties go to the lowest centroid index.
KMeansModel kmeans_fit(const Matrix& points, int k, std::uint64_t seed,
                       int max_iters = 100, double tol = 1e-6);

std::vector<int> kmeans_assign(const Matrix& points, const KMeansModel& model);

// Seeded sample without replacement of ceil(fraction * rows) row vectors.
Matrix sample_fraction(const Matrix& frames, double fraction, std::uint64_t seed);

struct TokenSequence {
    std::vector<int> tokens;  // consecutive duplicates collapsed
};

TokenSequence tokenize(const Matrix& feats, const KMeansModel& model);

using Trigram = std::array<int, 3>;

struct TrigramSet {
    std::vector<Trigram> grams;  // sorted, unique

    bool contains(const Trigram& g) const;
    std::size_t size() const { return grams.size(); }
    bool empty() const { return grams.empty(); }
};

TrigramSet trigram_set(const TokenSequence& tokens);

// 1 - |X∩Y| / |X∪Y|; 0 when both sets are empty, 1 when exactly one is.
double jaccard_distance(const TrigramSet& x, const TrigramSet& y);

struct TextEmbedding {
    std::vector<double> v;
    bool degenerate = false;  // no character trigrams; v is all zeros
};

// Character-trigram counts hashed (FNV-1a 64) into dim buckets, then
// L2-normalized.
TextEmbedding text_embedding(std::string_view text, int dim = 256);

// Embeddings file: one {"id": ..., "embedding": [...]} object per line.
std::map<std::string, std::vector<double>> load_embeddings_file(const std::filesystem::path& path);
void save_embeddings_file(const std::filesystem::path& path,
                          const std::map<std::string, std::vector<double>>& embeddings);

// Token cache: JSON lines keyed by clip id and k-means model hash. Loading
// returns only entries whose hash matches.
std::map<std::string, TokenSequence> load_token_cache(const std::filesystem::path& path,
                                                      std::uint64_t kmeans_hash);
void save_token_cache(const std::filesystem::path& path, std::uint64_t kmeans_hash,
                      const std::map<std::string, TokenSequence>& tokens);

void save_kmeans(const KMeansModel& model, const std::filesystem::path& path);
KMeansModel load_kmeans(const std::filesystem::path& path);

}  // namespace mea::features

#endif
