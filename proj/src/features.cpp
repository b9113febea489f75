#include "mea/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mea/kernels.hpp"

using nlohmann::json;

namespace mea::features {

Backbone::Backbone(std::uint64_t seed, int dim, int frame_len, int hop)
    : seed_(seed), dim_(dim), frame_len_(frame_len), hop_(hop) {
    if (dim < 1 || frame_len < 1 || hop < 1) {
        throw ParameterError("backbone dimensions must be positive");
    }
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(frame_len));
    proj_ = Matrix(static_cast<std::size_t>(dim), static_cast<std::size_t>(frame_len));
    for (double& v : proj_.data()) v = rng.next_in(-1.0, 1.0) * scale;
}

Matrix Backbone::features(std::span<const double> samples) const {
    Matrix out;
    kernels::project_frames_tanh(samples, proj_, static_cast<std::size_t>(frame_len_),
                                 static_cast<std::size_t>(hop_), out);
    return out;
}

std::uint64_t KMeansModel::hash() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 0x100000001B3ull;
    };
    mix(static_cast<std::uint64_t>(k));
    mix(centroids.cols());
    for (double d : centroids.data()) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, sizeof(bits));
        mix(bits);
    }
    return h;
}

KMeansModel kmeans_fit(const Matrix& points, int k, std::uint64_t seed,
                       int max_iters, double tol) {
    const std::size_t n = points.rows();
    const std::size_t dim = points.cols();
    if (k < 1) throw ParameterError("k must be >= 1");
    if (n < static_cast<std::size_t>(k)) {
        throw ParameterError("k-means needs at least k points (" + std::to_string(n) +
                             " < " + std::to_string(k) + ")");
    }

    // Seeded init: k distinct point indices via partial Fisher-Yates.
    Rng rng(seed);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
        std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    }

    KMeansModel model;
    model.k = k;
    model.centroids = Matrix(static_cast<std::size_t>(k), dim);
    for (int c = 0; c < k; ++c) {
        const double* src = points.row(idx[static_cast<std::size_t>(c)]);
        std::copy(src, src + dim, model.centroids.row(static_cast<std::size_t>(c)));
    }

    std::vector<int> assign;
    std::vector<double> sqdist;
    Matrix sums;
    std::vector<std::int64_t> counts;

    for (int iter = 0; iter < max_iters; ++iter) {
        kernels::assign_nearest(points, model.centroids, assign, &sqdist);
        model.inertia_trace.push_back(std::accumulate(sqdist.begin(), sqdist.end(), 0.0));

        kernels::accumulate_clusters(points, assign, k, sums, counts);
        Matrix updated(static_cast<std::size_t>(k), dim);
        std::vector<bool> taken(n, false);
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                for (std::size_t j = 0; j < dim; ++j) {
                    updated(static_cast<std::size_t>(c), j) =
                        sums(static_cast<std::size_t>(c), j) * inv;
                }
            } else {
                // Reseed to the point farthest from its assigned centroid.
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t p = 0; p < n; ++p) {
                    if (taken[p]) continue;
                    if (sqdist[p] > far_d) {
                        far_d = sqdist[p];
                        far = p;
                    }
                }
                taken[far] = true;
                const double* src = points.row(far);
                std::copy(src, src + dim, updated.row(static_cast<std::size_t>(c)));
            }
        }

        double max_shift = 0.0;
        for (int c = 0; c < k; ++c) {
            double d = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double diff = updated(static_cast<std::size_t>(c), j) -
                                    model.centroids(static_cast<std::size_t>(c), j);
                d += diff * diff;
            }
            max_shift = std::max(max_shift, std::sqrt(d));
        }
        model.centroids = std::move(updated);
        if (max_shift < tol) break;
    }

    kernels::assign_nearest(points, model.centroids, assign, &sqdist);
    model.inertia = std::accumulate(sqdist.begin(), sqdist.end(), 0.0);
    return model;
}

std::vector<int> kmeans_assign(const Matrix& points, const KMeansModel& model) {
    if (points.cols() != model.centroids.cols()) {
        throw ParameterError("dimension mismatch: points are " + std::to_string(points.cols()) +
                             "-d, centroids " + std::to_string(model.centroids.cols()) + "-d");
    }
    std::vector<int> assign;
    kernels::assign_nearest(points, model.centroids, assign, nullptr);
    return assign;
}

Matrix sample_fraction(const Matrix& frames, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw ParameterError("fraction must be in (0, 1]");
    }
    const std::size_t n = frames.rows();
    const std::size_t m = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(n)));

    Rng rng(seed);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
        std::swap(idx[i], idx[j]);
    }

    Matrix out(m, frames.cols());
    for (std::size_t i = 0; i < m; ++i) {
        const double* src = frames.row(idx[i]);
        std::copy(src, src + frames.cols(), out.row(i));
    }
    return out;
}

TokenSequence tokenize(const Matrix& feats, const KMeansModel& model) {
    const std::vector<int> raw = kmeans_assign(feats, model);
    TokenSequence seq;
    for (int t : raw) {
        if (seq.tokens.empty() || seq.tokens.back() != t) seq.tokens.push_back(t);
    }
    return seq;
}

bool TrigramSet::contains(const Trigram& g) const {
    return std::binary_search(grams.begin(), grams.end(), g);
}

TrigramSet trigram_set(const TokenSequence& tokens) {
    TrigramSet set;
    const auto& t = tokens.tokens;
    if (t.size() >= 3) {
        set.grams.reserve(t.size() - 2);
        for (std::size_t i = 0; i + 2 < t.size(); ++i) {
            set.grams.push_back({t[i], t[i + 1], t[i + 2]});
        }
        std::sort(set.grams.begin(), set.grams.end());
        set.grams.erase(std::unique(set.grams.begin(), set.grams.end()), set.grams.end());
    }
    return set;
}

double jaccard_distance(const TrigramSet& x, const TrigramSet& y) {
    if (x.empty() && y.empty()) return 0.0;
    if (x.empty() || y.empty()) return 1.0;
    std::size_t inter = 0;
    std::size_t i = 0, j = 0;
    while (i < x.grams.size() && j < y.grams.size()) {
        if (x.grams[i] < y.grams[j]) {
            ++i;
        } else if (y.grams[j] < x.grams[i]) {
            ++j;
        } else {
            ++inter;
            ++i;
            ++j;
        }
    }
    const std::size_t uni = x.grams.size() + y.grams.size() - inter;
    return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

TextEmbedding text_embedding(std::string_view text, int dim) {
    if (dim < 1) throw ParameterError("embedding dim must be >= 1");
    TextEmbedding emb;
    emb.v.assign(static_cast<std::size_t>(dim), 0.0);
    if (text.size() >= 3) {
        for (std::size_t i = 0; i + 2 < text.size(); ++i) {
            const std::uint64_t h = fnv1a64(text.substr(i, 3));
            emb.v[h % static_cast<std::uint64_t>(dim)] += 1.0;
        }
    }
    double norm2 = 0.0;
    for (double v : emb.v) norm2 += v * v;
    if (norm2 > 0.0) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& v : emb.v) v *= inv;
    } else {
        emb.degenerate = true;
    }
    return emb;
}

std::map<std::string, std::vector<double>> load_embeddings_file(
    const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    std::map<std::string, std::vector<double>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("embeddings line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!rec.contains("id") || !rec.contains("embedding")) {
            throw ParseError("embeddings line " + std::to_string(line_no) +
                             ": need 'id' and 'embedding'");
        }
        out[rec["id"].get<std::string>()] = rec["embedding"].get<std::vector<double>>();
    }
    return out;
}

void save_embeddings_file(const std::filesystem::path& path,
                          const std::map<std::string, std::vector<double>>& embeddings) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    for (const auto& [id, emb] : embeddings) {
        json rec{{"id", id}, {"embedding", emb}};
        f << rec.dump() << "\n";
    }
}

std::map<std::string, TokenSequence> load_token_cache(const std::filesystem::path& path,
                                                      std::uint64_t kmeans_hash) {
    std::map<std::string, TokenSequence> out;
    std::ifstream f(path);
    if (!f) return out;  // missing cache is empty, not an error
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("token cache line " + std::to_string(line_no) + ": " + e.what());
        }
        if (rec.value("kmeans_hash", std::string()) != std::to_string(kmeans_hash)) continue;
        TokenSequence seq;
        seq.tokens = rec["tokens"].get<std::vector<int>>();
        out[rec["id"].get<std::string>()] = std::move(seq);
    }
    return out;
}

void save_token_cache(const std::filesystem::path& path, std::uint64_t kmeans_hash,
                      const std::map<std::string, TokenSequence>& tokens) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    for (const auto& [id, seq] : tokens) {
        json rec{{"id", id},
                 {"kmeans_hash", std::to_string(kmeans_hash)},
                 {"tokens", seq.tokens}};
        f << rec.dump() << "\n";
    }
}

void save_kmeans(const KMeansModel& model, const std::filesystem::path& path) {
    json doc{{"k", model.k},
             {"dim", model.centroids.cols()},
             {"centroids", model.centroids.data()},
             {"inertia", model.inertia}};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << doc.dump() << "\n";
}

KMeansModel load_kmeans(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw ParseError("kmeans model " + path.string() + ": " + e.what());
    }
    KMeansModel model;
    model.k = doc.at("k").get<int>();
    const std::size_t dim = doc.at("dim").get<std::size_t>();
    model.centroids = Matrix(static_cast<std::size_t>(model.k), dim);
    model.centroids.data() = doc.at("centroids").get<std::vector<double>>();
    if (model.centroids.data().size() != static_cast<std::size_t>(model.k) * dim) {
        throw ParseError("kmeans model " + path.string() + ": centroid size mismatch");
    }
    model.inertia = doc.at("inertia").get<double>();
    return model;
}

}  // namespace mea::features
