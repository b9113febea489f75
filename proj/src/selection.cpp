#include "mea/selection.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mea/kernels.hpp"

using nlohmann::json;

namespace mea::selection {

namespace {

struct PlanBuilder {
    SelectionPlan plan;
    double total = 0.0;

    explicit PlanBuilder(Method m, std::uint64_t seed, double budget) {
        plan.method = m;
        plan.seed = seed;
        plan.budget_s = budget;
    }

    // Returns true while more clips are wanted.
    bool add(const corpus::Clip& clip, double value) {
        total += clip.duration_s();
        plan.steps.push_back({clip.id, total, value});
        return total < plan.budget_s;
    }

    SelectionPlan finish(bool corpus_exhausted) {
        plan.total_duration_s = total;
        plan.exhausted = corpus_exhausted && total < plan.budget_s;
        return std::move(plan);
    }
};

void require_budget(double budget_s) {
    if (!(budget_s > 0.0)) throw ParameterError("budget must be positive");
}

}  // namespace

std::string method_name(Method m) {
    switch (m) {
        case Method::random: return "random";
        case Method::loss: return "loss";
        case Method::content: return "content";
        case Method::transcription: return "transcription";
        case Method::most_speakers: return "most_speakers";
    }
    return "random";
}

Method method_from_name(const std::string& name) {
    if (name == "random") return Method::random;
    if (name == "loss") return Method::loss;
    if (name == "content") return Method::content;
    if (name == "transcription") return Method::transcription;
    if (name == "most_speakers") return Method::most_speakers;
    throw ParameterError("unknown selection method: " + name);
}

std::vector<std::string> SelectionPlan::clip_ids() const {
    std::vector<std::string> ids;
    ids.reserve(steps.size());
    for (const PlanStep& s : steps) ids.push_back(s.clip_id);
    return ids;
}

void save_plan(const SelectionPlan& plan, const std::filesystem::path& path) {
    json steps = json::array();
    for (const PlanStep& s : plan.steps) {
        steps.push_back({{"clip_id", s.clip_id},
                         {"running_total_s", s.running_total_s},
                         {"value", s.value}});
    }
    json doc{{"method", method_name(plan.method)},
             {"seed", plan.seed},
             {"budget_s", plan.budget_s},
             {"total_duration_s", plan.total_duration_s},
             {"exhausted", plan.exhausted},
             {"steps", steps}};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << doc.dump(2) << "\n";
}

SelectionPlan load_plan(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw ParseError("plan " + path.string() + ": " + e.what());
    }
    SelectionPlan plan;
    plan.method = method_from_name(doc.at("method").get<std::string>());
    plan.seed = doc.at("seed").get<std::uint64_t>();
    plan.budget_s = doc.at("budget_s").get<double>();
    plan.total_duration_s = doc.at("total_duration_s").get<double>();
    plan.exhausted = doc.at("exhausted").get<bool>();
    for (const json& s : doc.at("steps")) {
        plan.steps.push_back({s.at("clip_id").get<std::string>(),
                              s.at("running_total_s").get<double>(),
                              s.at("value").get<double>()});
    }
    return plan;
}

SelectionPlan select_random(const corpus::Corpus& c, double budget_s, std::uint64_t seed) {
    require_budget(budget_s);
    std::vector<std::size_t> order(c.clips.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    shuffle(order, rng);

    PlanBuilder b(Method::random, seed, budget_s);
    bool want_more = true;
    for (std::size_t i : order) {
        if (!want_more) break;
        want_more = b.add(c.clips[i], 0.0);
    }
    return b.finish(want_more);
}

ClipScore pretraining_loss_score(const corpus::Clip& clip, const features::Backbone& backbone,
                                 const features::KMeansModel& kmeans) {
    const Matrix feats = backbone.features(clip.samples);
    if (feats.cols() != kmeans.centroids.cols()) {
        throw ParameterError("k-means centroids do not match backbone dimension");
    }
    std::vector<int> assign;
    std::vector<double> sqdist;
    kernels::assign_nearest(feats, kmeans.centroids, assign, &sqdist);
    const double sum = std::accumulate(sqdist.begin(), sqdist.end(), 0.0);
    return {clip.id, sum / static_cast<double>(feats.rows())};
}

SelectionPlan select_by_loss(const corpus::Corpus& c,
                             const std::map<std::string, double>& scores, double budget_s) {
    require_budget(budget_s);
    std::vector<const corpus::Clip*> order;
    order.reserve(c.clips.size());
    for (const corpus::Clip& clip : c.clips) {
        if (!scores.count(clip.id)) throw ParameterError("no score for clip: " + clip.id);
        order.push_back(&clip);
    }
    std::sort(order.begin(), order.end(),
              [&scores](const corpus::Clip* a, const corpus::Clip* b) {
                  const double sa = scores.at(a->id), sb = scores.at(b->id);
                  if (sa != sb) return sa > sb;
                  return a->id < b->id;
              });

    PlanBuilder b(Method::loss, 0, budget_s);
    bool want_more = true;
    for (const corpus::Clip* clip : order) {
        if (!want_more) break;
        want_more = b.add(*clip, scores.at(clip->id));
    }
    return b.finish(want_more);
}

SelectionPlan select_fps_content(const corpus::Corpus& c,
                                 const std::map<std::string, features::TrigramSet>& trigrams,
                                 double budget_s, std::uint64_t seed) {
    require_budget(budget_s);
    const std::size_t n = c.clips.size();
    for (const corpus::Clip& clip : c.clips) {
        if (!trigrams.count(clip.id)) throw ParameterError("no trigram set for clip: " + clip.id);
    }

    PlanBuilder b(Method::content, seed, budget_s);
    if (n == 0) return b.finish(true);

    std::vector<const features::TrigramSet*> sets(n);
    for (std::size_t i = 0; i < n; ++i) sets[i] = &trigrams.at(c.clips[i].id);

    std::vector<bool> sampled(n, false);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());

    Rng rng(seed);
    std::size_t current = static_cast<std::size_t>(rng.next_below(n));
    sampled[current] = true;
    bool want_more = b.add(c.clips[current], 1.0);
    std::size_t remaining = n - 1;

    while (want_more && remaining > 0) {
        // Fold the newest pick into each candidate's nearest-sampled distance.
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
            const std::size_t ii = static_cast<std::size_t>(i);
            if (sampled[ii]) continue;
            const double d = features::jaccard_distance(*sets[current], *sets[ii]);
            if (d < min_dist[ii]) min_dist[ii] = d;
        }

        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (sampled[i]) continue;
            if (best == n || min_dist[i] > min_dist[best] ||
                (min_dist[i] == min_dist[best] && c.clips[i].id < c.clips[best].id)) {
                best = i;
            }
        }
        sampled[best] = true;
        current = best;
        --remaining;
        want_more = b.add(c.clips[best], min_dist[best]);
    }
    return b.finish(want_more);
}

SelectionPlan select_by_transcription(const corpus::Corpus& c,
                                      const std::map<std::string, std::vector<double>>& embeddings,
                                      int k, double budget_s, std::uint64_t seed,
                                      ClusterOrder order) {
    require_budget(budget_s);
    if (k < 1) throw ParameterError("k must be >= 1");

    std::string missing;
    for (const corpus::Clip& clip : c.clips) {
        if (!embeddings.count(clip.id)) missing += (missing.empty() ? "" : ", ") + clip.id;
    }
    if (!missing.empty()) throw ParameterError("no embedding for clips: " + missing);

    PlanBuilder b(Method::transcription, seed, budget_s);
    if (c.clips.empty()) return b.finish(true);

    const std::size_t dim = embeddings.at(c.clips.front().id).size();
    Matrix points(c.clips.size(), dim);
    for (std::size_t i = 0; i < c.clips.size(); ++i) {
        const auto& e = embeddings.at(c.clips[i].id);
        if (e.size() != dim) throw ParameterError("embedding dim mismatch: " + c.clips[i].id);
        std::copy(e.begin(), e.end(), points.row(i));
    }

    const features::KMeansModel km =
        features::kmeans_fit(points, k, derive_seed(seed, "kmeans"));
    const std::vector<int> assign = features::kmeans_assign(points, km);

    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < assign.size(); ++i) {
        buckets[static_cast<std::size_t>(assign[i])].push_back(i);
    }

    Rng rng(derive_seed(seed, "order"));
    for (int cl = 0; cl < k; ++cl) {
        auto& bucket = buckets[static_cast<std::size_t>(cl)];
        if (order == ClusterOrder::shuffled) {
            shuffle(bucket, rng);
        } else {
            std::sort(bucket.begin(), bucket.end(),
                      [&](std::size_t a, std::size_t bb) {
                          double da = 0.0, db = 0.0;
                          for (std::size_t j = 0; j < dim; ++j) {
                              const double xa = points(a, j) - km.centroids(static_cast<std::size_t>(cl), j);
                              const double xb = points(bb, j) - km.centroids(static_cast<std::size_t>(cl), j);
                              da += xa * xa;
                              db += xb * xb;
                          }
                          if (da != db) return da < db;
                          return c.clips[a].id < c.clips[bb].id;
                      });
        }
    }

    std::vector<std::size_t> cursor(static_cast<std::size_t>(k), 0);
    bool want_more = true;
    bool any_left = true;
    while (want_more && any_left) {
        any_left = false;
        for (int cl = 0; cl < k && want_more; ++cl) {
            auto& bucket = buckets[static_cast<std::size_t>(cl)];
            auto& cur = cursor[static_cast<std::size_t>(cl)];
            if (cur >= bucket.size()) continue;  // exhausted cluster
            any_left = true;
            want_more = b.add(c.clips[bucket[cur]], static_cast<double>(cl));
            ++cur;
        }
        if (want_more) {
            any_left = false;
            for (int cl = 0; cl < k; ++cl) {
                if (cursor[static_cast<std::size_t>(cl)] <
                    buckets[static_cast<std::size_t>(cl)].size()) {
                    any_left = true;
                }
            }
        }
    }
    return b.finish(want_more);
}

SelectionPlan select_most_speakers(const corpus::Corpus& c, double budget_s, std::uint64_t seed) {
    require_budget(budget_s);

    std::string missing;
    for (const corpus::Clip& clip : c.clips) {
        if (!clip.speaker_id) missing += (missing.empty() ? "" : ", ") + clip.id;
    }
    if (!missing.empty()) throw ParameterError("no speaker_id for clips: " + missing);

    std::map<std::string, std::vector<std::size_t>> by_speaker;
    for (std::size_t i = 0; i < c.clips.size(); ++i) {
        by_speaker[*c.clips[i].speaker_id].push_back(i);
    }

    std::vector<std::string> speakers;
    for (const auto& [spk, _] : by_speaker) speakers.push_back(spk);
    Rng rng(seed);
    shuffle(speakers, rng);

    for (auto& [spk, clips] : by_speaker) {
        std::sort(clips.begin(), clips.end(), [&c](std::size_t a, std::size_t b) {
            if (c.clips[a].samples.size() != c.clips[b].samples.size()) {
                return c.clips[a].samples.size() < c.clips[b].samples.size();
            }
            return c.clips[a].id < c.clips[b].id;
        });
    }

    PlanBuilder b(Method::most_speakers, seed, budget_s);
    std::map<std::string, std::size_t> cursor;
    bool want_more = true;
    bool any_left = !c.clips.empty();
    while (want_more && any_left) {
        any_left = false;
        for (const std::string& spk : speakers) {
            if (!want_more) break;
            const auto& clips = by_speaker[spk];
            std::size_t& cur = cursor[spk];
            if (cur >= clips.size()) continue;
            any_left = true;
            const corpus::Clip& clip = c.clips[clips[cur]];
            want_more = b.add(clip, clip.duration_s());
            ++cur;
        }
        if (want_more) {
            any_left = false;
            for (const std::string& spk : speakers) {
                if (cursor[spk] < by_speaker[spk].size()) any_left = true;
            }
        }
    }
    return b.finish(want_more);
}

}  // namespace mea::selection
