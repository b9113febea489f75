#include "mea/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace mea::evaluation {

std::vector<double> time_pool(const Matrix& reps) {
    std::vector<double> pooled(reps.cols(), 0.0);
    for (std::size_t t = 0; t < reps.rows(); ++t) {
        const double* row = reps.row(t);
        for (std::size_t d = 0; d < reps.cols(); ++d) pooled[d] += row[d];
    }
    const double inv = reps.rows() > 0 ? 1.0 / static_cast<double>(reps.rows()) : 0.0;
    for (double& v : pooled) v *= inv;
    return pooled;
}

int ProbeClassifier::predict(const std::vector<double>& pooled) const {
    if (centroids.empty()) throw ParameterError("probe has no classes");
    int best = centroids.begin()->first;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [cls, centroid] : centroids) {  // ascending class id
        if (centroid.size() != pooled.size()) throw ParameterError("probe dim mismatch");
        double d = 0.0;
        for (std::size_t i = 0; i < pooled.size(); ++i) {
            const double diff = pooled[i] - centroid[i];
            d += diff * diff;
        }
        if (d < best_d) {  // strict: ties keep the lowest class id
            best_d = d;
            best = cls;
        }
    }
    return best;
}

ProbeClassifier fit_probe(const std::vector<Matrix>& reps, const std::vector<int>& labels,
                          int layer) {
    if (reps.empty() || reps.size() != labels.size()) {
        throw ParameterError("need matching, nonempty reps and labels");
    }
    ProbeClassifier probe;
    probe.layer = layer;
    std::map<int, int> counts;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        const std::vector<double> pooled = time_pool(reps[i]);
        auto& centroid = probe.centroids[labels[i]];
        if (centroid.empty()) centroid.assign(pooled.size(), 0.0);
        for (std::size_t d = 0; d < pooled.size(); ++d) centroid[d] += pooled[d];
        ++counts[labels[i]];
    }
    for (auto& [cls, centroid] : probe.centroids) {
        const double inv = 1.0 / counts[cls];
        for (double& v : centroid) v *= inv;
    }
    return probe;
}

double agreement(const std::vector<int>& victim_preds, const std::vector<int>& surrogate_preds) {
    if (victim_preds.empty() || victim_preds.size() != surrogate_preds.size()) {
        throw ParameterError("prediction lists must be nonempty and equal length");
    }
    std::size_t matches = 0;
    for (std::size_t i = 0; i < victim_preds.size(); ++i) {
        if (victim_preds[i] == surrogate_preds[i]) ++matches;
    }
    return static_cast<double>(matches) / static_cast<double>(victim_preds.size());
}

double layer_similarity(const std::vector<Matrix>& victim_reps,
                        const std::vector<Matrix>& surrogate_reps, double eps_norm) {
    if (victim_reps.size() != surrogate_reps.size() || victim_reps.empty()) {
        throw ParameterError("need matching, nonempty representation lists");
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < victim_reps.size(); ++c) {
        const Matrix& h = victim_reps[c];
        const Matrix& p = surrogate_reps[c];
        if (h.rows() != p.rows() || h.cols() != p.cols()) {
            throw ParameterError("shape mismatch in clip " + std::to_string(c));
        }
        for (std::size_t t = 0; t < h.rows(); ++t) {
            const double* ht = h.row(t);
            const double* pt = p.row(t);
            double dot = 0.0, nh2 = 0.0, np2 = 0.0;
            for (std::size_t d = 0; d < h.cols(); ++d) {
                dot += ht[d] * pt[d];
                nh2 += ht[d] * ht[d];
                np2 += pt[d] * pt[d];
            }
            const double nh = std::sqrt(nh2), np = std::sqrt(np2);
            sum += (nh < eps_norm || np < eps_norm) ? 0.0 : dot / (nh * np);
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

void save_report(const EvalReport& r, const std::filesystem::path& path) {
    json cosines = json::object();
    for (const auto& [layer, value] : r.layer_cosine) cosines[std::to_string(layer)] = value;
    json doc{{"method", r.method},
             {"budget_s", r.budget_s},
             {"seed", r.seed},
             {"agreement", r.agreement},
             {"layer_cosine", cosines},
             {"probe_accuracy_victim", r.probe_accuracy_victim},
             {"probe_accuracy_surrogate", r.probe_accuracy_surrogate},
             {"heldout_loss", r.heldout_loss},
             {"probe_layer", r.probe_layer}};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << doc.dump(2) << "\n";
}

EvalReport load_report(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw ParseError("report " + path.string() + ": " + e.what());
    }
    EvalReport r;
    r.method = doc.at("method").get<std::string>();
    r.budget_s = doc.at("budget_s").get<double>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.agreement = doc.at("agreement").get<double>();
    for (const auto& [key, value] : doc.at("layer_cosine").items()) {
        r.layer_cosine[std::stoi(key)] = value.get<double>();
    }
    r.probe_accuracy_victim = doc.at("probe_accuracy_victim").get<double>();
    r.probe_accuracy_surrogate = doc.at("probe_accuracy_surrogate").get<double>();
    r.heldout_loss = doc.at("heldout_loss").get<double>();
    r.probe_layer = doc.at("probe_layer").get<int>();
    return r;
}

std::string render_report_table(const std::vector<EvalReport>& reports) {
    std::set<double> budgets;
    std::vector<std::string> methods;  // keep first-seen order
    for (const EvalReport& r : reports) {
        budgets.insert(r.budget_s);
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
            methods.push_back(r.method);
        }
    }

    auto cell = [&reports](const std::string& method, double budget) -> const EvalReport* {
        for (const EvalReport& r : reports) {
            if (r.method == method && r.budget_s == budget) return &r;
        }
        return nullptr;
    };

    std::ostringstream out;
    char buf[64];
    out << "agreement / heldout_loss by method and budget\n";
    out << std::left;
    std::snprintf(buf, sizeof(buf), "%-16s", "method");
    out << buf;
    for (double b : budgets) {
        std::snprintf(buf, sizeof(buf), "%14.0fs", b);
        out << buf;
    }
    out << "\n";
    for (const std::string& m : methods) {
        std::snprintf(buf, sizeof(buf), "%-16s", m.c_str());
        out << buf;
        for (double b : budgets) {
            const EvalReport* r = cell(m, b);
            if (r) {
                std::snprintf(buf, sizeof(buf), "%7.3f/%-7.3f", r->agreement, r->heldout_loss);
            } else {
                std::snprintf(buf, sizeof(buf), "%15s", "-");
            }
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

EvalReport evaluate(const victim::VictimModel& model, const extraction::SurrogateHeads& heads,
                    const features::Backbone& backbone, const corpus::Corpus& eval_corpus,
                    const corpus::Corpus& probe_corpus, const EvalMeta& meta, int probe_layer) {
    if (eval_corpus.clips.empty()) throw ParameterError("eval corpus is empty");
    if (probe_corpus.clips.empty()) throw ParameterError("probe corpus is empty");
    {
        std::set<std::string> eval_ids;
        for (const auto& clip : eval_corpus.clips) eval_ids.insert(clip.id);
        for (const auto& clip : probe_corpus.clips) {
            if (eval_ids.count(clip.id)) {
                throw ParameterError("probe/eval splits overlap at clip: " + clip.id);
            }
        }
    }
    if (probe_layer == 0) {
        probe_layer = *std::max_element(heads.target_layers.begin(), heads.target_layers.end());
    }
    if (std::find(heads.target_layers.begin(), heads.target_layers.end(), probe_layer) ==
        heads.target_layers.end()) {
        throw ParameterError("probe layer " + std::to_string(probe_layer) +
                             " is not a target layer");
    }

    struct ClipReps {
        int label = 0;
        std::map<int, Matrix> victim;
        std::map<int, Matrix> surrogate;
    };
    auto compute = [&](const corpus::Corpus& corpus) {
        std::vector<ClipReps> reps(corpus.clips.size());
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(corpus.clips.size()); ++i) {
            const corpus::Clip& clip = corpus.clips[static_cast<std::size_t>(i)];
            ClipReps& r = reps[static_cast<std::size_t>(i)];
            r.label = clip.generator_label;
            r.victim = model.forward(clip.samples, heads.target_layers).layers;
            r.surrogate = heads.predict_all(backbone.features(clip.samples));
        }
        return reps;
    };

    const std::vector<ClipReps> probe_reps = compute(probe_corpus);
    const std::vector<ClipReps> eval_reps = compute(eval_corpus);

    {
        std::set<int> probe_classes, eval_classes;
        for (const ClipReps& r : probe_reps) probe_classes.insert(r.label);
        for (const ClipReps& r : eval_reps) eval_classes.insert(r.label);
        for (int cls : eval_classes) {
            if (!probe_classes.count(cls)) {
                throw ParameterError("class " + std::to_string(cls) +
                                     " has no probe-split training clips");
            }
        }
    }

    auto layer_of = [probe_layer](const std::vector<ClipReps>& reps, bool victim_side) {
        std::vector<Matrix> out;
        out.reserve(reps.size());
        for (const ClipReps& r : reps) {
            out.push_back(victim_side ? r.victim.at(probe_layer) : r.surrogate.at(probe_layer));
        }
        return out;
    };
    std::vector<int> probe_labels, eval_labels;
    for (const ClipReps& r : probe_reps) probe_labels.push_back(r.label);
    for (const ClipReps& r : eval_reps) eval_labels.push_back(r.label);

    const ProbeClassifier victim_probe = fit_probe(layer_of(probe_reps, true), probe_labels, probe_layer);
    const ProbeClassifier surrogate_probe =
        fit_probe(layer_of(probe_reps, false), probe_labels, probe_layer);

    std::vector<int> victim_preds, surrogate_preds;
    for (const ClipReps& r : eval_reps) {
        victim_preds.push_back(victim_probe.predict(time_pool(r.victim.at(probe_layer))));
        surrogate_preds.push_back(surrogate_probe.predict(time_pool(r.surrogate.at(probe_layer))));
    }

    EvalReport report;
    report.method = meta.method;
    report.budget_s = meta.budget_s;
    report.seed = meta.seed;
    report.probe_layer = probe_layer;
    report.agreement = agreement(victim_preds, surrogate_preds);

    std::size_t correct_v = 0, correct_s = 0;
    for (std::size_t i = 0; i < eval_reps.size(); ++i) {
        if (victim_preds[i] == eval_labels[i]) ++correct_v;
        if (surrogate_preds[i] == eval_labels[i]) ++correct_s;
    }
    report.probe_accuracy_victim = static_cast<double>(correct_v) / eval_reps.size();
    report.probe_accuracy_surrogate = static_cast<double>(correct_s) / eval_reps.size();

    for (int layer : heads.target_layers) {
        std::vector<Matrix> hv, hs;
        for (const ClipReps& r : eval_reps) {
            hv.push_back(r.victim.at(layer));
            hs.push_back(r.surrogate.at(layer));
        }
        report.layer_cosine[layer] = layer_similarity(hv, hs);
    }

    double loss_sum = 0.0;
    for (const ClipReps& r : eval_reps) {
        loss_sum += extraction::total_loss(r.victim, r.surrogate);
    }
    report.heldout_loss = loss_sum / static_cast<double>(eval_reps.size());
    return report;
}

}  // namespace mea::evaluation
