#include "mea/driver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mea/client.hpp"
#include "mea/features.hpp"

using nlohmann::json;

namespace mea::driver {

namespace {

features::Backbone make_backbone(const RunConfig& cfg) {
    return features::Backbone(cfg.backbone_seed(), cfg.backbone_dim, cfg.victim.frame_len,
                              cfg.victim.hop);
}

victim::VictimConfig victim_config(const RunConfig& cfg) {
    victim::VictimConfig vc;
    vc.num_layers = cfg.victim.num_layers;
    vc.dim = cfg.victim.dim;
    vc.frame_len = cfg.victim.frame_len;
    vc.hop = cfg.victim.hop;
    vc.seed = cfg.victim.seed;
    return vc;
}

std::vector<Matrix> featurize_all(const features::Backbone& backbone,
                                  const corpus::Corpus& corpus) {
    std::vector<Matrix> feats(corpus.clips.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(corpus.clips.size()); ++i) {
        feats[static_cast<std::size_t>(i)] =
            backbone.features(corpus.clips[static_cast<std::size_t>(i)].samples);
    }
    return feats;
}

// Fits (or reloads) the frame-space k-means model on a seeded fraction of
// all backbone frames pooled corpus-wide.
features::KMeansModel get_or_build_kmeans(const RunConfig& cfg, const corpus::Corpus& corpus,
                                          const features::Backbone& backbone,
                                          const std::vector<Matrix>& feats) {
    const auto path = cfg.cache_dir() / "kmeans.json";
    if (std::filesystem::exists(path)) {
        features::KMeansModel model = features::load_kmeans(path);
        if (model.k == cfg.selection.kmeans_k &&
            model.centroids.cols() == static_cast<std::size_t>(backbone.dim())) {
            return model;
        }
    }

    std::size_t total_frames = 0;
    for (const Matrix& f : feats) total_frames += f.rows();
    Matrix pooled(total_frames, static_cast<std::size_t>(backbone.dim()));
    std::size_t at = 0;
    for (const Matrix& f : feats) {
        std::copy(f.data().begin(), f.data().end(), pooled.data().begin() + at * pooled.cols());
        at += f.rows();
    }

    const Matrix sample = features::sample_fraction(pooled, cfg.selection.kmeans_sample_fraction,
                                                    derive_seed(cfg.kmeans_seed(), "sample"));
    features::KMeansModel model =
        features::kmeans_fit(sample, cfg.selection.kmeans_k, cfg.kmeans_seed());
    std::filesystem::create_directories(cfg.cache_dir());
    features::save_kmeans(model, path);
    return model;
}

std::map<std::string, features::TrigramSet> build_trigrams(const RunConfig& cfg,
                                                           const corpus::Corpus& corpus,
                                                           const std::vector<Matrix>& feats,
                                                           const features::KMeansModel& km) {
    const auto cache_path = cfg.cache_dir() / "tokens.jsonl";
    std::map<std::string, features::TokenSequence> tokens =
        features::load_token_cache(cache_path, km.hash());

    bool added = false;
    for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
        const std::string& id = corpus.clips[i].id;
        if (tokens.count(id)) continue;
        tokens[id] = features::tokenize(feats[i], km);
        added = true;
    }
    if (added) {
        std::filesystem::create_directories(cfg.cache_dir());
        features::save_token_cache(cache_path, km.hash(), tokens);
    }

    std::map<std::string, features::TrigramSet> trigrams;
    for (const auto& clip : corpus.clips) {
        trigrams[clip.id] = features::trigram_set(tokens.at(clip.id));
    }
    return trigrams;
}

std::map<std::string, std::vector<double>> build_embeddings(const RunConfig& cfg,
                                                            const corpus::Corpus& corpus) {
    if (!cfg.selection.embeddings_file.empty()) {
        return features::load_embeddings_file(cfg.selection.embeddings_file);
    }
    std::string missing;
    std::map<std::string, std::vector<double>> out;
    for (const auto& clip : corpus.clips) {
        if (!clip.transcription) {
            missing += (missing.empty() ? "" : ", ") + clip.id;
            continue;
        }
        out[clip.id] = features::text_embedding(*clip.transcription).v;
    }
    if (!missing.empty()) throw ParameterError("no transcription for clips: " + missing);
    return out;
}

}  // namespace

void RunConfig::validate() const {
    if (corpus.num_speakers < 1 || corpus.clips_per_speaker < 1) {
        throw ParameterError("corpus needs at least one speaker and one clip per speaker");
    }
    if (!(corpus.dur_min_s > 0.0) || corpus.dur_min_s > corpus.dur_max_s ||
        corpus.dur_max_s > 60.0) {
        throw ParameterError("corpus duration range must satisfy 0 < min <= max <= 60");
    }
    const double frac_sum = splits.select + splits.probe + splits.eval;
    if (splits.select < 0.0 || splits.probe < 0.0 || splits.eval < 0.0 ||
        std::fabs(frac_sum - 1.0) > 1e-9) {
        throw ParameterError("split fractions must be nonnegative and sum to 1");
    }
    if (!(selection.budget_s > 0.0)) throw ParameterError("selection budget must be positive");
    if (selection.budget_s > victim.budget_s) {
        throw ParameterError("selection budget exceeds the victim budget");
    }
    if (target_layers.empty()) throw ParameterError("need at least one target layer");
    for (int n : target_layers) {
        if (n < 1 || n > victim.num_layers) {
            throw ParameterError("target layer " + std::to_string(n) + " out of range");
        }
    }
    if (backbone_dim < 1) throw ParameterError("backbone_dim must be positive");
}

RunConfig config_from_json_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw ParseError("config " + path.string() + ": " + e.what());
    }

    RunConfig cfg;
    cfg.output_dir = doc.value("output_dir", cfg.output_dir.string());
    if (doc.contains("corpus")) {
        const json& c = doc["corpus"];
        cfg.corpus.num_speakers = c.value("num_speakers", cfg.corpus.num_speakers);
        cfg.corpus.clips_per_speaker = c.value("clips_per_speaker", cfg.corpus.clips_per_speaker);
        cfg.corpus.dur_min_s = c.value("dur_min_s", cfg.corpus.dur_min_s);
        cfg.corpus.dur_max_s = c.value("dur_max_s", cfg.corpus.dur_max_s);
        cfg.corpus.seed = c.value("seed", cfg.corpus.seed);
        cfg.corpus.name = c.value("name", cfg.corpus.name);
    }
    if (doc.contains("preprocess")) {
        const json& p = doc["preprocess"];
        cfg.preprocess.max_len_s = p.value("max_len_s", cfg.preprocess.max_len_s);
        cfg.preprocess.min_len_s = p.value("min_len_s", cfg.preprocess.min_len_s);
    }
    if (doc.contains("splits")) {
        const json& s = doc["splits"];
        cfg.splits.select = s.value("select", cfg.splits.select);
        cfg.splits.probe = s.value("probe", cfg.splits.probe);
        cfg.splits.eval = s.value("eval", cfg.splits.eval);
    }
    if (doc.contains("victim")) {
        const json& v = doc["victim"];
        cfg.victim.seed = v.value("seed", cfg.victim.seed);
        cfg.victim.num_layers = v.value("num_layers", cfg.victim.num_layers);
        cfg.victim.dim = v.value("dim", cfg.victim.dim);
        cfg.victim.frame_len = v.value("frame_len", cfg.victim.frame_len);
        cfg.victim.hop = v.value("hop", cfg.victim.hop);
        cfg.victim.budget_s = v.value("budget_s", cfg.victim.budget_s);
        cfg.victim.host = v.value("host", cfg.victim.host);
        cfg.victim.port = v.value("port", cfg.victim.port);
        cfg.victim.layers_allowed =
            v.value("layers_allowed", cfg.victim.layers_allowed);
    }
    cfg.attack_seed = doc.value("attack_seed", cfg.attack_seed);
    if (doc.contains("selection")) {
        const json& s = doc["selection"];
        cfg.selection.method = s.value("method", cfg.selection.method);
        cfg.selection.budget_s = s.value("budget_s", cfg.selection.budget_s);
        cfg.selection.transcription_k = s.value("transcription_k", cfg.selection.transcription_k);
        cfg.selection.cluster_order = s.value("cluster_order", cfg.selection.cluster_order);
        cfg.selection.kmeans_k = s.value("kmeans_k", cfg.selection.kmeans_k);
        cfg.selection.kmeans_sample_fraction =
            s.value("kmeans_sample_fraction", cfg.selection.kmeans_sample_fraction);
        cfg.selection.embeddings_file = s.value("embeddings_file", cfg.selection.embeddings_file);
    }
    cfg.backbone_dim = doc.value("backbone_dim", cfg.backbone_dim);
    cfg.target_layers = doc.value("target_layers", cfg.target_layers);
    if (doc.contains("train")) {
        const json& t = doc["train"];
        if (t.contains("steps") && !t["steps"].is_null()) {
            cfg.train.steps = t["steps"].get<int>();
        }
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.peak_lr = t.value("peak_lr", cfg.train.peak_lr);
        cfg.train.warmup_fraction = t.value("warmup_fraction", cfg.train.warmup_fraction);
        cfg.train.eps_norm = t.value("eps_norm", cfg.train.eps_norm);
        cfg.train.parallel = t.value("parallel", cfg.train.parallel);
    }
    return cfg;
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
    json doc{
        {"output_dir", cfg.output_dir.string()},
        {"corpus",
         {{"num_speakers", cfg.corpus.num_speakers},
          {"clips_per_speaker", cfg.corpus.clips_per_speaker},
          {"dur_min_s", cfg.corpus.dur_min_s},
          {"dur_max_s", cfg.corpus.dur_max_s},
          {"seed", cfg.corpus.seed},
          {"name", cfg.corpus.name}}},
        {"preprocess",
         {{"max_len_s", cfg.preprocess.max_len_s}, {"min_len_s", cfg.preprocess.min_len_s}}},
        {"splits",
         {{"select", cfg.splits.select}, {"probe", cfg.splits.probe}, {"eval", cfg.splits.eval}}},
        {"victim",
         {{"seed", cfg.victim.seed},
          {"num_layers", cfg.victim.num_layers},
          {"dim", cfg.victim.dim},
          {"frame_len", cfg.victim.frame_len},
          {"hop", cfg.victim.hop},
          {"budget_s", cfg.victim.budget_s},
          {"host", cfg.victim.host},
          {"port", cfg.victim.port},
          {"layers_allowed", cfg.victim.layers_allowed}}},
        {"attack_seed", cfg.attack_seed},
        {"selection",
         {{"method", cfg.selection.method},
          {"budget_s", cfg.selection.budget_s},
          {"transcription_k", cfg.selection.transcription_k},
          {"cluster_order", cfg.selection.cluster_order},
          {"kmeans_k", cfg.selection.kmeans_k},
          {"kmeans_sample_fraction", cfg.selection.kmeans_sample_fraction},
          {"embeddings_file", cfg.selection.embeddings_file}}},
        {"backbone_dim", cfg.backbone_dim},
        {"target_layers", cfg.target_layers},
        {"train",
         {{"steps", cfg.train.steps ? json(*cfg.train.steps) : json(nullptr)},
          {"batch_size", cfg.train.batch_size},
          {"peak_lr", cfg.train.peak_lr},
          {"warmup_fraction", cfg.train.warmup_fraction},
          {"eps_norm", cfg.train.eps_norm},
          {"parallel", cfg.train.parallel}}},
    };
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << doc.dump(2) << "\n";
}

CorpusStats gen_corpus(const RunConfig& cfg) {
    cfg.validate();
    const corpus::Corpus raw =
        corpus::generate_corpus(cfg.corpus.num_speakers, cfg.corpus.clips_per_speaker,
                                {cfg.corpus.dur_min_s, cfg.corpus.dur_max_s}, cfg.corpus.seed,
                                cfg.corpus.name);
    const corpus::Corpus pre =
        corpus::preprocess(raw, cfg.preprocess.max_len_s, cfg.preprocess.min_len_s);
    corpus::validate(pre);

    // Largest-remainder split so every split lands within one clip of its
    // fraction.
    const std::size_t n = pre.clips.size();
    const double targets[3] = {cfg.splits.select * n, cfg.splits.probe * n, cfg.splits.eval * n};
    std::size_t counts[3];
    for (int i = 0; i < 3; ++i) counts[i] = static_cast<std::size_t>(std::floor(targets[i]));
    std::size_t assigned = counts[0] + counts[1] + counts[2];
    std::vector<int> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double ra = targets[a] - std::floor(targets[a]);
        const double rb = targets[b] - std::floor(targets[b]);
        if (ra != rb) return ra > rb;
        return a < b;
    });
    for (int i = 0; assigned < n; ++i, ++assigned) counts[order[static_cast<std::size_t>(i % 3)]]++;

    // Stratified order: shuffle within each label, then interleave labels
    // round-robin, so every split sees every label once it holds at least
    // one clip per label.
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < n; ++i) by_label[pre.clips[i].generator_label].push_back(i);
    Rng rng(cfg.split_seed());
    for (auto& [label, members] : by_label) shuffle(members, rng);

    std::vector<std::size_t> idx;
    idx.reserve(n);
    for (std::size_t round = 0; idx.size() < n; ++round) {
        for (auto& [label, members] : by_label) {
            if (round < members.size()) idx.push_back(members[round]);
        }
    }

    std::vector<int> split_of(n, 2);
    std::size_t at = 0;
    for (int s = 0; s < 3; ++s) {
        for (std::size_t i = 0; i < counts[s]; ++i) split_of[idx[at++]] = s;
    }

    corpus::Corpus splits[3];
    const char* names[3] = {"select", "probe", "eval"};
    for (int s = 0; s < 3; ++s) splits[s].name = names[s];
    for (std::size_t i = 0; i < n; ++i) {
        splits[split_of[i]].clips.push_back(pre.clips[i]);  // keep manifest order
    }

    std::filesystem::create_directories(cfg.corpus_dir());
    corpus::save_manifest(pre, cfg.corpus_dir() / "full.jsonl");
    for (int s = 0; s < 3; ++s) {
        corpus::save_manifest(splits[s], cfg.corpus_dir() / (std::string(names[s]) + ".jsonl"));
    }

    CorpusStats stats;
    stats.clips = n;
    stats.select_clips = splits[0].clips.size();
    stats.probe_clips = splits[1].clips.size();
    stats.eval_clips = splits[2].clips.size();
    stats.total_s = corpus::total_duration(pre);
    return stats;
}

corpus::Corpus load_split(const RunConfig& cfg, const std::string& split) {
    return corpus::load_manifest(cfg.corpus_dir() / (split + ".jsonl"));
}

SelectStats run_select(const RunConfig& cfg) {
    cfg.validate();
    const corpus::Corpus select_corpus = load_split(cfg, "select");
    const selection::Method method = selection::method_from_name(cfg.selection.method);
    const double budget = cfg.selection.budget_s;

    SelectStats stats;
    const features::Backbone backbone = make_backbone(cfg);
    stats.backbone_seed_clash = backbone.seed_clashes(cfg.victim.seed);

    selection::SelectionPlan plan;
    switch (method) {
        case selection::Method::random:
            plan = selection::select_random(select_corpus, budget, cfg.selection_seed());
            break;
        case selection::Method::loss: {
            const std::vector<Matrix> feats = featurize_all(backbone, select_corpus);
            const features::KMeansModel km =
                get_or_build_kmeans(cfg, select_corpus, backbone, feats);
            std::vector<double> scores(select_corpus.clips.size());
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(select_corpus.clips.size());
                 ++i) {
                scores[static_cast<std::size_t>(i)] =
                    selection::pretraining_loss_score(
                        select_corpus.clips[static_cast<std::size_t>(i)], backbone, km)
                        .score;
            }
            std::map<std::string, double> score_map;
            for (std::size_t i = 0; i < select_corpus.clips.size(); ++i) {
                score_map[select_corpus.clips[i].id] = scores[i];
            }
            plan = selection::select_by_loss(select_corpus, score_map, budget);
            break;
        }
        case selection::Method::content: {
            const std::vector<Matrix> feats = featurize_all(backbone, select_corpus);
            const features::KMeansModel km =
                get_or_build_kmeans(cfg, select_corpus, backbone, feats);
            const auto trigrams = build_trigrams(cfg, select_corpus, feats, km);
            plan = selection::select_fps_content(select_corpus, trigrams, budget,
                                                 cfg.selection_seed());
            break;
        }
        case selection::Method::transcription: {
            const auto embeddings = build_embeddings(cfg, select_corpus);
            const auto order = cfg.selection.cluster_order == "nearest_centroid"
                                   ? selection::ClusterOrder::nearest_centroid
                                   : selection::ClusterOrder::shuffled;
            plan = selection::select_by_transcription(select_corpus, embeddings,
                                                      cfg.selection.transcription_k, budget,
                                                      cfg.selection_seed(), order);
            break;
        }
        case selection::Method::most_speakers:
            plan = selection::select_most_speakers(select_corpus, budget, cfg.selection_seed());
            break;
    }

    selection::save_plan(plan, cfg.plan_path());
    stats.plan = std::move(plan);
    return stats;
}

ExtractStats run_extract(const RunConfig& cfg, const std::string& host, int port) {
    cfg.validate();
    const selection::SelectionPlan plan = selection::load_plan(cfg.plan_path());
    const corpus::Corpus select_corpus = load_split(cfg, "select");
    const features::Backbone backbone = make_backbone(cfg);

    victim::VictimClient client(host, port, cfg.cache_dir() / "wire");
    const victim::ServiceInfo info = client.get_info();
    if (info.dim != cfg.victim.dim || info.frame_len != cfg.victim.frame_len ||
        info.hop != cfg.victim.hop) {
        throw ParameterError("live service geometry does not match the config");
    }

    ExtractStats stats;
    stats.plan_total_s = plan.total_duration_s;

    std::vector<extraction::TrainingPair> pairs;
    for (const std::string& id : plan.clip_ids()) {
        const corpus::Clip* clip = select_corpus.find(id);
        if (!clip) throw ParameterError("planned clip missing from select split: " + id);
        try {
            victim::LayerRepresentations reps = client.query(*clip, cfg.target_layers);
            pairs.push_back({id, backbone.features(clip->samples), std::move(reps.layers)});
        } catch (const BudgetError&) {
            stats.budget_exhausted = true;
            break;
        }
    }
    stats.wire_seconds = client.wire_seconds();
    stats.wire_requests = client.wire_requests();
    stats.pairs = pairs.size();
    if (pairs.empty()) {
        throw BudgetError("budget exhausted before any planned clip was served");
    }

    extraction::SurrogateHeads heads = extraction::SurrogateHeads::random_init(
        cfg.target_layers, cfg.victim.dim, cfg.backbone_dim, cfg.heads_seed());

    extraction::TrainConfig tc;
    tc.budget_hours = plan.budget_s / 3600.0;
    tc.steps = cfg.train.steps;
    tc.batch_size = cfg.train.batch_size;
    tc.peak_lr = cfg.train.peak_lr;
    tc.warmup_fraction = cfg.train.warmup_fraction;
    tc.seed = cfg.train_seed();
    tc.eps_norm = cfg.train.eps_norm;
    tc.parallel = cfg.train.parallel;

    extraction::TrainResult result = extraction::train(std::move(heads), pairs, tc);
    if (!result.trace.empty()) {
        stats.initial_batch_loss = result.trace.front().batch_loss;
        stats.final_batch_loss = result.trace.back().batch_loss;
    }
    extraction::save_checkpoint(result.heads, cfg.checkpoint_path(), stats.final_batch_loss);
    extraction::save_loss_trace(result.trace, cfg.trace_path());
    return stats;
}

evaluation::EvalReport run_evaluate(const RunConfig& cfg) {
    cfg.validate();
    const extraction::SurrogateHeads heads = extraction::load_checkpoint(cfg.checkpoint_path());
    const victim::VictimModel model(victim_config(cfg));  // budget-exempt local instance
    const features::Backbone backbone = make_backbone(cfg);
    const corpus::Corpus eval_corpus = load_split(cfg, "eval");
    const corpus::Corpus probe_corpus = load_split(cfg, "probe");

    evaluation::EvalMeta meta{cfg.selection.method, cfg.selection.budget_s, cfg.attack_seed};
    const evaluation::EvalReport report =
        evaluation::evaluate(model, heads, backbone, eval_corpus, probe_corpus, meta);

    evaluation::save_report(report, cfg.report_path());
    std::ofstream table(cfg.output_dir / "report.txt");
    table << evaluation::render_report_table({report});
    return report;
}

std::vector<evaluation::EvalReport> run_sweep(const RunConfig& cfg,
                                              const std::vector<std::string>& methods,
                                              const std::vector<double>& budgets) {
    if (methods.empty() || budgets.empty()) {
        throw ParameterError("sweep needs at least one method and one budget");
    }
    std::vector<evaluation::EvalReport> reports;
    for (const std::string& method : methods) {
        for (double budget : budgets) {
            RunConfig cell = cfg;
            char tag[64];
            std::snprintf(tag, sizeof(tag), "%s_%.0fs", method.c_str(), budget);
            cell.output_dir = cfg.output_dir / "sweep" / tag;
            cell.selection.method = method;
            cell.selection.budget_s = budget;
            cell.victim.budget_s = std::max(cfg.victim.budget_s, budget);

            gen_corpus(cell);

            victim::ServeOptions opts;
            opts.host = "127.0.0.1";
            opts.port = 0;
            opts.budget_s = cell.victim.budget_s;
            opts.max_clip_s = cell.preprocess.max_len_s;
            victim::VictimService service(victim::VictimModel(victim_config(cell)), opts);
            service.start();

            run_select(cell);
            run_extract(cell, "127.0.0.1", service.port());
            service.stop();
            reports.push_back(run_evaluate(cell));
        }
    }

    std::filesystem::create_directories(cfg.output_dir / "sweep");
    std::ofstream grid(cfg.output_dir / "sweep" / "grid.txt");
    grid << evaluation::render_report_table(reports);
    return reports;
}

}  // namespace mea::driver
