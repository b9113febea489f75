#ifndef MEA_DRIVER_HPP
#define MEA_DRIVER_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mea/corpus.hpp"
#include "mea/evaluation.hpp"
#include "mea/extraction.hpp"
#include "mea/selection.hpp"
#include "mea/server.hpp"

namespace mea::driver {

// Experiment configuration. Every random choice flows from the three named
// seeds (corpus, victim, attack); everything else is derived with
// derive_seed, so a config pins a run bit for bit.
struct RunConfig {
    std::filesystem::path output_dir = "runs/out";

    struct {
        int num_speakers = 8;
        int clips_per_speaker = 16;
        double dur_min_s = 2.5;
        double dur_max_s = 9.0;
        std::uint64_t seed = 1;
        std::string name = "synth";
    } corpus;

    struct {
        double max_len_s = 15.6;
        double min_len_s = 2.0;
    } preprocess;

    struct {
        double select = 0.6;
        double probe = 0.2;
        double eval = 0.2;
    } splits;

    struct {
        std::uint64_t seed = 11;
        int num_layers = 12;
        int dim = 64;
        int frame_len = 400;
        int hop = 320;
        double budget_s = 600.0;
        std::string host = "127.0.0.1";
        int port = 8600;
        std::vector<int> layers_allowed;  // empty: all
    } victim;

    std::uint64_t attack_seed = 7;

    struct {
        std::string method = "random";
        double budget_s = 120.0;  // H
        int transcription_k = 8;
        std::string cluster_order = "shuffled";  // or "nearest_centroid"
        int kmeans_k = 16;
        double kmeans_sample_fraction = 0.10;
        std::string embeddings_file;  // optional external embeddings
    } selection;

    int backbone_dim = 48;
    std::vector<int> target_layers = {4, 8, 12};

    struct {
        std::optional<int> steps;  // unset: 10000 * budget hours, floor 200
        int batch_size = 24;
        double peak_lr = 0.0002;
        double warmup_fraction = 0.07;
        double eps_norm = 1e-8;
        bool parallel = false;
    } train;

    void validate() const;

    std::uint64_t split_seed() const { return derive_seed(corpus.seed, "split"); }
    std::uint64_t backbone_seed() const { return derive_seed(attack_seed, "backbone"); }
    std::uint64_t selection_seed() const { return derive_seed(attack_seed, "selection"); }
    std::uint64_t kmeans_seed() const { return derive_seed(attack_seed, "kmeans"); }
    std::uint64_t train_seed() const { return derive_seed(attack_seed, "train"); }
    std::uint64_t heads_seed() const { return derive_seed(attack_seed, "heads"); }

    std::filesystem::path corpus_dir() const { return output_dir / "corpus"; }
    std::filesystem::path cache_dir() const { return output_dir / "cache"; }
    std::filesystem::path plan_path() const { return output_dir / "plan.json"; }
    std::filesystem::path checkpoint_path() const { return output_dir / "checkpoint.json"; }
    std::filesystem::path trace_path() const { return output_dir / "loss_trace.csv"; }
    std::filesystem::path report_path() const { return output_dir / "report.json"; }
};

RunConfig config_from_json_file(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

struct CorpusStats {
    std::size_t clips = 0;
    std::size_t select_clips = 0, probe_clips = 0, eval_clips = 0;
    double total_s = 0.0;
};

// Generates, preprocesses, splits, and persists the corpus manifests under
// <output_dir>/corpus/ (full.jsonl, select.jsonl, probe.jsonl, eval.jsonl).
CorpusStats gen_corpus(const RunConfig& cfg);

corpus::Corpus load_split(const RunConfig& cfg, const std::string& split);

struct SelectStats {
    selection::SelectionPlan plan;
    bool backbone_seed_clash = false;
};

// Runs the configured selection method over the select split, computing
// features / k-means / tokens / scores / embeddings on demand (cached under
// <output_dir>/cache/), and writes plan.json.
SelectStats run_select(const RunConfig& cfg);

struct ExtractStats {
    double plan_total_s = 0.0;
    double wire_seconds = 0.0;
    int wire_requests = 0;
    std::size_t pairs = 0;
    bool budget_exhausted = false;
    double initial_batch_loss = 0.0;
    double final_batch_loss = 0.0;
};

// Queries the victim service for every planned clip through the caching
// client, trains the heads, and writes checkpoint.json + loss_trace.csv.
ExtractStats run_extract(const RunConfig& cfg, const std::string& host, int port);

// Evaluates checkpoint.json against a budget-exempt local victim instance
// and writes report.json + report.txt.
evaluation::EvalReport run_evaluate(const RunConfig& cfg);

// Full pipeline per (method, budget) cell, each against a fresh in-process
// service; writes per-cell run directories plus a grid table.
std::vector<evaluation::EvalReport> run_sweep(const RunConfig& cfg,
                                              const std::vector<std::string>& methods,
                                              const std::vector<double>& budgets);

}  // namespace mea::driver

#endif
