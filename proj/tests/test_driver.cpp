#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "mea/client.hpp"
#include "mea/driver.hpp"

using namespace mea;
using namespace mea::driver;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("mea_driver_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

RunConfig small_config(const std::filesystem::path& out) {
    RunConfig cfg;
    cfg.output_dir = out;
    cfg.corpus.num_speakers = 3;
    cfg.corpus.clips_per_speaker = 8;
    cfg.corpus.dur_min_s = 2.0;
    cfg.corpus.dur_max_s = 4.0;
    cfg.corpus.seed = 5;
    cfg.victim.seed = 11;
    cfg.victim.budget_s = 200.0;
    cfg.attack_seed = 7;
    cfg.selection.method = "content";
    cfg.selection.budget_s = 20.0;
    cfg.selection.kmeans_k = 8;
    cfg.train.steps = 40;  // keep the unit test quick
    cfg.train.parallel = true;
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

victim::VictimService make_service(const RunConfig& cfg) {
    victim::VictimConfig vc;
    vc.seed = cfg.victim.seed;
    vc.num_layers = cfg.victim.num_layers;
    vc.dim = cfg.victim.dim;
    vc.frame_len = cfg.victim.frame_len;
    vc.hop = cfg.victim.hop;
    victim::ServeOptions opts;
    opts.host = "127.0.0.1";
    opts.port = 0;
    opts.budget_s = cfg.victim.budget_s;
    opts.max_clip_s = cfg.preprocess.max_len_s;
    return victim::VictimService(victim::VictimModel(vc), opts);
}

}  // namespace

TEST_CASE("config round-trips through JSON with overrides intact") {
    const auto dir = fresh_dir("config");
    std::filesystem::create_directories(dir);
    RunConfig cfg = small_config(dir / "run");
    cfg.selection.method = "transcription";
    cfg.train.steps = 123;
    save_config(cfg, dir / "config.json");

    const RunConfig back = config_from_json_file(dir / "config.json");
    CHECK(back.corpus.num_speakers == cfg.corpus.num_speakers);
    CHECK(back.corpus.seed == cfg.corpus.seed);
    CHECK(back.victim.seed == cfg.victim.seed);
    CHECK(back.attack_seed == cfg.attack_seed);
    CHECK(back.selection.method == "transcription");
    CHECK(back.selection.budget_s == cfg.selection.budget_s);
    REQUIRE(back.train.steps.has_value());
    CHECK(*back.train.steps == 123);
    CHECK(back.target_layers == cfg.target_layers);
}

TEST_CASE("config validation catches bad setups") {
    RunConfig cfg = small_config("unused");
    cfg.selection.budget_s = 1000.0;  // exceeds the victim budget
    CHECK_THROWS_AS(cfg.validate(), ParameterError);

    RunConfig splits = small_config("unused");
    splits.splits.select = 0.9;  // fractions no longer sum to 1
    CHECK_THROWS_AS(splits.validate(), ParameterError);

    RunConfig layer = small_config("unused");
    layer.target_layers = {13};
    CHECK_THROWS_AS(layer.validate(), ParameterError);
}

TEST_CASE("gen_corpus writes deterministic split manifests") {
    const auto dir = fresh_dir("gen");
    RunConfig cfg = small_config(dir / "run");
    const CorpusStats stats = gen_corpus(cfg);
    CHECK(stats.clips == stats.select_clips + stats.probe_clips + stats.eval_clips);
    CHECK(stats.clips == 24);
    CHECK(stats.total_s > 0.0);

    // Fractions honored within one clip.
    CHECK(std::llabs(static_cast<long long>(stats.select_clips) -
                     std::llround(0.6 * stats.clips)) <= 1);
    CHECK(std::llabs(static_cast<long long>(stats.probe_clips) -
                     std::llround(0.2 * stats.clips)) <= 1);
    CHECK(std::llabs(static_cast<long long>(stats.eval_clips) -
                     std::llround(0.2 * stats.clips)) <= 1);

    // Splits are disjoint and cover the corpus.
    const auto select_c = load_split(cfg, "select");
    const auto probe_c = load_split(cfg, "probe");
    const auto eval_c = load_split(cfg, "eval");
    std::set<std::string> ids;
    for (const auto& c : {select_c, probe_c, eval_c}) {
        for (const auto& clip : c.clips) CHECK(ids.insert(clip.id).second);
    }
    CHECK(ids.size() == stats.clips);

    // Re-running produces byte-identical manifests.
    const std::string before = slurp(cfg.corpus_dir() / "select.jsonl");
    RunConfig cfg2 = small_config(dir / "run2");
    gen_corpus(cfg2);
    CHECK(slurp(cfg2.corpus_dir() / "select.jsonl") == before);
}

TEST_CASE("full pipeline: select, extract, evaluate against a live service") {
    const auto dir = fresh_dir("pipeline");
    RunConfig cfg = small_config(dir / "run");
    gen_corpus(cfg);

    auto service = make_service(cfg);
    service.start();

    const SelectStats sel = run_select(cfg);
    CHECK_FALSE(sel.backbone_seed_clash);
    CHECK(sel.plan.total_duration_s >= cfg.selection.budget_s);
    CHECK(std::filesystem::exists(cfg.plan_path()));

    const ExtractStats ext = run_extract(cfg, "127.0.0.1", service.port());
    CHECK_FALSE(ext.budget_exhausted);
    CHECK(ext.pairs == sel.plan.steps.size());

    // Budget safety: the wire total equals the ledger's book exactly, and
    // matches the plan (cold cache, every planned clip served once).
    CHECK(service.ledger().spent_s() == ext.wire_seconds);
    CHECK(service.ledger().spent_s() == sel.plan.total_duration_s);
    CHECK(service.ledger().request_count() == ext.wire_requests);

    CHECK(std::filesystem::exists(cfg.checkpoint_path()));
    CHECK(std::filesystem::exists(cfg.trace_path()));
    CHECK(ext.final_batch_loss < ext.initial_batch_loss);

    // Warm cache: a re-run spends nothing further.
    const double spent_before = service.ledger().spent_s();
    const ExtractStats again = run_extract(cfg, "127.0.0.1", service.port());
    CHECK(again.wire_requests == 0);
    CHECK(service.ledger().spent_s() == spent_before);

    // Evaluation must not touch the ledger.
    victim::VictimClient probe("127.0.0.1", service.port());
    const auto budget_before = probe.get_budget();
    const auto report = run_evaluate(cfg);
    const auto budget_after = probe.get_budget();
    CHECK(budget_before.spent_s == budget_after.spent_s);
    CHECK(budget_before.request_count == budget_after.request_count);
    CHECK(std::filesystem::exists(cfg.report_path()));
    CHECK(report.agreement >= 0.0);
    CHECK(report.agreement <= 1.0);

    service.stop();
}

TEST_CASE("pipeline outputs are byte-identical across reruns") {
    const auto dir = fresh_dir("determinism");
    std::vector<std::string> plans, checkpoints, reports;
    for (int run = 0; run < 2; ++run) {
        RunConfig cfg = small_config(dir / ("run" + std::to_string(run)));
        cfg.selection.method = "loss";
        gen_corpus(cfg);
        auto service = make_service(cfg);
        service.start();
        run_select(cfg);
        run_extract(cfg, "127.0.0.1", service.port());
        service.stop();
        run_evaluate(cfg);
        plans.push_back(slurp(cfg.plan_path()));
        checkpoints.push_back(slurp(cfg.checkpoint_path()));
        reports.push_back(slurp(cfg.report_path()));
    }
    CHECK(plans[0] == plans[1]);
    CHECK(checkpoints[0] == checkpoints[1]);
    CHECK(reports[0] == reports[1]);
}

TEST_CASE("every selection method runs end-to-end on a small corpus") {
    const auto dir = fresh_dir("methods");
    for (const std::string method :
         {"random", "loss", "content", "transcription", "most_speakers"}) {
        RunConfig cfg = small_config(dir / method);
        cfg.selection.method = method;
        cfg.selection.transcription_k = 3;
        gen_corpus(cfg);
        const SelectStats sel = run_select(cfg);
        CHECK(sel.plan.total_duration_s >= cfg.selection.budget_s);
        CHECK(selection::method_name(sel.plan.method) == method);
    }
}

TEST_CASE("sweep produces a method x budget grid of reports") {
    const auto dir = fresh_dir("sweep");
    RunConfig cfg = small_config(dir / "run");
    cfg.corpus.clips_per_speaker = 6;
    cfg.victim.budget_s = 60.0;
    cfg.train.steps = 10;

    const auto reports = run_sweep(cfg, {"random", "most_speakers"}, {10.0, 20.0});
    REQUIRE(reports.size() == 4);
    std::set<std::pair<std::string, double>> cells;
    for (const auto& r : reports) {
        cells.insert({r.method, r.budget_s});
        CHECK(r.agreement >= 0.0);
        CHECK(r.agreement <= 1.0);
        CHECK(std::isfinite(r.heldout_loss));
    }
    CHECK(cells.size() == 4);
    CHECK(std::filesystem::exists(dir / "run" / "sweep" / "grid.txt"));
    const std::string grid = slurp(dir / "run" / "sweep" / "grid.txt");
    CHECK(grid.find("random") != std::string::npos);
    CHECK(grid.find("most_speakers") != std::string::npos);

    CHECK_THROWS_AS(run_sweep(cfg, {}, {10.0}), ParameterError);
}

TEST_CASE("budget exhaustion mid-plan surfaces and still trains on what arrived") {
    const auto dir = fresh_dir("exhaust");
    RunConfig cfg = small_config(dir / "run");
    gen_corpus(cfg);

    // A service whose budget is far below the plan total.
    RunConfig tight = cfg;
    tight.victim.budget_s = 6.0;
    auto service = make_service(tight);
    service.start();

    run_select(cfg);
    const ExtractStats ext = run_extract(cfg, "127.0.0.1", service.port());
    CHECK(ext.budget_exhausted);
    CHECK(ext.pairs >= 1);
    CHECK(std::filesystem::exists(cfg.checkpoint_path()));
    service.stop();
}
