// Experiment driver: generate a corpus, serve the victim, select clips under
// a query budget, extract the surrogate heads, and evaluate agreement.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "mea/client.hpp"
#include "mea/driver.hpp"

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop = true; }

void append_log(const mea::driver::RunConfig& cfg, const std::string& line) {
    std::filesystem::create_directories(cfg.output_dir);
    std::ofstream log(cfg.output_dir / "log.txt", std::ios::app);
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
    log << stamp << "Z " << line << "\n";
}

void persist_config(const mea::driver::RunConfig& cfg) {
    mea::driver::save_config(cfg, cfg.output_dir / "config.json");
}

std::pair<std::string, int> parse_bind(const std::string& bind) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) {
        throw mea::ParameterError("--bind must look like host:port");
    }
    return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
}

std::vector<double> parse_budget_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

std::vector<std::string> parse_name_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"meabench: model-extraction test bench for representation-serving APIs"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand

    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration; flags override its keys")
        ->check(CLI::ExistingFile);

    // Shared overrides.
    std::string out_dir, method, bind, endpoint;
    double budget = -1.0, victim_budget = -1.0;
    std::uint64_t seed_corpus = 0, seed_victim = 0, seed_attack = 0;
    bool have_seed_corpus = false, have_seed_victim = false, have_seed_attack = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--out", out_dir, "run directory");
        cmd->add_option_function<std::uint64_t>(
               "--seed-corpus", [&](std::uint64_t v) { seed_corpus = v; have_seed_corpus = true; },
               "corpus seed");
        cmd->add_option_function<std::uint64_t>(
               "--seed-victim", [&](std::uint64_t v) { seed_victim = v; have_seed_victim = true; },
               "victim seed");
        cmd->add_option_function<std::uint64_t>(
               "--seed-attack", [&](std::uint64_t v) { seed_attack = v; have_seed_attack = true; },
               "attack seed");
    };

    auto* gen = app.add_subcommand("gen-corpus", "generate and split the synthetic corpus");
    int speakers = -1, clips_per_speaker = -1;
    double dur_min = -1.0, dur_max = -1.0;
    gen->add_option("--speakers", speakers, "number of speakers");
    gen->add_option("--clips-per-speaker", clips_per_speaker, "clips per speaker");
    gen->add_option("--dur-min", dur_min, "minimum clip duration, seconds");
    gen->add_option("--dur-max", dur_max, "maximum clip duration, seconds");
    add_common(gen);

    auto* serve = app.add_subcommand("serve-victim", "serve representations until signalled");
    std::string layers_allowed_csv, ledger_log_path;
    serve->add_option("--seed", seed_victim, "victim model seed")
        ->each([&](const std::string&) { have_seed_victim = true; });
    serve->add_option("--budget-seconds", victim_budget, "query budget in seconds");
    serve->add_option("--bind", bind, "host:port to bind");
    serve->add_option("--layers-allowed", layers_allowed_csv, "comma list of servable layers");
    serve->add_option("--ledger-log", ledger_log_path, "accepted-request log file");
    add_common(serve);

    auto* select = app.add_subcommand("select", "build a selection plan under the budget");
    select->add_option("--method", method,
                       "random | loss | content | transcription | most_speakers");
    select->add_option("--budget", budget, "selection budget H in seconds");
    add_common(select);

    auto* extract = app.add_subcommand("extract", "query planned clips and train the heads");
    extract->add_option("--endpoint", endpoint, "victim service host:port");
    add_common(extract);

    auto* evaluate = app.add_subcommand("evaluate", "score the checkpoint against the victim");
    add_common(evaluate);

    auto* sweep = app.add_subcommand("sweep", "method x budget grid of full runs");
    std::string methods_csv = "random", budgets_csv = "30,120";
    sweep->add_option("--methods", methods_csv, "comma list of methods");
    sweep->add_option("--budgets", budgets_csv, "comma list of budgets in seconds");
    add_common(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }

    mea::driver::RunConfig cfg;
    if (!config_path.empty()) cfg = mea::driver::config_from_json_file(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (have_seed_corpus) cfg.corpus.seed = seed_corpus;
    if (have_seed_victim) cfg.victim.seed = seed_victim;
    if (have_seed_attack) cfg.attack_seed = seed_attack;
    if (!method.empty()) cfg.selection.method = method;
    if (budget > 0.0) cfg.selection.budget_s = budget;
    if (victim_budget > 0.0) cfg.victim.budget_s = victim_budget;
    if (speakers > 0) cfg.corpus.num_speakers = speakers;
    if (clips_per_speaker > 0) cfg.corpus.clips_per_speaker = clips_per_speaker;
    if (dur_min > 0.0) cfg.corpus.dur_min_s = dur_min;
    if (dur_max > 0.0) cfg.corpus.dur_max_s = dur_max;
    if (!bind.empty()) {
        auto [host, port] = parse_bind(bind);
        cfg.victim.host = host;
        cfg.victim.port = port;
    }
    if (!layers_allowed_csv.empty()) {
        cfg.victim.layers_allowed.clear();
        for (const std::string& item : parse_name_list(layers_allowed_csv)) {
            cfg.victim.layers_allowed.push_back(std::stoi(item));
        }
    }

    if (gen->parsed()) {
        persist_config(cfg);
        const auto stats = mea::driver::gen_corpus(cfg);
        std::printf("corpus: %zu clips (%zu select / %zu probe / %zu eval), total %.4f h\n",
                    stats.clips, stats.select_clips, stats.probe_clips, stats.eval_clips,
                    stats.total_s / 3600.0);
        append_log(cfg, "gen-corpus ok");
        return 0;
    }

    if (serve->parsed()) {
        persist_config(cfg);
        std::filesystem::create_directories(cfg.output_dir);
        const auto log_path = ledger_log_path.empty()
                                  ? (cfg.output_dir / "ledger.jsonl").string()
                                  : ledger_log_path;
        std::ofstream ledger_log(log_path, std::ios::app);

        mea::victim::VictimConfig vc;
        vc.seed = cfg.victim.seed;
        vc.num_layers = cfg.victim.num_layers;
        vc.dim = cfg.victim.dim;
        vc.frame_len = cfg.victim.frame_len;
        vc.hop = cfg.victim.hop;

        mea::victim::ServeOptions opts;
        opts.host = cfg.victim.host;
        opts.port = cfg.victim.port;
        opts.budget_s = cfg.victim.budget_s;
        opts.max_clip_s = cfg.preprocess.max_len_s;
        opts.layers_allowed = cfg.victim.layers_allowed;
        opts.ledger_log = [&ledger_log](const std::string& line) {
            ledger_log << line << "\n";
            ledger_log.flush();
        };

        mea::victim::VictimService service(mea::victim::VictimModel(vc), opts);
        std::signal(SIGINT, handle_signal);
        std::signal(SIGTERM, handle_signal);
        service.start();
        std::printf("serving on %s:%d (budget %.1f s); Ctrl-C to stop\n", opts.host.c_str(),
                    service.port(), opts.budget_s);
        std::fflush(stdout);
        while (!g_stop && service.running()) {
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
        service.stop();
        std::printf("stopped; %d accepted requests, %.3f s spent\n",
                    service.ledger().request_count(), service.ledger().spent_s());
        append_log(cfg, "serve-victim stopped");
        return 0;
    }

    if (select->parsed()) {
        persist_config(cfg);
        const auto stats = mea::driver::run_select(cfg);
        if (stats.backbone_seed_clash) {
            std::fprintf(stderr,
                         "warning: backbone seed equals the victim seed; the attacker "
                         "should not share victim weights\n");
        }
        std::printf("plan: %zu clips, total %.3f s vs budget %.3f s%s -> %s\n",
                    stats.plan.steps.size(), stats.plan.total_duration_s, stats.plan.budget_s,
                    stats.plan.exhausted ? " (corpus exhausted)" : "",
                    cfg.plan_path().string().c_str());
        append_log(cfg, "select ok");
        return 0;
    }

    if (extract->parsed()) {
        persist_config(cfg);
        std::string host = cfg.victim.host;
        int port = cfg.victim.port;
        if (!endpoint.empty()) {
            auto [h, p] = parse_bind(endpoint);
            host = h;
            port = p;
        }
        const auto stats = mea::driver::run_extract(cfg, host, port);
        std::printf("extract: %zu pairs, %.3f s over the wire in %d requests; "
                    "batch loss %.6f -> %.6f -> %s\n",
                    stats.pairs, stats.wire_seconds, stats.wire_requests,
                    stats.initial_batch_loss, stats.final_batch_loss,
                    cfg.checkpoint_path().string().c_str());
        append_log(cfg, "extract ok");
        if (stats.budget_exhausted) {
            std::fprintf(stderr, "budget exhausted before the plan completed\n");
            return 3;
        }
        return 0;
    }

    if (evaluate->parsed()) {
        persist_config(cfg);
        const auto report = mea::driver::run_evaluate(cfg);
        std::printf("evaluate: agreement %.4f, probe acc victim %.4f / surrogate %.4f, "
                    "held-out loss %.6f -> %s\n",
                    report.agreement, report.probe_accuracy_victim,
                    report.probe_accuracy_surrogate, report.heldout_loss,
                    cfg.report_path().string().c_str());
        append_log(cfg, "evaluate ok");
        return 0;
    }

    if (sweep->parsed()) {
        persist_config(cfg);
        const auto reports = mea::driver::run_sweep(cfg, parse_name_list(methods_csv),
                                                    parse_budget_list(budgets_csv));
        std::cout << mea::evaluation::render_report_table(reports);
        append_log(cfg, "sweep ok");
        return 0;
    }

    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const mea::BudgetError& e) {
        std::fprintf(stderr, "budget error: %s\n", e.what());
        return 3;
    } catch (const mea::ParameterError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const mea::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 5;
    } catch (const mea::Error& e) {  // parse / integrity / io / transport
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
