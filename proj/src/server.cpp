#include "mea/server.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mea/corpus.hpp"

using nlohmann::json;

namespace mea::victim {

std::string encode_representations_body(const std::string& clip_id,
                                        const LayerRepresentations& reps,
                                        double budget_remaining_s) {
    json layers = json::object();
    std::size_t t = 0, dim = 0;
    for (const auto& [n, m] : reps.layers) {
        t = m.rows();
        dim = m.cols();
        json rows = json::array();
        for (std::size_t r = 0; r < m.rows(); ++r) {
            json row = json::array();
            for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(round_sig9(m(r, c)));
            rows.push_back(std::move(row));
        }
        layers[std::to_string(n)] = std::move(rows);
    }
    json body{{"clip_id", clip_id},
              {"t", t},
              {"dim", dim},
              {"layers", std::move(layers)},
              {"budget_remaining_s", budget_remaining_s}};
    return body.dump();
}

struct VictimService::Impl {
    VictimModel model;
    ServeOptions options;
    QueryLedger ledger;
    httplib::Server server;
    std::thread thread;
    int port = 0;

    Impl(VictimModel m, ServeOptions opt)
        : model(std::move(m)), options(std::move(opt)), ledger(options.budget_s) {}
};

VictimService::VictimService(VictimModel model, ServeOptions options)
    : impl_(std::make_unique<Impl>(std::move(model), std::move(options))) {
    Impl& im = *impl_;
    const VictimConfig& cfg = im.model.config();

    std::vector<int> allowed = im.options.layers_allowed;
    if (allowed.empty()) {
        for (int n = 1; n <= cfg.num_layers; ++n) allowed.push_back(n);
    }

    auto reply_json = [](httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };

    im.server.Get("/v1/info", [&im, cfg](const httplib::Request&, httplib::Response& res) {
        json body{{"num_layers", cfg.num_layers},
                  {"dim", cfg.dim},
                  {"frame_len", cfg.frame_len},
                  {"hop", cfg.hop}};
        res.set_content(body.dump(), "application/json");
    });

    im.server.Get("/v1/budget", [&im](const httplib::Request&, httplib::Response& res) {
        json body{{"limit_s", im.ledger.limit_s()},
                  {"spent_s", im.ledger.spent_s()},
                  {"request_count", im.ledger.request_count()}};
        res.set_content(body.dump(), "application/json");
    });

    im.server.Post("/v1/representations", [&im, cfg, allowed, reply_json](
                                              const httplib::Request& req,
                                              httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception& e) {
            reply_json(res, 400, {{"error", "malformed"}, {"detail", e.what()}});
            return;
        }
        if (!body.contains("clip_id") || !body["clip_id"].is_string() ||
            !body.contains("samples") || !body["samples"].is_array() ||
            !body.contains("layers") || !body["layers"].is_array()) {
            reply_json(res, 400,
                       {{"error", "malformed"},
                        {"detail", "need clip_id, sample_rate, samples, layers"}});
            return;
        }
        if (body.value("sample_rate", 0) != corpus::kSampleRate) {
            reply_json(res, 400, {{"error", "malformed"}, {"detail", "sample_rate must be 16000"}});
            return;
        }

        std::vector<double> samples;
        std::vector<int> layers;
        try {
            samples = body["samples"].get<std::vector<double>>();
            layers = body["layers"].get<std::vector<int>>();
        } catch (const json::exception& e) {
            reply_json(res, 400, {{"error", "malformed"}, {"detail", e.what()}});
            return;
        }
        if (layers.empty()) {
            reply_json(res, 400, {{"error", "malformed"}, {"detail", "no layers requested"}});
            return;
        }
        for (int n : layers) {
            if (n < 1 || n > cfg.num_layers ||
                std::find(allowed.begin(), allowed.end(), n) == allowed.end()) {
                reply_json(res, 400,
                           {{"error", "malformed"},
                            {"detail", "layer " + std::to_string(n) + " not served"}});
                return;
            }
        }
        if (samples.size() < static_cast<std::size_t>(cfg.frame_len)) {
            reply_json(res, 400, {{"error", "malformed"}, {"detail", "clip too short to frame"}});
            return;
        }
        for (double v : samples) {
            if (!std::isfinite(v)) {
                reply_json(res, 400, {{"error", "malformed"}, {"detail", "non-finite sample"}});
                return;
            }
        }

        const double duration_s =
            static_cast<double>(samples.size()) / corpus::kSampleRate;
        if (duration_s > im.options.max_clip_s) {
            reply_json(res, 413,
                       {{"error", "clip_too_long"}, {"max_seconds", im.options.max_clip_s}});
            return;
        }
        if (!im.ledger.try_charge(duration_s)) {
            reply_json(res, 403, {{"error", "budget_exhausted"}});
            return;
        }

        const std::string clip_id = body["clip_id"].get<std::string>();
        if (im.options.ledger_log) {
            json line{{"clip_id", clip_id},
                      {"duration_s", duration_s},
                      {"spent_s", im.ledger.spent_s()}};
            im.options.ledger_log(line.dump());
        }

        const LayerRepresentations reps = im.model.forward(samples, layers);
        const double remaining = std::max(0.0, im.ledger.limit_s() - im.ledger.spent_s());
        res.status = 200;
        res.set_content(encode_representations_body(clip_id, reps, remaining),
                        "application/json");
    });
}

VictimService::~VictimService() {
    stop();
}

void VictimService::start() {
    Impl& im = *impl_;
    if (im.options.port == 0) {
        im.port = im.server.bind_to_any_port(im.options.host);
        if (im.port <= 0) throw IoError("cannot bind to " + im.options.host);
    } else {
        if (!im.server.bind_to_port(im.options.host, im.options.port)) {
            throw IoError("cannot bind to " + im.options.host + ":" +
                          std::to_string(im.options.port));
        }
        im.port = im.options.port;
    }
    im.thread = std::thread([&im] { im.server.listen_after_bind(); });
    im.server.wait_until_ready();
}

void VictimService::stop() {
    Impl& im = *impl_;
    if (im.server.is_running()) im.server.stop();
    if (im.thread.joinable()) im.thread.join();
}

bool VictimService::running() const { return impl_->server.is_running(); }

int VictimService::port() const { return impl_->port; }

const QueryLedger& VictimService::ledger() const { return impl_->ledger; }

const VictimModel& VictimService::model() const { return impl_->model; }

}  // namespace mea::victim
