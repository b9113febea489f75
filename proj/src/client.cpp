#include "mea/client.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace mea::victim {

LayerRepresentations parse_representations_body(const std::string& body) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad representations body: ") + e.what());
    }
    LayerRepresentations reps;
    const std::size_t t = doc.at("t").get<std::size_t>();
    const std::size_t dim = doc.at("dim").get<std::size_t>();
    for (const auto& [key, rows] : doc.at("layers").items()) {
        Matrix m(t, dim);
        if (rows.size() != t) throw ParseError("layer " + key + ": row count mismatch");
        for (std::size_t r = 0; r < t; ++r) {
            const json& row = rows[r];
            if (row.size() != dim) throw ParseError("layer " + key + ": column count mismatch");
            for (std::size_t c = 0; c < dim; ++c) m(r, c) = row[c].get<double>();
        }
        reps.layers[std::stoi(key)] = std::move(m);
    }
    return reps;
}

struct VictimClient::Impl {
    std::string host;
    int port;
    std::filesystem::path cache_dir;
    httplib::Client cli;
    std::map<std::uint64_t, std::string> memory_cache;  // key -> response body
    int wire_requests = 0;
    double wire_seconds = 0.0;

    Impl(std::string h, int p, std::filesystem::path dir)
        : host(std::move(h)), port(p), cache_dir(std::move(dir)), cli(host, port) {
        cli.set_read_timeout(60, 0);
        cli.set_write_timeout(60, 0);
        if (!cache_dir.empty()) std::filesystem::create_directories(cache_dir);
    }

    static std::uint64_t cache_key(const std::string& clip_id, const std::vector<int>& layers) {
        std::string s = clip_id;
        for (int n : layers) s += "|" + std::to_string(n);
        return fnv1a64(s);
    }

    std::filesystem::path cache_path(std::uint64_t key) const {
        char name[32];
        std::snprintf(name, sizeof(name), "%016llx.json",
                      static_cast<unsigned long long>(key));
        return cache_dir / name;
    }

    // POST with bounded retries on transport failure.
    httplib::Result post_with_retries(const std::string& path, const std::string& body) {
        int delay_ms = 100;
        for (int attempt = 0;; ++attempt) {
            httplib::Result res = cli.Post(path, body, "application/json");
            if (res) return res;
            if (attempt >= 3) return res;
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
            delay_ms *= 2;
        }
    }
};

VictimClient::VictimClient(std::string host, int port, std::filesystem::path cache_dir)
    : impl_(std::make_unique<Impl>(std::move(host), port, std::move(cache_dir))) {}

VictimClient::~VictimClient() = default;

LayerRepresentations VictimClient::query(const corpus::Clip& clip,
                                         const std::vector<int>& layers) {
    Impl& im = *impl_;
    const std::uint64_t key = Impl::cache_key(clip.id, layers);

    auto hit = im.memory_cache.find(key);
    if (hit != im.memory_cache.end()) return parse_representations_body(hit->second);

    if (!im.cache_dir.empty()) {
        const auto path = im.cache_path(key);
        std::ifstream f(path);
        if (f) {
            std::string body((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
            // Guard against a hash collision or stale file.
            json doc = json::parse(body, nullptr, false);
            if (!doc.is_discarded() && doc.value("clip_id", std::string()) == clip.id) {
                im.memory_cache[key] = body;
                return parse_representations_body(body);
            }
        }
    }

    json req{{"clip_id", clip.id},
             {"sample_rate", clip.sample_rate},
             {"samples", clip.samples},
             {"layers", layers}};
    httplib::Result res = im.post_with_retries("/v1/representations", req.dump());
    if (!res) {
        throw TransportError("victim unreachable at " + im.host + ":" +
                             std::to_string(im.port) + " after retries");
    }
    ++im.wire_requests;

    if (res->status == 200) {
        im.wire_seconds += clip.duration_s();
        im.memory_cache[key] = res->body;
        if (!im.cache_dir.empty()) {
            std::ofstream f(im.cache_path(key));
            f << res->body;
        }
        return parse_representations_body(res->body);
    }

    std::string detail = res->body;
    json err = json::parse(res->body, nullptr, false);
    if (!err.is_discarded() && err.contains("error")) detail = err["error"].get<std::string>();
    if (res->status == 403) throw BudgetError("victim refused clip " + clip.id + ": " + detail);
    throw ParameterError("victim rejected clip " + clip.id + " (" +
                         std::to_string(res->status) + "): " + detail);
}

BudgetInfo VictimClient::get_budget() {
    httplib::Result res = impl_->cli.Get("/v1/budget");
    if (!res || res->status != 200) throw TransportError("cannot fetch /v1/budget");
    const json doc = json::parse(res->body);
    return {doc.at("limit_s").get<double>(), doc.at("spent_s").get<double>(),
            doc.at("request_count").get<int>()};
}

ServiceInfo VictimClient::get_info() {
    httplib::Result res = impl_->cli.Get("/v1/info");
    if (!res || res->status != 200) throw TransportError("cannot fetch /v1/info");
    const json doc = json::parse(res->body);
    return {doc.at("num_layers").get<int>(), doc.at("dim").get<int>(),
            doc.at("frame_len").get<int>(), doc.at("hop").get<int>()};
}

int VictimClient::wire_requests() const { return impl_->wire_requests; }

double VictimClient::wire_seconds() const { return impl_->wire_seconds; }

}  // namespace mea::victim
