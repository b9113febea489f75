#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mea/client.hpp"
#include "mea/corpus.hpp"
#include "mea/server.hpp"

using namespace mea;
using namespace mea::victim;
using nlohmann::json;

namespace {

corpus::Clip make_clip(const std::string& id, double seconds) {
    corpus::Clip c;
    c.id = id;
    const std::size_t n = static_cast<std::size_t>(seconds * corpus::kSampleRate);
    c.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.samples[i] = 0.4 * std::sin(0.003 * i);
    return c;
}

struct TestService {
    VictimService service;

    explicit TestService(double budget_s, std::uint64_t seed = 42)
        : service(VictimModel({.seed = seed}), make_options(budget_s)) {
        service.start();
    }

    static ServeOptions make_options(double budget_s) {
        ServeOptions opts;
        opts.host = "127.0.0.1";
        opts.port = 0;
        opts.budget_s = budget_s;
        return opts;
    }

    httplib::Client raw() { return httplib::Client("127.0.0.1", service.port()); }
};

}  // namespace

TEST_CASE("representations: 200 with requested layers and budget") {
    TestService ts(100.0);
    VictimClient client("127.0.0.1", ts.service.port());

    const corpus::Clip clip = make_clip("c1", 2.0);
    const LayerRepresentations reps = client.query(clip, {4, 8, 12});
    CHECK(reps.layers.size() == 3);
    const std::size_t expected_t = ts.service.model().frames_for(clip.samples.size());
    for (int n : {4, 8, 12}) {
        CHECK(reps.layers.at(n).rows() == expected_t);
        CHECK(reps.layers.at(n).cols() == 64);
    }

    const BudgetInfo budget = client.get_budget();
    CHECK(budget.limit_s == 100.0);
    CHECK(budget.spent_s == 2.0);
    CHECK(budget.request_count == 1);
}

TEST_CASE("wire round-trip stays within 1e-6 of the local forward pass") {
    TestService ts(100.0);
    VictimClient client("127.0.0.1", ts.service.port());

    const corpus::Clip clip = make_clip("c1", 1.5);
    const LayerRepresentations remote = client.query(clip, {4, 12});
    const LayerRepresentations local = ts.service.model().forward(clip.samples, {4, 12});
    for (int n : {4, 12}) {
        const Matrix& r = remote.layers.at(n);
        const Matrix& l = local.layers.at(n);
        REQUIRE(r.rows() == l.rows());
        REQUIRE(r.cols() == l.cols());
        for (std::size_t i = 0; i < r.data().size(); ++i) {
            CHECK(std::fabs(r.data()[i] - l.data()[i]) < 1e-6);
        }
    }
}

TEST_CASE("encode/parse round-trip through the text encoding") {
    VictimModel model({.seed = 9});
    const corpus::Clip clip = make_clip("x", 1.0);
    const LayerRepresentations reps = model.forward(clip.samples, {4, 8});
    const std::string body = encode_representations_body("x", reps, 10.0);
    const LayerRepresentations back = parse_representations_body(body);
    for (int n : {4, 8}) {
        const Matrix& a = reps.layers.at(n);
        const Matrix& b = back.layers.at(n);
        for (std::size_t i = 0; i < a.data().size(); ++i) {
            CHECK(std::fabs(a.data()[i] - b.data()[i]) < 1e-6);
        }
    }
}

TEST_CASE("over-length clip: 413 with the exact schema body") {
    TestService ts(1000.0);
    auto cli = ts.raw();
    const corpus::Clip clip = make_clip("long", 20.0);
    json req{{"clip_id", clip.id},
             {"sample_rate", 16000},
             {"samples", clip.samples},
             {"layers", {4}}};
    auto res = cli.Post("/v1/representations", req.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 413);
    CHECK(res->body == R"({"error":"clip_too_long","max_seconds":15.6})");

    // Nothing was charged.
    VictimClient client("127.0.0.1", ts.service.port());
    CHECK(client.get_budget().spent_s == 0.0);
}

TEST_CASE("exhausted budget: 403 with the exact schema body") {
    TestService ts(3.0);
    VictimClient client("127.0.0.1", ts.service.port());
    client.query(make_clip("a", 2.0), {4});
    client.query(make_clip("b", 2.0), {4});  // overshoot allowed: 4.0 >= 3.0

    auto cli = ts.raw();
    const corpus::Clip clip = make_clip("c", 2.0);
    json req{{"clip_id", clip.id},
             {"sample_rate", 16000},
             {"samples", clip.samples},
             {"layers", {4}}};
    auto res = cli.Post("/v1/representations", req.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 403);
    CHECK(res->body == R"({"error":"budget_exhausted"})");

    CHECK_THROWS_AS(client.query(make_clip("d", 2.0), {4}), BudgetError);
    CHECK(client.get_budget().spent_s == 4.0);
}

TEST_CASE("malformed requests: 400") {
    TestService ts(100.0);
    auto cli = ts.raw();

    auto bad_json = cli.Post("/v1/representations", "{nope", "application/json");
    REQUIRE(bad_json);
    CHECK(bad_json->status == 400);

    json no_samples{{"clip_id", "x"}, {"sample_rate", 16000}, {"layers", {4}}};
    auto res = cli.Post("/v1/representations", no_samples.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    json wrong_rate{{"clip_id", "x"},
                    {"sample_rate", 8000},
                    {"samples", std::vector<double>(16000, 0.1)},
                    {"layers", {4}}};
    res = cli.Post("/v1/representations", wrong_rate.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    json bad_layer{{"clip_id", "x"},
                   {"sample_rate", 16000},
                   {"samples", std::vector<double>(16000, 0.1)},
                   {"layers", {13}}};
    res = cli.Post("/v1/representations", bad_layer.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    json too_short{{"clip_id", "x"},
                   {"sample_rate", 16000},
                   {"samples", std::vector<double>(100, 0.1)},
                   {"layers", {4}}};
    res = cli.Post("/v1/representations", too_short.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    CHECK(VictimClient("127.0.0.1", ts.service.port()).get_budget().spent_s == 0.0);
}

TEST_CASE("info endpoint reflects the model geometry") {
    TestService ts(10.0);
    VictimClient client("127.0.0.1", ts.service.port());
    const ServiceInfo info = client.get_info();
    CHECK(info.num_layers == 12);
    CHECK(info.dim == 64);
    CHECK(info.frame_len == 400);
    CHECK(info.hop == 320);
}

TEST_CASE("layers-allowed restricts servable layers") {
    ServeOptions opts;
    opts.host = "127.0.0.1";
    opts.port = 0;
    opts.budget_s = 100.0;
    opts.layers_allowed = {4, 8, 12};
    VictimService service(VictimModel({.seed = 1}), opts);
    service.start();

    VictimClient client("127.0.0.1", service.port());
    CHECK_THROWS_AS(client.query(make_clip("x", 1.0), {5}), ParameterError);
    CHECK(client.query(make_clip("x", 1.0), {4}).layers.count(4) == 1);
}

TEST_CASE("client cache: repeat queries cost no budget and hit no wire") {
    const auto cache_dir = std::filesystem::temp_directory_path() / "mea_client_cache";
    std::filesystem::remove_all(cache_dir);

    TestService ts(100.0);
    const corpus::Clip clip = make_clip("cached", 2.0);
    {
        VictimClient client("127.0.0.1", ts.service.port(), cache_dir);
        const auto r1 = client.query(clip, {4, 8});
        const auto r2 = client.query(clip, {4, 8});
        CHECK(client.wire_requests() == 1);
        CHECK(client.wire_seconds() == 2.0);
        CHECK(r1.layers.at(4) == r2.layers.at(4));
    }
    {
        // A fresh client with the same disk cache never touches the wire.
        VictimClient client("127.0.0.1", ts.service.port(), cache_dir);
        const auto r3 = client.query(clip, {4, 8});
        CHECK(client.wire_requests() == 0);
        CHECK(r3.layers.count(8) == 1);
    }
    CHECK(ts.service.ledger().spent_s() == 2.0);
    CHECK(ts.service.ledger().request_count() == 1);

    // Different layer sets are distinct cache entries.
    VictimClient client("127.0.0.1", ts.service.port(), cache_dir);
    client.query(clip, {12});
    CHECK(client.wire_requests() == 1);
}

TEST_CASE("unreachable service raises a transport error after retries") {
    VictimClient client("127.0.0.1", 1);  // nothing listens on port 1
    CHECK_THROWS_AS(client.query(make_clip("x", 1.0), {4}), TransportError);
}

TEST_CASE("ledger log emits one line per accepted request") {
    std::vector<std::string> lines;
    ServeOptions opts;
    opts.host = "127.0.0.1";
    opts.port = 0;
    opts.budget_s = 100.0;
    opts.ledger_log = [&lines](const std::string& line) { lines.push_back(line); };
    VictimService service(VictimModel({.seed = 1}), opts);
    service.start();

    VictimClient client("127.0.0.1", service.port());
    client.query(make_clip("a", 1.0), {4});
    client.query(make_clip("b", 2.0), {4});
    auto cli = httplib::Client("127.0.0.1", service.port());
    cli.Post("/v1/representations", "{bad", "application/json");  // rejected, not logged

    CHECK(lines.size() == 2);
    CHECK(static_cast<int>(lines.size()) == service.ledger().request_count());
    const json first = json::parse(lines[0]);
    CHECK(first.at("clip_id") == "a");
    CHECK(first.at("duration_s") == 1.0);
}

TEST_CASE("responses are deterministic across service instances") {
    const corpus::Clip clip = make_clip("det", 1.0);
    std::string body1, body2;
    {
        TestService ts(50.0, 77);
        auto cli = ts.raw();
        json req{{"clip_id", clip.id},
                 {"sample_rate", 16000},
                 {"samples", clip.samples},
                 {"layers", {4, 8}}};
        body1 = cli.Post("/v1/representations", req.dump(), "application/json")->body;
    }
    {
        TestService ts(50.0, 77);
        auto cli = ts.raw();
        json req{{"clip_id", clip.id},
                 {"sample_rate", 16000},
                 {"samples", clip.samples},
                 {"layers", {4, 8}}};
        body2 = cli.Post("/v1/representations", req.dump(), "application/json")->body;
    }
    CHECK(body1 == body2);
}
