#ifndef MEA_SERVER_HPP
#define MEA_SERVER_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mea/victim.hpp"

namespace mea::victim {

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 0;  // 0: pick an ephemeral port
    double budget_s = 600.0;
    double max_clip_s = 15.6;
    std::vector<int> layers_allowed;  // empty: all 1..num_layers
    // One line per accepted request: {"clip_id", "duration_s", "spent_s"}.
    std::function<void(const std::string&)> ledger_log;
};

// Representation-serving HTTP service over one VictimModel and one budget
// ledger. Matrix entries are encoded with 9 significant decimal digits.
//
//   POST /v1/representations  {"clip_id", "sample_rate", "samples", "layers"}
//       200 {"clip_id", "t", "dim", "layers": {"<n>": [[...]]}, "budget_remaining_s"}
//       400 malformed | 413 clip_too_long | 403 budget_exhausted
//   GET  /v1/budget           {"limit_s", "spent_s", "request_count"}
//   GET  /v1/info             {"num_layers", "dim", "frame_len", "hop"}
class VictimService {
public:
    VictimService(VictimModel model, ServeOptions options);
    ~VictimService();

    VictimService(const VictimService&) = delete;
    VictimService& operator=(const VictimService&) = delete;

    // Binds and serves on a background thread; throws IoError on bind failure.
    void start();
    void stop();
    bool running() const;

    int port() const;
    const QueryLedger& ledger() const;
    const VictimModel& model() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Shared with the client and tests: encode one representation response body.
std::string encode_representations_body(const std::string& clip_id,
                                        const LayerRepresentations& reps,
                                        double budget_remaining_s);

}  // namespace mea::victim

#endif
