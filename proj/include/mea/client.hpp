#ifndef MEA_CLIENT_HPP
#define MEA_CLIENT_HPP

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mea/corpus.hpp"
#include "mea/victim.hpp"

namespace mea::victim {

struct BudgetInfo {
    double limit_s = 0.0;
    double spent_s = 0.0;
    int request_count = 0;
};

struct ServiceInfo {
    int num_layers = 0;
    int dim = 0;
    int frame_len = 0;
    int hop = 0;
};

// Attacker-side client. Responses are cached by (clip id, layer set) in
// memory and, when cache_dir is set, on disk, so re-queries never spend
// budget twice. Transport failures are retried 3 times with exponential
// backoff starting at 100 ms.
class VictimClient {
public:
    VictimClient(std::string host, int port, std::filesystem::path cache_dir = {});
    ~VictimClient();

    VictimClient(const VictimClient&) = delete;
    VictimClient& operator=(const VictimClient&) = delete;

    // Throws BudgetError on 403, ParameterError on 400/413, TransportError
    // when the service stays unreachable.
    LayerRepresentations query(const corpus::Clip& clip, const std::vector<int>& layers);

    BudgetInfo get_budget();
    ServiceInfo get_info();

    // Wire traffic actually sent (cache hits excluded).
    int wire_requests() const;
    double wire_seconds() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Parses a 200 response body back into matrices.
LayerRepresentations parse_representations_body(const std::string& body);

}  // namespace mea::victim

#endif
