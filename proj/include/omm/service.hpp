#pragma once

#include "omm/data_io.hpp"

#include <memory>
#include <string>

namespace omm {

struct ServiceOptions {
    std::string host{"127.0.0.1"};
    int port{8080};  // 0 picks a free port
    int threads{1};  // replicate workers per what-if
};

struct ServiceResponse {
    int status{200};
    std::string body;
    std::string content_type{"application/json"};
};

/// Local HTTP service over one loaded model and dataset.
///   GET  /model
///   GET  /shares?range=a:b            1-based inclusive bins
///   GET  /elasticities?range=a:b
///   POST /whatif[?async=1]            {k_star, r, changepoint, n_sims, seed[, horizon]}
///   GET  /whatif/{id}
///   GET  /whatif/{id}/events          server-sent progress events
class Service {
public:
    Service(ModelFile model, DatasetBundle data, ServiceOptions options = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the listening socket and returns the port.
    int bind();
    /// Serves until stop(); call bind() first.
    void listen();
    void stop();

    // Handlers, callable without a socket.
    [[nodiscard]] ServiceResponse get_model() const;
    [[nodiscard]] ServiceResponse get_shares(const std::string& range) const;
    [[nodiscard]] ServiceResponse get_elasticities(const std::string& range) const;
    [[nodiscard]] ServiceResponse post_whatif(const std::string& body, bool async);
    [[nodiscard]] ServiceResponse get_whatif(const std::string& id) const;
    /// All events recorded so far for a scenario, as an event-stream body.
    [[nodiscard]] ServiceResponse get_whatif_events(const std::string& id) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace omm
