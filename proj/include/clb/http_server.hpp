#pragma once

#include <memory>
#include <string>

#include "clb/service.hpp"

namespace clb {

/// REST facade over ServiceCore; all routes live under /v1. Errors are
/// rendered as {"error", "detail", "field"} with the status implied by the
/// error type.
class HttpServer {
public:
    explicit HttpServer(ServiceCore& core);
    ~HttpServer();

    // Blocking; returns false if the address cannot be bound.
    bool listen(const std::string& host, int port);

    // Binds an ephemeral port and returns it; call serve() to start handling.
    int bind_any(const std::string& host);
    bool serve();

    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace clb
