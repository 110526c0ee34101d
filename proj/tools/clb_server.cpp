#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "clb/http_server.hpp"
#include "clb/service.hpp"

#include "CLI11.hpp"

namespace {

clb::HttpServer* g_server = nullptr;

void handle_signal(int) {
    if (g_server) g_server->stop();
}

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v ? v : fallback;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual-learning training service"};

    std::string root = env_or("CLB_STORAGE_ROOT", "./clb-data");
    std::string bind = env_or("CLB_BIND", "127.0.0.1");
    int port = std::stoi(env_or("CLB_PORT", "8080"));
    std::size_t workers = std::stoull(env_or("CLB_WORKERS", "1"));

    app.add_option("--root", root, "storage root directory");
    app.add_option("--bind", bind, "bind address");
    app.add_option("--port", port, "listen port (0 picks a free one)");
    app.add_option("--workers", workers, "training worker threads");

    CLI11_PARSE(app, argc, argv);

    try {
        clb::ServiceCore core(root, workers);
        core.start();

        clb::HttpServer server(core);
        g_server = &server;
        std::signal(SIGINT, handle_signal);
        std::signal(SIGTERM, handle_signal);

        int actual_port = port;
        if (port == 0) actual_port = server.bind_any(bind);

        std::printf("listening on %s:%d\n", bind.c_str(), actual_port);
        std::fflush(stdout);

        const bool ok = port == 0 ? server.serve() : server.listen(bind, port);
        g_server = nullptr;
        core.stop();
        return ok ? 0 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "fatal: %s\n", e.what());
        return 1;
    }
}
