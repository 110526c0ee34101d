#include "clb/http_server.hpp"

#include "clb/errors.hpp"

#include "httplib.h"
#include "json.hpp"

namespace clb {

namespace {

int status_for(const Error& e) {
    if (dynamic_cast<const NotFound*>(&e)) return 404;
    if (dynamic_cast<const Duplicate*>(&e) || dynamic_cast<const NothingToTrain*>(&e) ||
        dynamic_cast<const MonitoringDisabled*>(&e))
        return 409;
    if (dynamic_cast<const ClassOverlap*>(&e) || dynamic_cast<const DataError*>(&e) ||
        dynamic_cast<const LabelError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
        dynamic_cast<const WindowError*>(&e) || dynamic_cast<const BinError*>(&e) ||
        dynamic_cast<const EmptyBatch*>(&e) || dynamic_cast<const EmptyExperience*>(&e))
        return 422;
    if (dynamic_cast<const StorageError*>(&e) || dynamic_cast<const JobStateError*>(&e) ||
        dynamic_cast<const AggregateError*>(&e))
        return 500;
    return 400;  // config/parse/range/key errors
}

void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
    nlohmann::json body;
    body["error"] = e.code();
    body["detail"] = e.what();
    if (!e.field().empty()) body["field"] = e.field();
    send_json(res, status_for(e), body);
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        send_error(res, e);
    } catch (const nlohmann::json::exception& e) {
        send_json(res, 400, {{"error", "ParseError"}, {"detail", e.what()}});
    } catch (const std::exception& e) {
        send_json(res, 500, {{"error", "Internal"}, {"detail", e.what()}});
    }
}

nlohmann::json parse_body(const httplib::Request& req) {
    nlohmann::json j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded()) throw ParseError("request body is not valid JSON");
    return j;
}

std::size_t parse_run_param(const httplib::Request& req) {
    if (!req.has_param("run")) return 0;
    try {
        return std::stoull(req.get_param_value("run"));
    } catch (const std::exception&) {
        throw ConfigError("InvalidType", "run query parameter must be a non-negative integer", "run");
    }
}

}  // namespace

struct HttpServer::Impl {
    explicit Impl(ServiceCore& core) : core(core) { routes(); }

    void routes() {
        srv.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, {{"status", "ok"}});
        });

        srv.Post("/v1/experiments", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string id = core.create_experiment(parse_body(req));
                send_json(res, 201, {{"experiment_id", id}});
            });
        });

        srv.Get(R"(/v1/experiments/([^/]+))",
                [this](const httplib::Request& req, httplib::Response& res) {
                    guarded(res, [&] { send_json(res, 200, core.get_experiment(req.matches[1])); });
                });

        srv.Post(R"(/v1/experiments/([^/]+)/experiences)",
                 [this](const httplib::Request& req, httplib::Response& res) {
                     guarded(res, [&] {
                         const std::size_t index = core.push_experience(req.matches[1], parse_body(req));
                         send_json(res, 202, {{"experience_index", index}});
                     });
                 });

        srv.Post(R"(/v1/experiments/([^/]+)/jobs)",
                 [this](const httplib::Request& req, httplib::Response& res) {
                     guarded(res, [&] {
                         const std::string job_id = core.trigger_job(req.matches[1]);
                         send_json(res, 202, {{"job_id", job_id}});
                     });
                 });

        srv.Get(R"(/v1/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send_json(res, 200, core.get_job(req.matches[1])); });
        });

        srv.Get(R"(/v1/experiments/([^/]+)/metrics)",
                [this](const httplib::Request& req, httplib::Response& res) {
                    guarded(res, [&] {
                        const std::string format =
                            req.has_param("format") ? req.get_param_value("format") : "json";
                        if (format == "csv") {
                            res.status = 200;
                            res.set_content(core.get_metrics_csv(req.matches[1]), "text/csv");
                        } else if (format == "json") {
                            send_json(res, 200, core.get_metrics_json(req.matches[1]));
                        } else {
                            throw ConfigError("UnknownFormat", "format must be json or csv", "format");
                        }
                    });
                });

        srv.Get(R"(/v1/experiments/([^/]+)/versions)",
                [this](const httplib::Request& req, httplib::Response& res) {
                    guarded(res, [&] { send_json(res, 200, core.list_versions(req.matches[1])); });
                });

        srv.Get(R"(/v1/experiments/([^/]+)/versions/(\d+))",
                [this](const httplib::Request& req, httplib::Response& res) {
                    guarded(res, [&] {
                        send_json(res, 200,
                                  core.get_version(req.matches[1], std::stoull(req.matches[2]),
                                                   parse_run_param(req)));
                    });
                });

        srv.Get(R"(/v1/experiments/([^/]+)/versions/(\d+)/weights)",
                [this](const httplib::Request& req, httplib::Response& res) {
                    guarded(res, [&] {
                        const auto bytes = core.get_weights(req.matches[1], std::stoull(req.matches[2]),
                                                            parse_run_param(req));
                        res.status = 200;
                        res.set_content(reinterpret_cast<const char*>(bytes.data()), bytes.size(),
                                        "application/octet-stream");
                    });
                });

        srv.Post(R"(/v1/experiments/([^/]+)/observe)",
                 [this](const httplib::Request& req, httplib::Response& res) {
                     guarded(res, [&] {
                         send_json(res, 200, core.observe(req.matches[1], parse_body(req)));
                     });
                 });
    }

    ServiceCore& core;
    httplib::Server srv;
};

HttpServer::HttpServer(ServiceCore& core) : impl_(std::make_unique<Impl>(core)) {}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::listen(const std::string& host, int port) {
    return impl_->srv.listen(host, port);
}

int HttpServer::bind_any(const std::string& host) { return impl_->srv.bind_to_any_port(host); }

bool HttpServer::serve() { return impl_->srv.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->srv.stop();
}

}  // namespace clb
