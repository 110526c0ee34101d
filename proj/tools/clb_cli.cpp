#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "clb/errors.hpp"
#include "clb/evaluation.hpp"
#include "clb/scenario.hpp"
#include "clb/service.hpp"

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

namespace {

// Exit codes shared by every subcommand.
constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kTransportError = 3;
constexpr int kNotFound = 4;
constexpr int kServerError = 5;

struct Cli {
    std::string server;
    std::string out_dir = ".";
    std::string format = "json";
};

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v ? v : fallback;
}

// Splits "http://host:port" for httplib.
httplib::Client make_client(const std::string& server) {
    httplib::Client cli(server);
    cli.set_connection_timeout(5, 0);
    cli.set_read_timeout(300, 0);
    return cli;
}

int exit_code_for_status(int status) {
    if (status == 404) return kNotFound;
    if (status >= 500) return kServerError;
    if (status >= 400) return kInputError;
    return kOk;
}

// Prints the error body and maps the status onto the exit-code contract.
int fail_http(const httplib::Result& res) {
    if (!res) {
        std::cerr << "transport error: " << httplib::to_string(res.error()) << "\n";
        return kTransportError;
    }
    std::cerr << "server returned " << res->status << ": " << res->body << "\n";
    return exit_code_for_status(res->status);
}

bool http_ok(const httplib::Result& res) { return res && res->status >= 200 && res->status < 300; }

std::string read_file_or_exit(const std::string& path, int& code) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::cerr << "cannot open file: " << path << "\n";
        code = kInputError;
        return "";
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    code = kOk;
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << content;
}

int cmd_init(const Cli& cli, const std::string& config_path) {
    int code;
    const std::string text = read_file_or_exit(config_path, code);
    if (code != kOk) return code;
    nlohmann::json cfg = nlohmann::json::parse(text, nullptr, false);
    if (cfg.is_discarded()) {
        std::cerr << "config is not valid JSON: " << config_path << "\n";
        return kInputError;
    }
    auto client = make_client(cli.server);
    auto res = client.Post("/v1/experiments", cfg.dump(), "application/json");
    if (!http_ok(res)) return fail_http(res);
    std::cout << nlohmann::json::parse(res->body).at("experiment_id").get<std::string>() << "\n";
    return kOk;
}

int cmd_push(const Cli& cli, const std::string& id, const std::string& payload_path,
             const std::string& train_path, const std::string& test_path,
             const std::vector<std::int64_t>& classes) {
    nlohmann::json payload;
    int code;
    if (!payload_path.empty()) {
        const std::string text = read_file_or_exit(payload_path, code);
        if (code != kOk) return code;
        payload = nlohmann::json::parse(text, nullptr, false);
        if (payload.is_discarded()) {
            std::cerr << "payload is not valid JSON: " << payload_path << "\n";
            return kInputError;
        }
    } else {
        if (train_path.empty() || test_path.empty() || classes.empty()) {
            std::cerr << "push needs either --payload or --train, --test and --classes\n";
            return kInputError;
        }
        const std::string train_csv = read_file_or_exit(train_path, code);
        if (code != kOk) return code;
        const std::string test_csv = read_file_or_exit(test_path, code);
        if (code != kOk) return code;
        payload = {{"classes", classes}, {"train_csv", train_csv}, {"test_csv", test_csv}};
    }
    auto client = make_client(cli.server);
    auto res = client.Post("/v1/experiments/" + id + "/experiences", payload.dump(),
                           "application/json");
    if (!http_ok(res)) return fail_http(res);
    std::cout << nlohmann::json::parse(res->body).at("experience_index") << "\n";
    return kOk;
}

int cmd_train(const Cli& cli, const std::string& id, double wait_seconds) {
    auto client = make_client(cli.server);
    auto res = client.Post("/v1/experiments/" + id + "/jobs", "", "application/json");
    if (!http_ok(res)) return fail_http(res);
    const std::string job_id = nlohmann::json::parse(res->body).at("job_id").get<std::string>();
    std::cout << job_id << "\n";
    if (wait_seconds <= 0) return kOk;

    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration<double>(wait_seconds);
    while (std::chrono::steady_clock::now() < deadline) {
        auto jr = client.Get("/v1/jobs/" + job_id);
        if (!http_ok(jr)) return fail_http(jr);
        const std::string state = nlohmann::json::parse(jr->body).at("state").get<std::string>();
        if (state == "succeeded") return kOk;
        if (state == "failed") {
            std::cerr << "job failed: " << jr->body << "\n";
            return kServerError;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    std::cerr << "timed out waiting for job " << job_id << "\n";
    return kServerError;
}

int cmd_status(const Cli& cli, const std::string& id, const std::string& job_id) {
    auto client = make_client(cli.server);
    auto res = job_id.empty() ? client.Get("/v1/experiments/" + id)
                              : client.Get("/v1/jobs/" + job_id);
    if (!http_ok(res)) return fail_http(res);
    std::cout << nlohmann::json::parse(res->body).dump(2) << "\n";
    return kOk;
}

int cmd_metrics(const Cli& cli, const std::string& id) {
    auto client = make_client(cli.server);
    auto res = client.Get("/v1/experiments/" + id + "/metrics?format=" + cli.format);
    if (!http_ok(res)) return fail_http(res);
    std::cout << res->body;
    if (!res->body.empty() && res->body.back() != '\n') std::cout << "\n";
    return kOk;
}

int cmd_observe(const Cli& cli, const std::string& id, const std::string& payload_path,
                const std::string& csv_path) {
    nlohmann::json payload;
    int code;
    if (!payload_path.empty()) {
        const std::string text = read_file_or_exit(payload_path, code);
        if (code != kOk) return code;
        payload = nlohmann::json::parse(text, nullptr, false);
        if (payload.is_discarded()) {
            std::cerr << "payload is not valid JSON: " << payload_path << "\n";
            return kInputError;
        }
    } else if (!csv_path.empty()) {
        const std::string text = read_file_or_exit(csv_path, code);
        if (code != kOk) return code;
        nlohmann::json samples = nlohmann::json::array();
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            nlohmann::json row = nlohmann::json::array();
            std::istringstream fields(line);
            std::string field;
            while (std::getline(fields, field, ',')) {
                try {
                    row.push_back(std::stod(field));
                } catch (const std::exception&) {
                    std::cerr << "bad feature value '" << field << "' in " << csv_path << "\n";
                    return kInputError;
                }
            }
            samples.push_back(std::move(row));
        }
        payload = {{"samples", samples}};
    } else {
        std::cerr << "observe needs --payload or --csv\n";
        return kInputError;
    }
    auto client = make_client(cli.server);
    auto res = client.Post("/v1/experiments/" + id + "/observe", payload.dump(), "application/json");
    if (!http_ok(res)) return fail_http(res);
    std::cout << nlohmann::json::parse(res->body).dump(2) << "\n";
    return kOk;
}

int cmd_export(const Cli& cli, const std::string& id, const std::string& what, std::size_t version,
               std::size_t run) {
    auto client = make_client(cli.server);
    const std::filesystem::path out_dir(cli.out_dir);
    if (what == "metrics") {
        auto res = client.Get("/v1/experiments/" + id + "/metrics?format=" + cli.format);
        if (!http_ok(res)) return fail_http(res);
        const std::filesystem::path path = out_dir / (id + "_metrics." + cli.format);
        write_file(path, res->body);
        std::cout << path.string() << "\n";
        return kOk;
    }
    if (what == "weights") {
        auto res = client.Get("/v1/experiments/" + id + "/versions/" + std::to_string(version) +
                              "/weights?run=" + std::to_string(run));
        if (!http_ok(res)) return fail_http(res);
        const std::filesystem::path path =
            out_dir / (id + "_v" + std::to_string(version) + "_run" + std::to_string(run) + ".clbw");
        write_file(path, res->body);
        std::cout << path.string() << "\n";
        return kOk;
    }
    std::cerr << "unknown export target '" << what << "' (use metrics or weights)\n";
    return kInputError;
}

// The blobs10 preset: ten experiences of two fresh classes each over
// Gaussian blobs, 1000 train / 200 test patterns per experience.
nlohmann::json blobs10_config(const std::string& strategy, const std::vector<std::uint64_t>& seeds,
                              std::size_t epochs) {
    nlohmann::json strategy_json = {{"name", strategy},
                                    {"epochs", epochs},
                                    {"batch_size", 32},
                                    {"lr", 0.1}};
    if (strategy == "replay") {
        strategy_json["memory_size"] = 2000;
        strategy_json["replay_ratio"] = 0.5;
        strategy_json["sampling"] = "reservoir";
    }
    return {{"model",
             {{"input_dim", 16},
              {"hidden_layers", {64}},
              {"num_classes", 20},
              {"activation", "relu"},
              {"seed", 7}}},
            {"strategy", strategy_json},
            {"scenario",
             {{"kind", "blobs"},
              {"per_class_train", 500},
              {"per_class_test", 100},
              {"spread", 1.0},
              {"first_size", 2},
              {"rest_size", 2},
              {"n_experiences", 10},
              {"seed", 1234}}},
            {"trigger", {{"mode", "manual"}}},
            {"evaluation", {{"top_k", {1, 5}}, {"protocol", "full_test"}}},
            {"runs", seeds.size()},
            {"run_seeds", seeds}};
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string seeds_note(const std::vector<std::uint64_t>& seeds) {
    std::string s = "# aggregate of " + std::to_string(seeds.size()) + " runs, seeds:";
    for (std::uint64_t v : seeds) s += " " + std::to_string(v);
    return s + "\n";
}

int cmd_bench(const Cli& cli, const std::vector<std::string>& strategies,
              const std::vector<std::uint64_t>& seeds, std::size_t epochs,
              const std::string& state_dir) {
    namespace fs = std::filesystem;
    const fs::path out_dir(cli.out_dir);
    fs::create_directories(out_dir);

    fs::path root = state_dir.empty()
                        ? fs::temp_directory_path() /
                              ("clb-bench-" + std::to_string(::getpid()))
                        : fs::path(state_dir);

    try {
        clb::ServiceCore core(root, 1);
        core.start();

        for (const std::string& strategy : strategies) {
            const std::string id = core.create_experiment(blobs10_config(strategy, seeds, epochs));
            const std::string job_id = core.trigger_job(id);
            if (!core.wait_job(job_id, 600.0)) {
                std::cerr << "bench job timed out for " << strategy << "\n";
                return kServerError;
            }
            if (core.get_job(job_id).at("state") != "succeeded") {
                std::cerr << "bench job failed: " << core.get_job(job_id).dump(2) << "\n";
                return kServerError;
            }

            const nlohmann::json doc = core.get_metrics_json(id);
            const auto& mean = doc.at("aggregate").at("mean");
            const auto& stddev = doc.at("aggregate").at("stddev");

            std::string tm = seeds_note(seeds);
            tm += "experience,seconds_mean,seconds_stddev,patterns\n";
            const auto& seconds = mean.at("seconds");
            for (std::size_t i = 0; i < seconds.size(); ++i) {
                tm += std::to_string(i);
                tm += ',' + fmt_double(seconds[i].get<double>());
                tm += ',' + fmt_double(stddev.at("seconds")[i].get<double>());
                tm += ',' + fmt_double(mean.at("patterns")[i].get<double>());
                tm += '\n';
            }
            write_file(out_dir / (strategy + "_time_memory.csv"), tm);

            std::string acc = seeds_note(seeds);
            acc += "experience,acc_top1_mean,acc_top1_stddev,acc_top5_mean,acc_top5_stddev,avg_acc_"
                   "mean,forgetting_mean\n";
            const auto& top1 = mean.at("stream_acc").at("top1");
            for (std::size_t i = 0; i < top1.size(); ++i) {
                acc += std::to_string(i);
                acc += ',' + fmt_double(top1[i].get<double>());
                acc += ',' + fmt_double(stddev.at("stream_acc").at("top1")[i].get<double>());
                acc += ',' + fmt_double(mean.at("stream_acc").at("top5")[i].get<double>());
                acc += ',' + fmt_double(stddev.at("stream_acc").at("top5")[i].get<double>());
                acc += ',' + fmt_double(mean.at("avg_acc")[i].get<double>());
                acc += ',' + fmt_double(mean.at("forgetting_mean")[i].get<double>());
                acc += '\n';
            }
            write_file(out_dir / (strategy + "_accuracy.csv"), acc);

            std::cout << strategy << ": wrote " << (out_dir / (strategy + "_time_memory.csv")).string()
                      << " and " << (out_dir / (strategy + "_accuracy.csv")).string() << "\n";
        }
        core.stop();
    } catch (const clb::Error& e) {
        std::cerr << "bench failed: " << e.what() << "\n";
        return kInputError;
    } catch (const std::exception& e) {
        std::cerr << "bench failed: " << e.what() << "\n";
        return kServerError;
    }
    if (state_dir.empty()) {
        std::error_code ec;
        fs::remove_all(root, ec);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"client for the continual-learning training service"};
    app.require_subcommand(1);

    Cli cli;
    cli.server = env_or("CLB_SERVER", "http://127.0.0.1:8080");
    app.add_option("--server", cli.server, "server base URL");
    app.add_option("--out", cli.out_dir, "output directory for exported files");
    app.add_option("--format", cli.format, "metrics format: json or csv")
        ->check(CLI::IsMember({"json", "csv"}));

    auto* init = app.add_subcommand("init", "create an experiment from a config file");
    std::string config_path;
    init->add_option("config", config_path, "experiment config JSON")->required();

    auto* push = app.add_subcommand("push", "push one experience");
    std::string push_id, payload_path, train_path, test_path;
    std::vector<std::int64_t> classes;
    push->add_option("experiment", push_id)->required();
    push->add_option("--payload", payload_path, "experience payload JSON file");
    push->add_option("--train", train_path, "train CSV (label,f1,...,fF)");
    push->add_option("--test", test_path, "test CSV");
    push->add_option("--classes", classes, "class indices in this experience")->delimiter(',');

    auto* train = app.add_subcommand("train", "trigger a training job");
    std::string train_id;
    double wait_seconds = 0.0;
    train->add_option("experiment", train_id)->required();
    train->add_option("--wait", wait_seconds, "wait up to N seconds for completion");

    auto* status = app.add_subcommand("status", "show experiment or job status");
    std::string status_id, status_job;
    status->add_option("experiment", status_id);
    status->add_option("--job", status_job, "job id");

    auto* metrics = app.add_subcommand("metrics", "print experiment metrics");
    std::string metrics_id;
    metrics->add_option("experiment", metrics_id)->required();

    auto* observe = app.add_subcommand("observe", "send monitoring observations");
    std::string observe_id, observe_payload, observe_csv;
    observe->add_option("experiment", observe_id)->required();
    observe->add_option("--payload", observe_payload, "observation payload JSON file");
    observe->add_option("--csv", observe_csv, "feature rows CSV (no label column)");

    auto* exp = app.add_subcommand("export", "download metrics or weights");
    std::string export_id, export_what;
    std::size_t export_version = 1, export_run = 0;
    exp->add_option("experiment", export_id)->required();
    exp->add_option("what", export_what, "metrics or weights")->required();
    exp->add_option("--version", export_version, "model version (weights)");
    exp->add_option("--run", export_run, "seed-run index (weights)");

    auto* bench = app.add_subcommand("bench", "run a benchmark preset in-process");
    std::string preset = "blobs10", bench_state_dir;
    std::vector<std::string> bench_strategies{"cumulative", "replay"};
    std::vector<std::uint64_t> bench_seeds{1, 2, 3};
    std::size_t bench_epochs = 2;
    bench->add_option("--preset", preset)->check(CLI::IsMember({"blobs10"}));
    bench->add_option("--strategy", bench_strategies, "strategies to run")
        ->delimiter(',')
        ->check(CLI::IsMember({"naive", "cumulative", "replay"}));
    bench->add_option("--seeds", bench_seeds, "run seeds")->delimiter(',');
    bench->add_option("--epochs", bench_epochs, "epochs per experience");
    bench->add_option("--state-dir", bench_state_dir, "keep service state here instead of a temp dir");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kInputError;
    }

    if (init->parsed()) return cmd_init(cli, config_path);
    if (push->parsed()) return cmd_push(cli, push_id, payload_path, train_path, test_path, classes);
    if (train->parsed()) return cmd_train(cli, train_id, wait_seconds);
    if (status->parsed()) {
        if (status_id.empty() && status_job.empty()) {
            std::cerr << "status needs an experiment id or --job\n";
            return kInputError;
        }
        return cmd_status(cli, status_id, status_job);
    }
    if (metrics->parsed()) return cmd_metrics(cli, metrics_id);
    if (observe->parsed()) return cmd_observe(cli, observe_id, observe_payload, observe_csv);
    if (exp->parsed()) return cmd_export(cli, export_id, export_what, export_version, export_run);
    if (bench->parsed()) return cmd_bench(cli, bench_strategies, bench_seeds, bench_epochs,
                                          bench_state_dir);
    return kInputError;
}
