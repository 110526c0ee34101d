#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "clb/drift.hpp"
#include "clb/evaluation.hpp"
#include "clb/registry.hpp"
#include "clb/scenario.hpp"
#include "clb/strategies.hpp"

#include "json.hpp"

namespace clb {

struct TriggerRule {
    enum class Mode { manual, every_n_experiences, on_drift };
    Mode mode = Mode::manual;
    std::size_t n = 1;  // every_n_experiences only
};

std::string to_string(TriggerRule::Mode m);

struct EvalConfig {
    std::vector<std::size_t> top_k;  // defaulted against num_classes at parse time
    TestProtocol protocol = TestProtocol::full_test;
};

// Where experiences come from: pushed over the API, generated Gaussian
// blobs, or a dataset manifest split into a class-incremental stream.
struct ScenarioConfig {
    enum class Kind { pushed, blobs, manifest };
    Kind kind = Kind::pushed;

    // blobs
    std::size_t num_classes = 0;
    std::size_t feature_dim = 0;
    std::size_t per_class_train = 0;
    std::size_t per_class_test = 0;
    double spread = 0.3;

    // blobs + manifest
    std::size_t first_size = 0;
    std::size_t rest_size = 0;
    std::size_t n_experiences = 0;
    std::uint64_t seed = 0;

    // manifest
    std::string manifest_path;
};

struct ExperimentConfig {
    std::string experiment_id;  // optional; generated when empty
    ModelSpec model;
    StrategyConfig strategy;
    ScenarioConfig scenario;
    TriggerRule trigger;
    std::optional<DriftConfig> drift;
    EvalConfig evaluation;
    std::size_t runs = 3;
    std::vector<std::uint64_t> run_seeds;  // optional override, size == runs

    // Strict parsing: unknown fields and fields irrelevant to the chosen
    // enums are rejected with the offending field path.
    static ExperimentConfig from_json(const nlohmann::json& j, bool strict = true);
    nlohmann::json to_json() const;

    std::uint64_t run_seed(std::size_t run) const;
};

enum class TriggerCause { manual, schedule, drift };
enum class JobState { queued, running, succeeded, failed };

std::string to_string(TriggerCause c);
std::string to_string(JobState s);

struct TrainingJob {
    std::string job_id;
    std::string experiment_id;
    TriggerCause cause = TriggerCause::manual;
    JobState state = JobState::queued;
    std::string submitted_at;
    std::string started_at;
    std::string finished_at;
    std::string error;

    nlohmann::json to_json() const;
    static TrainingJob from_json(const nlohmann::json& j);
};

/// Interface tier minus HTTP: experiment lifecycle, experience ingestion,
/// trigger-rule scheduling and the training worker pool. State is rebuilt
/// from the registry journals on startup, so a killed process comes back
/// with every committed version intact and interrupted jobs marked failed.
class ServiceCore {
public:
    explicit ServiceCore(std::filesystem::path storage_root, std::size_t workers = 1);
    ~ServiceCore();

    ServiceCore(const ServiceCore&) = delete;
    ServiceCore& operator=(const ServiceCore&) = delete;

    void start();
    void stop();

    std::string create_experiment(const nlohmann::json& config_json);
    std::size_t push_experience(const std::string& id, const nlohmann::json& payload);
    std::string trigger_job(const std::string& id, TriggerCause cause = TriggerCause::manual);
    nlohmann::json observe(const std::string& id, const nlohmann::json& payload);

    nlohmann::json get_experiment(const std::string& id) const;
    nlohmann::json get_job(const std::string& job_id) const;
    nlohmann::json get_metrics_json(const std::string& id) const;
    std::string get_metrics_csv(const std::string& id) const;
    nlohmann::json list_versions(const std::string& id) const;
    nlohmann::json get_version(const std::string& id, std::size_t version, std::size_t run) const;
    std::vector<std::uint8_t> get_weights(const std::string& id, std::size_t version,
                                          std::size_t run) const;

    // Blocks until the job leaves {queued, running}; false on timeout.
    bool wait_job(const std::string& job_id, double timeout_seconds) const;

    Registry& registry() { return *registry_; }

private:
    struct RunRuntime {
        StrategyState state;
        std::size_t trained = 0;
        RunMetrics metrics;
        TrainingLog tlog;
    };

    struct ExperimentRuntime {
        ExperimentConfig cfg;
        nlohmann::json cfg_json;
        std::vector<Experience> experiences;
        std::vector<RunRuntime> runs;
        std::unique_ptr<DriftMonitor> monitor;
        std::size_t succeeded_jobs = 0;
        std::size_t trained_watermark = 0;
        std::size_t claimed_upto = 0;  // while a job is running
        std::optional<std::string> queued_job;
        std::optional<std::string> running_job;
        bool busy = false;  // run states handed to a worker
    };

    std::string enqueue_locked(ExperimentRuntime& exp, const std::string& id, TriggerCause cause);
    std::size_t pending_locked(const ExperimentRuntime& exp) const;
    void persist_job_locked(const TrainingJob& job);
    void publish_metrics_locked(const std::string& id, ExperimentRuntime& exp);
    void worker_loop();
    void run_job(const std::string& job_id);
    Experience parse_experience_payload(const nlohmann::json& payload, std::size_t index,
                                        const ExperimentConfig& cfg) const;
    nlohmann::json experience_payload_json(const Experience& exp) const;
    void load_state();
    ExperimentRuntime& runtime_or_throw(const std::string& id);
    const ExperimentRuntime& runtime_or_throw(const std::string& id) const;

    std::filesystem::path storage_root_;
    std::size_t worker_count_;
    std::unique_ptr<FsStore> store_;
    std::unique_ptr<Registry> registry_;
    std::unique_ptr<Journal> jobs_journal_;

    mutable std::mutex mutex_;
    mutable std::condition_variable cv_;
    std::map<std::string, ExperimentRuntime> experiments_;
    std::map<std::string, TrainingJob> jobs_;
    std::deque<std::string> queue_;
    std::map<std::string, nlohmann::json> metrics_docs_;
    std::map<std::string, std::string> metrics_csvs_;
    std::uint64_t next_job_number_ = 1;
    std::uint64_t next_experiment_number_ = 1;
    bool stopping_ = false;
    std::vector<std::thread> workers_;
};

}  // namespace clb
