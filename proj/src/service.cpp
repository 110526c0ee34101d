#include "clb/service.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "clb/errors.hpp"
#include "clb/rng.hpp"

namespace clb {

namespace {

std::string join_path(const std::string& base, const std::string& key) {
    return base.empty() ? key : base + "." + key;
}

const nlohmann::json& req_field(const nlohmann::json& j, const char* key, const std::string& path) {
    if (!j.is_object())
        throw ConfigError("InvalidType", "expected a JSON object", path.empty() ? "(root)" : path);
    auto it = j.find(key);
    if (it == j.end())
        throw ConfigError("MissingField", "missing required field", join_path(path, key));
    return *it;
}

std::size_t as_count(const nlohmann::json& v, const std::string& field) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw ConfigError("InvalidType", "expected a non-negative integer", field);
    return v.get<std::size_t>();
}

std::uint64_t as_u64(const nlohmann::json& v, const std::string& field) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw ConfigError("InvalidType", "expected a non-negative integer", field);
    return v.get<std::uint64_t>();
}

double as_number(const nlohmann::json& v, const std::string& field) {
    if (!v.is_number()) throw ConfigError("InvalidType", "expected a number", field);
    return v.get<double>();
}

std::string as_string(const nlohmann::json& v, const std::string& field) {
    if (!v.is_string()) throw ConfigError("InvalidType", "expected a string", field);
    return v.get<std::string>();
}

// Strict-mode key discipline: `relevant` keys are accepted, `irrelevant`
// keys are known to the schema but meaningless for the chosen enum values,
// anything else is unknown.
void check_keys(const nlohmann::json& j, const std::set<std::string>& relevant,
                const std::set<std::string>& irrelevant, const std::string& path, bool strict) {
    if (!strict || !j.is_object()) return;
    for (const auto& [key, value] : j.items()) {
        if (relevant.count(key)) continue;
        if (irrelevant.count(key))
            throw ConfigError("IrrelevantField", "field has no meaning for this configuration",
                              join_path(path, key));
        throw ConfigError("UnknownField", "unrecognized field", join_path(path, key));
    }
}

ModelSpec model_from_json(const nlohmann::json& j, bool strict) {
    check_keys(j, {"input_dim", "hidden_layers", "num_classes", "activation", "seed"}, {}, "model",
               strict);
    ModelSpec spec;
    spec.input_dim = as_count(req_field(j, "input_dim", "model"), "model.input_dim");
    spec.num_classes = as_count(req_field(j, "num_classes", "model"), "model.num_classes");
    if (j.contains("hidden_layers")) {
        const auto& hl = j.at("hidden_layers");
        if (!hl.is_array())
            throw ConfigError("InvalidType", "expected an array of counts", "model.hidden_layers");
        for (const auto& h : hl) spec.hidden_layers.push_back(as_count(h, "model.hidden_layers"));
    }
    if (j.contains("activation"))
        spec.activation = activation_from_string(as_string(j.at("activation"), "model.activation"));
    if (j.contains("seed")) spec.seed = as_u64(j.at("seed"), "model.seed");
    spec.validate();
    return spec;
}

nlohmann::json model_to_json(const ModelSpec& spec) {
    return {{"input_dim", spec.input_dim},
            {"hidden_layers", spec.hidden_layers},
            {"num_classes", spec.num_classes},
            {"activation", to_string(spec.activation)},
            {"seed", spec.seed}};
}

StrategyConfig strategy_from_json(const nlohmann::json& j, bool strict) {
    StrategyConfig cfg;
    cfg.name = strategy_from_string(as_string(req_field(j, "name", "strategy"), "strategy.name"));

    std::set<std::string> relevant = {"name", "epochs", "batch_size", "lr"};
    std::set<std::string> irrelevant = {"memory_size", "replay_ratio", "sampling"};
    if (cfg.name == StrategyKind::replay) {
        relevant.insert(irrelevant.begin(), irrelevant.end());
        irrelevant.clear();
    }
    check_keys(j, relevant, irrelevant, "strategy", strict);

    if (j.contains("epochs")) cfg.epochs = as_count(j.at("epochs"), "strategy.epochs");
    if (j.contains("batch_size")) cfg.batch_size = as_count(j.at("batch_size"), "strategy.batch_size");
    if (j.contains("lr")) cfg.lr = as_number(j.at("lr"), "strategy.lr");
    if (cfg.name == StrategyKind::replay) {
        cfg.memory_size = as_count(req_field(j, "memory_size", "strategy"), "strategy.memory_size");
        if (j.contains("replay_ratio"))
            cfg.replay_ratio = as_number(j.at("replay_ratio"), "strategy.replay_ratio");
        if (j.contains("sampling"))
            cfg.sampling = sampling_from_string(as_string(j.at("sampling"), "strategy.sampling"));
    }
    cfg.validate();
    return cfg;
}

nlohmann::json strategy_to_json(const StrategyConfig& cfg) {
    nlohmann::json j = {{"name", to_string(cfg.name)},
                        {"epochs", cfg.epochs},
                        {"batch_size", cfg.batch_size},
                        {"lr", cfg.lr}};
    if (cfg.name == StrategyKind::replay) {
        j["memory_size"] = cfg.memory_size;
        j["replay_ratio"] = cfg.replay_ratio;
        j["sampling"] = to_string(cfg.sampling);
    }
    return j;
}

ScenarioConfig scenario_from_json(const nlohmann::json& j, bool strict) {
    ScenarioConfig cfg;
    const std::string kind = j.contains("kind") ? as_string(j.at("kind"), "scenario.kind") : "pushed";
    if (kind == "pushed") {
        cfg.kind = ScenarioConfig::Kind::pushed;
        check_keys(j, {"kind"},
                   {"per_class_train", "per_class_test", "spread", "first_size", "rest_size",
                    "n_experiences", "seed", "manifest_path"},
                   "scenario", strict);
        return cfg;
    }
    if (kind == "blobs") {
        cfg.kind = ScenarioConfig::Kind::blobs;
        check_keys(j,
                   {"kind", "per_class_train", "per_class_test", "spread", "first_size", "rest_size",
                    "n_experiences", "seed"},
                   {"manifest_path"}, "scenario", strict);
        cfg.per_class_train = as_count(req_field(j, "per_class_train", "scenario"), "scenario.per_class_train");
        cfg.per_class_test = as_count(req_field(j, "per_class_test", "scenario"), "scenario.per_class_test");
        if (j.contains("spread")) cfg.spread = as_number(j.at("spread"), "scenario.spread");
    } else if (kind == "manifest") {
        cfg.kind = ScenarioConfig::Kind::manifest;
        check_keys(j, {"kind", "manifest_path", "first_size", "rest_size", "n_experiences", "seed"},
                   {"per_class_train", "per_class_test", "spread"}, "scenario", strict);
        cfg.manifest_path = as_string(req_field(j, "manifest_path", "scenario"), "scenario.manifest_path");
    } else {
        throw ConfigError("UnknownScenario", "unknown scenario kind '" + kind + "'", "scenario.kind");
    }
    cfg.first_size = as_count(req_field(j, "first_size", "scenario"), "scenario.first_size");
    cfg.rest_size = as_count(req_field(j, "rest_size", "scenario"), "scenario.rest_size");
    cfg.n_experiences = as_count(req_field(j, "n_experiences", "scenario"), "scenario.n_experiences");
    if (j.contains("seed")) cfg.seed = as_u64(j.at("seed"), "scenario.seed");
    return cfg;
}

nlohmann::json scenario_to_json(const ScenarioConfig& cfg) {
    switch (cfg.kind) {
        case ScenarioConfig::Kind::pushed: return {{"kind", "pushed"}};
        case ScenarioConfig::Kind::blobs:
            return {{"kind", "blobs"},
                    {"per_class_train", cfg.per_class_train},
                    {"per_class_test", cfg.per_class_test},
                    {"spread", cfg.spread},
                    {"first_size", cfg.first_size},
                    {"rest_size", cfg.rest_size},
                    {"n_experiences", cfg.n_experiences},
                    {"seed", cfg.seed}};
        default:
            return {{"kind", "manifest"},
                    {"manifest_path", cfg.manifest_path},
                    {"first_size", cfg.first_size},
                    {"rest_size", cfg.rest_size},
                    {"n_experiences", cfg.n_experiences},
                    {"seed", cfg.seed}};
    }
}

TriggerRule trigger_from_json(const nlohmann::json& j, bool strict) {
    TriggerRule rule;
    const std::string mode = as_string(req_field(j, "mode", "trigger"), "trigger.mode");
    if (mode == "manual") {
        rule.mode = TriggerRule::Mode::manual;
    } else if (mode == "every_n_experiences") {
        rule.mode = TriggerRule::Mode::every_n_experiences;
    } else if (mode == "on_drift") {
        rule.mode = TriggerRule::Mode::on_drift;
    } else {
        throw ConfigError("UnknownTrigger", "unknown trigger mode '" + mode + "'", "trigger.mode");
    }
    if (rule.mode == TriggerRule::Mode::every_n_experiences) {
        check_keys(j, {"mode", "n"}, {}, "trigger", strict);
        rule.n = as_count(req_field(j, "n", "trigger"), "trigger.n");
        if (rule.n < 1) throw ConfigError("InvalidTrigger", "n must be >= 1", "trigger.n");
    } else {
        check_keys(j, {"mode"}, {"n"}, "trigger", strict);
    }
    return rule;
}

nlohmann::json trigger_to_json(const TriggerRule& rule) {
    nlohmann::json j = {{"mode", to_string(rule.mode)}};
    if (rule.mode == TriggerRule::Mode::every_n_experiences) j["n"] = rule.n;
    return j;
}

DriftConfig drift_from_json(const nlohmann::json& j, bool strict) {
    DriftConfig cfg;
    cfg.detector = detector_from_string(as_string(req_field(j, "detector", "drift"), "drift.detector"));
    std::set<std::string> relevant = {"detector", "alpha", "window"};
    std::set<std::string> irrelevant = {"decay_delta", "psi_threshold", "bins"};
    auto enable = [&](const char* key) {
        relevant.insert(key);
        irrelevant.erase(key);
    };
    if (cfg.detector == Detector::perf_decay) enable("decay_delta");
    if (cfg.detector == Detector::psi) {
        enable("psi_threshold");
        enable("bins");
    }
    check_keys(j, relevant, irrelevant, "drift", strict);

    if (j.contains("alpha")) cfg.alpha = as_number(j.at("alpha"), "drift.alpha");
    if (j.contains("window")) cfg.window = as_count(j.at("window"), "drift.window");
    if (j.contains("decay_delta")) cfg.decay_delta = as_number(j.at("decay_delta"), "drift.decay_delta");
    if (j.contains("psi_threshold"))
        cfg.psi_threshold = as_number(j.at("psi_threshold"), "drift.psi_threshold");
    if (j.contains("bins")) cfg.bins = as_count(j.at("bins"), "drift.bins");
    cfg.validate();
    return cfg;
}

nlohmann::json drift_to_json(const DriftConfig& cfg) {
    nlohmann::json j = {{"detector", to_string(cfg.detector)},
                        {"alpha", cfg.alpha},
                        {"window", cfg.window}};
    if (cfg.detector == Detector::perf_decay) j["decay_delta"] = cfg.decay_delta;
    if (cfg.detector == Detector::psi) {
        j["psi_threshold"] = cfg.psi_threshold;
        j["bins"] = cfg.bins;
    }
    return j;
}

EvalConfig evaluation_from_json(const nlohmann::json& j, std::size_t num_classes, bool strict) {
    check_keys(j, {"top_k", "protocol"}, {}, "evaluation", strict);
    EvalConfig cfg;
    if (j.contains("top_k")) {
        const auto& arr = j.at("top_k");
        if (!arr.is_array() || arr.empty())
            throw ConfigError("InvalidType", "expected a non-empty array", "evaluation.top_k");
        for (const auto& k : arr) cfg.top_k.push_back(as_count(k, "evaluation.top_k"));
        std::sort(cfg.top_k.begin(), cfg.top_k.end());
        cfg.top_k.erase(std::unique(cfg.top_k.begin(), cfg.top_k.end()), cfg.top_k.end());
        for (std::size_t k : cfg.top_k)
            if (k < 1 || k > num_classes)
                throw ConfigError("InvalidTopK", "top_k value outside [1, num_classes]",
                                  "evaluation.top_k");
    } else {
        cfg.top_k = {1, std::min<std::size_t>(5, num_classes)};
        if (cfg.top_k[0] == cfg.top_k[1]) cfg.top_k.pop_back();
    }
    if (j.contains("protocol"))
        cfg.protocol = protocol_from_string(as_string(j.at("protocol"), "evaluation.protocol"));
    return cfg;
}

nlohmann::json evaluation_to_json(const EvalConfig& cfg) {
    return {{"top_k", cfg.top_k}, {"protocol", to_string(cfg.protocol)}};
}

}  // namespace

std::string to_string(TriggerRule::Mode m) {
    switch (m) {
        case TriggerRule::Mode::manual: return "manual";
        case TriggerRule::Mode::every_n_experiences: return "every_n_experiences";
        default: return "on_drift";
    }
}

std::string to_string(TriggerCause c) {
    switch (c) {
        case TriggerCause::manual: return "manual";
        case TriggerCause::schedule: return "schedule";
        default: return "drift";
    }
}

std::string to_string(JobState s) {
    switch (s) {
        case JobState::queued: return "queued";
        case JobState::running: return "running";
        case JobState::succeeded: return "succeeded";
        default: return "failed";
    }
}

namespace {

TriggerCause cause_from_string(const std::string& s) {
    if (s == "manual") return TriggerCause::manual;
    if (s == "schedule") return TriggerCause::schedule;
    return TriggerCause::drift;
}

JobState job_state_from_string(const std::string& s) {
    if (s == "queued") return JobState::queued;
    if (s == "running") return JobState::running;
    if (s == "succeeded") return JobState::succeeded;
    return JobState::failed;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, bool strict) {
    check_keys(j,
               {"experiment_id", "model", "strategy", "scenario", "trigger", "drift", "evaluation",
                "runs", "run_seeds"},
               {}, "", strict);
    ExperimentConfig cfg;
    if (j.contains("experiment_id")) {
        cfg.experiment_id = as_string(j.at("experiment_id"), "experiment_id");
        if (!valid_id(cfg.experiment_id))
            throw ConfigError("InvalidId", "experiment_id must match [A-Za-z0-9._-]+",
                              "experiment_id");
    }
    cfg.model = model_from_json(req_field(j, "model", ""), strict);
    cfg.strategy = strategy_from_json(req_field(j, "strategy", ""), strict);
    cfg.scenario = j.contains("scenario") ? scenario_from_json(j.at("scenario"), strict)
                                          : ScenarioConfig{};
    cfg.trigger = trigger_from_json(req_field(j, "trigger", ""), strict);
    if (j.contains("drift")) cfg.drift = drift_from_json(j.at("drift"), strict);
    cfg.evaluation = evaluation_from_json(j.contains("evaluation") ? j.at("evaluation")
                                                                   : nlohmann::json::object(),
                                          cfg.model.num_classes, strict);
    if (j.contains("runs")) cfg.runs = as_count(j.at("runs"), "runs");
    if (cfg.runs < 1) throw ConfigError("InvalidRuns", "runs must be >= 1", "runs");
    if (j.contains("run_seeds")) {
        const auto& arr = j.at("run_seeds");
        if (!arr.is_array()) throw ConfigError("InvalidType", "expected an array", "run_seeds");
        for (const auto& s : arr) cfg.run_seeds.push_back(as_u64(s, "run_seeds"));
        if (cfg.run_seeds.size() != cfg.runs)
            throw ConfigError("InvalidRuns", "run_seeds length must equal runs", "run_seeds");
    }
    if (cfg.trigger.mode == TriggerRule::Mode::on_drift && !cfg.drift)
        throw ConfigError("InvalidTrigger", "on_drift trigger requires a drift config", "trigger.mode");
    return cfg;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    if (!experiment_id.empty()) j["experiment_id"] = experiment_id;
    j["model"] = model_to_json(model);
    j["strategy"] = strategy_to_json(strategy);
    j["scenario"] = scenario_to_json(scenario);
    j["trigger"] = trigger_to_json(trigger);
    if (drift) j["drift"] = drift_to_json(*drift);
    j["evaluation"] = evaluation_to_json(evaluation);
    j["runs"] = runs;
    if (!run_seeds.empty()) j["run_seeds"] = run_seeds;
    return j;
}

std::uint64_t ExperimentConfig::run_seed(std::size_t run) const {
    if (!run_seeds.empty()) return run_seeds[run];
    return run == 0 ? model.seed : mix_seed(model.seed, 0xA11CEull + run);
}

nlohmann::json TrainingJob::to_json() const {
    nlohmann::json j;
    j["job_id"] = job_id;
    j["experiment_id"] = experiment_id;
    j["trigger_cause"] = to_string(cause);
    j["state"] = to_string(state);
    j["submitted_at"] = submitted_at;
    j["started_at"] = started_at.empty() ? nlohmann::json() : nlohmann::json(started_at);
    j["finished_at"] = finished_at.empty() ? nlohmann::json() : nlohmann::json(finished_at);
    j["error"] = error.empty() ? nlohmann::json() : nlohmann::json(error);
    return j;
}

TrainingJob TrainingJob::from_json(const nlohmann::json& j) {
    TrainingJob job;
    job.job_id = j.at("job_id").get<std::string>();
    job.experiment_id = j.at("experiment_id").get<std::string>();
    job.cause = cause_from_string(j.at("trigger_cause").get<std::string>());
    job.state = job_state_from_string(j.at("state").get<std::string>());
    job.submitted_at = j.at("submitted_at").get<std::string>();
    if (j.contains("started_at") && j.at("started_at").is_string())
        job.started_at = j.at("started_at").get<std::string>();
    if (j.contains("finished_at") && j.at("finished_at").is_string())
        job.finished_at = j.at("finished_at").get<std::string>();
    if (j.contains("error") && j.at("error").is_string())
        job.error = j.at("error").get<std::string>();
    return job;
}

namespace {

std::string experience_key(const std::string& id, std::size_t index) {
    return "experiments/" + id + "/experiences/" + std::to_string(index) + ".json";
}

std::string metrics_doc_key(const std::string& id) {
    return "experiments/" + id + "/metrics.json";
}

std::vector<std::uint8_t> to_bytes(const std::string& s) {
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

std::string to_text(const std::vector<std::uint8_t>& b) {
    return std::string(b.begin(), b.end());
}

// Per-run metrics round-trip for restart recovery; the prediction log is
// in-memory only and not restored.
nlohmann::json run_metrics_to_json(const RunMetrics& rm) {
    nlohmann::json j;
    j["seed"] = rm.seed;
    j["top_k"] = rm.top_k;
    nlohmann::json mats = nlohmann::json::array();
    for (const auto& m : rm.matrices) mats.push_back(m.rows);
    j["matrices"] = mats;
    j["stream_acc"] = rm.stream_acc;
    j["seconds"] = rm.trace.seconds;
    j["patterns"] = rm.trace.patterns;
    return j;
}

RunMetrics run_metrics_from_json(const nlohmann::json& j) {
    RunMetrics rm;
    rm.seed = j.at("seed").get<std::uint64_t>();
    rm.top_k = j.at("top_k").get<std::vector<std::size_t>>();
    for (const auto& m : j.at("matrices")) {
        AccuracyMatrix am;
        am.rows = m.get<std::vector<std::vector<double>>>();
        rm.matrices.push_back(std::move(am));
    }
    rm.stream_acc = j.at("stream_acc").get<std::vector<std::vector<double>>>();
    rm.trace.seconds = j.at("seconds").get<std::vector<double>>();
    rm.trace.patterns = j.at("patterns").get<std::vector<std::uint64_t>>();
    return rm;
}

}  // namespace

ServiceCore::ServiceCore(std::filesystem::path storage_root, std::size_t workers)
    : storage_root_(std::move(storage_root)), worker_count_(workers == 0 ? 1 : workers) {
    store_ = std::make_unique<FsStore>(storage_root_ / "blobs");
    registry_ = std::make_unique<Registry>(*store_, storage_root_ / "meta");
    jobs_journal_ = std::make_unique<Journal>(storage_root_ / "meta" / "jobs.jsonl");
    load_state();
}

ServiceCore::~ServiceCore() { stop(); }

void ServiceCore::start() {
    std::lock_guard<std::mutex> lock(mutex_);
    if (!workers_.empty()) return;
    stopping_ = false;
    for (std::size_t i = 0; i < worker_count_; ++i)
        workers_.emplace_back([this] { worker_loop(); });
}

void ServiceCore::stop() {
    {
        std::lock_guard<std::mutex> lock(mutex_);
        stopping_ = true;
        cv_.notify_all();
    }
    for (auto& t : workers_) t.join();
    workers_.clear();
}

void ServiceCore::load_state() {
    for (const std::string& id : registry_->list_experiments()) {
        nlohmann::json cfg_json = registry_->get_experiment_config(id);
        ExperimentRuntime rt;
        rt.cfg = ExperimentConfig::from_json(cfg_json, false);
        rt.cfg.experiment_id = id;
        rt.cfg_json = cfg_json;

        for (std::size_t idx = 0;; ++idx) {
            const std::string key = experience_key(id, idx);
            if (!store_->exists(key)) break;
            nlohmann::json payload = nlohmann::json::parse(to_text(store_->get(key)));
            rt.experiences.push_back(parse_experience_payload(payload, idx, rt.cfg));
        }

        std::vector<RunMetrics> stored_runs;
        if (store_->exists(metrics_doc_key(id))) {
            nlohmann::json doc = nlohmann::json::parse(to_text(store_->get(metrics_doc_key(id))));
            for (const auto& rj : doc.at("raw_runs")) stored_runs.push_back(run_metrics_from_json(rj));
        }

        rt.trained_watermark = rt.experiences.size();
        for (std::size_t r = 0; r < rt.cfg.runs; ++r) {
            RunRuntime run;
            ModelSpec spec = rt.cfg.model;
            spec.seed = rt.cfg.run_seed(r);
            run.state = make_strategy(rt.cfg.strategy, spec);
            run.trained = registry_->version_count(id, r);
            if (run.trained > rt.experiences.size())
                throw StorageError("experiment " + id + " has more versions than experiences");
            if (run.trained > 0) {
                run.state.params = deserialize_weights(registry_->get_weights(id, r, run.trained));
                for (std::size_t i = 0; i < run.trained; ++i)
                    rebuild_strategy_memory(run.state, rt.cfg.strategy, rt.experiences[i]);
            }
            if (r < stored_runs.size()) run.metrics = stored_runs[r];
            run.metrics.seed = spec.seed;
            run.metrics.top_k = rt.cfg.evaluation.top_k;
            run.tlog.complete = true;
            for (std::size_t i = 0; i < run.metrics.trace.seconds.size(); ++i) {
                TrainStats s;
                s.seconds = run.metrics.trace.seconds[i];
                s.patterns_trained_on = run.metrics.trace.patterns[i];
                run.tlog.per_experience.push_back(s);
            }
            rt.trained_watermark = std::min(rt.trained_watermark, run.trained);
            rt.runs.push_back(std::move(run));
        }

        if (rt.cfg.drift) {
            rt.monitor = std::make_unique<DriftMonitor>(*rt.cfg.drift, rt.cfg.model.input_dim);
            if (rt.cfg.drift->detector == Detector::perf_decay && !rt.runs.empty() &&
                !rt.runs[0].metrics.stream_acc.empty() && !rt.runs[0].metrics.stream_acc[0].empty())
                rt.monitor->set_baseline(rt.runs[0].metrics.stream_acc[0].back());
        }

        experiments_.emplace(id, std::move(rt));

        // Auto-generated ids are e<N>; keep the counter ahead of them.
        if (id.size() > 1 && id[0] == 'e' &&
            id.find_first_not_of("0123456789", 1) == std::string::npos)
            next_experiment_number_ =
                std::max<std::uint64_t>(next_experiment_number_, std::stoull(id.substr(1)) + 1);
    }

    // Jobs: last journal record per id wins; anything unfinished at shutdown
    // is marked failed now.
    for (const auto& j : jobs_journal_->load()) {
        TrainingJob job = TrainingJob::from_json(j);
        jobs_[job.job_id] = job;
        if (job.job_id.size() > 1 && job.job_id[0] == 'j')
            next_job_number_ = std::max<std::uint64_t>(
                next_job_number_, std::stoull(job.job_id.substr(1)) + 1);
    }
    for (auto& [job_id, job] : jobs_) {
        if (job.state == JobState::queued || job.state == JobState::running) {
            job.state = JobState::failed;
            job.error = "interrupted by service restart";
            job.finished_at = rfc3339_now();
            jobs_journal_->append(job.to_json());
        }
        if (job.state == JobState::succeeded) {
            auto it = experiments_.find(job.experiment_id);
            if (it != experiments_.end()) it->second.succeeded_jobs += 1;
        }
    }
    for (auto& [id, rt] : experiments_)
        if (rt.succeeded_jobs > 0 && !rt.runs.empty() && !rt.runs[0].metrics.matrices.empty())
            publish_metrics_locked(id, rt);
}

ServiceCore::ExperimentRuntime& ServiceCore::runtime_or_throw(const std::string& id) {
    auto it = experiments_.find(id);
    if (it == experiments_.end()) throw NotFound("unknown experiment: " + id);
    return it->second;
}

const ServiceCore::ExperimentRuntime& ServiceCore::runtime_or_throw(const std::string& id) const {
    auto it = experiments_.find(id);
    if (it == experiments_.end()) throw NotFound("unknown experiment: " + id);
    return it->second;
}

std::string ServiceCore::create_experiment(const nlohmann::json& config_json) {
    ExperimentConfig cfg = ExperimentConfig::from_json(config_json, true);

    std::unique_lock<std::mutex> lock(mutex_);
    std::string id = cfg.experiment_id;
    if (id.empty()) {
        do {
            id = "e" + std::to_string(next_experiment_number_++);
        } while (experiments_.count(id));
        cfg.experiment_id = id;
    } else if (experiments_.count(id)) {
        throw Duplicate("experiment already exists: " + id);
    }

    ExperimentRuntime rt;
    rt.cfg = cfg;
    rt.cfg_json = cfg.to_json();

    // Offline phase: materialize the scenario when one is configured.
    if (cfg.scenario.kind != ScenarioConfig::Kind::pushed) {
        Batch train, test;
        if (cfg.scenario.kind == ScenarioConfig::Kind::blobs) {
            std::tie(train, test) =
                synth_blobs(cfg.model.num_classes, cfg.model.input_dim, cfg.scenario.per_class_train,
                            cfg.scenario.per_class_test, cfg.scenario.spread, cfg.scenario.seed);
        } else {
            std::ifstream in(cfg.scenario.manifest_path, std::ios::binary);
            if (!in)
                throw ConfigError("InvalidManifest", "cannot open manifest: " + cfg.scenario.manifest_path,
                                  "scenario.manifest_path");
            std::ostringstream ss;
            ss << in.rdbuf();
            DatasetManifest manifest = manifest_from_json_text(ss.str());
            std::tie(train, test) = ingest_csv(manifest);
        }
        Scenario scenario = build_nc_scenario(train, test, cfg.model.num_classes,
                                              cfg.scenario.first_size, cfg.scenario.rest_size,
                                              cfg.scenario.n_experiences, cfg.scenario.seed,
                                              cfg.evaluation.protocol);
        rt.experiences = std::move(scenario.experiences);
    }

    for (std::size_t r = 0; r < cfg.runs; ++r) {
        RunRuntime run;
        ModelSpec spec = cfg.model;
        spec.seed = cfg.run_seed(r);
        run.state = make_strategy(cfg.strategy, spec);
        run.metrics.seed = spec.seed;
        run.metrics.top_k = cfg.evaluation.top_k;
        run.tlog.complete = true;
        rt.runs.push_back(std::move(run));
    }
    if (cfg.drift) rt.monitor = std::make_unique<DriftMonitor>(*cfg.drift, cfg.model.input_dim);

    registry_->create_experiment(id, rt.cfg_json);
    for (std::size_t i = 0; i < rt.experiences.size(); ++i)
        store_->put(experience_key(id, i), to_bytes(experience_payload_json(rt.experiences[i]).dump()));

    experiments_.emplace(id, std::move(rt));
    return id;
}

Experience ServiceCore::parse_experience_payload(const nlohmann::json& payload, std::size_t index,
                                                 const ExperimentConfig& cfg) const {
    if (!payload.is_object()) throw DataError("experience payload must be a JSON object");
    for (const auto& [key, value] : payload.items()) {
        static const std::set<std::string> allowed = {"classes", "train_csv", "test_csv",
                                                      "train_count", "test_count"};
        if (!allowed.count(key)) throw DataError("unrecognized experience payload field: " + key);
    }
    const auto& classes = req_field(payload, "classes", "payload");
    if (!classes.is_array() || classes.empty())
        throw DataError("classes must be a non-empty array of class indices");

    Experience exp;
    exp.index = index;
    for (const auto& c : classes) {
        const std::size_t cls = as_count(c, "payload.classes");
        if (cls >= cfg.model.num_classes)
            throw DataError("class " + std::to_string(cls) + " outside model num_classes");
        exp.class_set.push_back(static_cast<std::int32_t>(cls));
    }
    std::sort(exp.class_set.begin(), exp.class_set.end());
    if (std::adjacent_find(exp.class_set.begin(), exp.class_set.end()) != exp.class_set.end())
        throw DataError("duplicate class in payload class list");

    exp.train = parse_csv(as_string(req_field(payload, "train_csv", "payload"), "payload.train_csv"),
                          cfg.model.input_dim, cfg.model.num_classes);
    exp.test = parse_csv(as_string(req_field(payload, "test_csv", "payload"), "payload.test_csv"),
                         cfg.model.input_dim, cfg.model.num_classes);

    auto check_membership = [&](const Batch& b, const char* which) {
        for (std::int32_t label : b.labels)
            if (!std::binary_search(exp.class_set.begin(), exp.class_set.end(), label))
                throw DataError(std::string(which) + " label " + std::to_string(label) +
                                " not in the declared class list");
    };
    check_membership(exp.train, "train");
    check_membership(exp.test, "test");

    if (payload.contains("train_count") &&
        as_count(payload.at("train_count"), "payload.train_count") != exp.train.size())
        throw DataError("train_count does not match the parsed train rows");
    if (payload.contains("test_count") &&
        as_count(payload.at("test_count"), "payload.test_count") != exp.test.size())
        throw DataError("test_count does not match the parsed test rows");
    return exp;
}

nlohmann::json ServiceCore::experience_payload_json(const Experience& exp) const {
    nlohmann::json j;
    j["classes"] = exp.class_set;
    j["train_count"] = exp.train.size();
    j["test_count"] = exp.test.size();
    j["train_csv"] = batch_to_csv(exp.train);
    j["test_csv"] = batch_to_csv(exp.test);
    return j;
}

std::size_t ServiceCore::pending_locked(const ExperimentRuntime& exp) const {
    const std::size_t base = exp.running_job ? exp.claimed_upto : exp.trained_watermark;
    return exp.experiences.size() - std::min(base, exp.experiences.size());
}

std::string ServiceCore::enqueue_locked(ExperimentRuntime& exp, const std::string& id,
                                        TriggerCause cause) {
    if (exp.queued_job) return *exp.queued_job;  // coalesce into the queued job
    TrainingJob job;
    job.job_id = "j" + std::to_string(next_job_number_++);
    job.experiment_id = id;
    job.cause = cause;
    job.state = JobState::queued;
    job.submitted_at = rfc3339_now();
    persist_job_locked(job);
    jobs_[job.job_id] = job;
    queue_.push_back(job.job_id);
    exp.queued_job = job.job_id;
    cv_.notify_all();
    return job.job_id;
}

void ServiceCore::persist_job_locked(const TrainingJob& job) {
    jobs_journal_->append(job.to_json());
}

std::size_t ServiceCore::push_experience(const std::string& id, const nlohmann::json& payload) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto& rt = runtime_or_throw(id);
    if (rt.cfg.scenario.kind != ScenarioConfig::Kind::pushed)
        throw ConfigError("ScenarioFixed", "experiment has a pre-built scenario; pushes are not accepted");

    Experience exp = parse_experience_payload(payload, rt.experiences.size(), rt.cfg);
    for (const auto& prior : rt.experiences) {
        std::vector<std::int32_t> overlap;
        std::set_intersection(prior.class_set.begin(), prior.class_set.end(), exp.class_set.begin(),
                              exp.class_set.end(), std::back_inserter(overlap));
        if (!overlap.empty())
            throw ClassOverlap("class " + std::to_string(overlap[0]) +
                               " already belongs to experience " + std::to_string(prior.index));
    }

    store_->put(experience_key(id, exp.index), to_bytes(experience_payload_json(exp).dump()));
    rt.experiences.push_back(std::move(exp));
    const std::size_t index = rt.experiences.size() - 1;

    if (rt.cfg.trigger.mode == TriggerRule::Mode::every_n_experiences) {
        const std::size_t pending = pending_locked(rt);
        if (pending > 0 && pending % rt.cfg.trigger.n == 0)
            enqueue_locked(rt, id, TriggerCause::schedule);
    }
    return index;
}

std::string ServiceCore::trigger_job(const std::string& id, TriggerCause cause) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto& rt = runtime_or_throw(id);
    if (pending_locked(rt) == 0 && !rt.queued_job)
        throw NothingToTrain("no untrained experiences pending");
    return enqueue_locked(rt, id, cause);
}

nlohmann::json ServiceCore::observe(const std::string& id, const nlohmann::json& payload) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto& rt = runtime_or_throw(id);
    if (!rt.monitor) throw MonitoringDisabled("experiment has no drift configuration");

    Matrix samples;
    if (payload.contains("samples")) {
        const auto& arr = payload.at("samples");
        if (!arr.is_array()) throw DataError("samples must be an array of feature rows");
        samples.rows = arr.size();
        samples.cols = rt.cfg.model.input_dim;
        samples.data.reserve(samples.rows * samples.cols);
        for (const auto& row : arr) {
            if (!row.is_array() || row.size() != samples.cols)
                throw DataError("each sample row must have input_dim features");
            for (const auto& v : row) {
                if (!v.is_number()) throw DataError("sample features must be numbers");
                samples.data.push_back(v.get<float>());
            }
        }
    }
    std::vector<std::int32_t> labels, preds;
    const std::vector<std::int32_t>* labels_ptr = nullptr;
    const std::vector<std::int32_t>* preds_ptr = nullptr;
    if (payload.contains("labels")) {
        labels = payload.at("labels").get<std::vector<std::int32_t>>();
        labels_ptr = &labels;
    }
    if (payload.contains("preds")) {
        preds = payload.at("preds").get<std::vector<std::int32_t>>();
        preds_ptr = &preds;
    }

    const auto reports = rt.monitor->observe(samples, labels_ptr, preds_ptr);

    nlohmann::json out;
    out["reports"] = nlohmann::json::array();
    bool fired = false;
    for (const auto& r : reports) {
        out["reports"].push_back(r.to_json());
        fired = fired || r.fired;
    }
    if (fired && rt.cfg.trigger.mode == TriggerRule::Mode::on_drift && pending_locked(rt) > 0)
        out["job_id"] = enqueue_locked(rt, id, TriggerCause::drift);
    return out;
}

nlohmann::json ServiceCore::get_experiment(const std::string& id) const {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto& rt = runtime_or_throw(id);
    nlohmann::json j;
    j["experiment_id"] = id;
    j["config"] = rt.cfg_json;
    j["experiences_pushed"] = rt.experiences.size();
    j["experiences_trained"] = rt.trained_watermark;
    j["pending"] = pending_locked(rt);
    j["succeeded_jobs"] = rt.succeeded_jobs;
    j["queued_job"] = rt.queued_job ? nlohmann::json(*rt.queued_job) : nlohmann::json();
    j["running_job"] = rt.running_job ? nlohmann::json(*rt.running_job) : nlohmann::json();
    return j;
}

nlohmann::json ServiceCore::get_job(const std::string& job_id) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw NotFound("unknown job: " + job_id);
    return it->second.to_json();
}

nlohmann::json ServiceCore::get_metrics_json(const std::string& id) const {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto& rt = runtime_or_throw(id);
    auto it = metrics_docs_.find(id);
    if (rt.succeeded_jobs == 0 || it == metrics_docs_.end())
        throw NotFound("no completed training job yet", "NoMetricsYet");
    return it->second;
}

std::string ServiceCore::get_metrics_csv(const std::string& id) const {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto& rt = runtime_or_throw(id);
    auto it = metrics_csvs_.find(id);
    if (rt.succeeded_jobs == 0 || it == metrics_csvs_.end())
        throw NotFound("no completed training job yet", "NoMetricsYet");
    return it->second;
}

nlohmann::json ServiceCore::list_versions(const std::string& id) const {
    {
        std::lock_guard<std::mutex> lock(mutex_);
        runtime_or_throw(id);
    }
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : registry_->list_versions(id)) out.push_back(v.to_json());
    return out;
}

nlohmann::json ServiceCore::get_version(const std::string& id, std::size_t version,
                                        std::size_t run) const {
    return registry_->get_version(id, run, version).to_json();
}

std::vector<std::uint8_t> ServiceCore::get_weights(const std::string& id, std::size_t version,
                                                   std::size_t run) const {
    return registry_->get_weights(id, run, version);
}

bool ServiceCore::wait_job(const std::string& job_id, double timeout_seconds) const {
    std::unique_lock<std::mutex> lock(mutex_);
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
    while (true) {
        auto it = jobs_.find(job_id);
        if (it == jobs_.end()) throw NotFound("unknown job: " + job_id);
        if (it->second.state == JobState::succeeded || it->second.state == JobState::failed)
            return true;
        if (cv_.wait_until(lock, deadline) == std::cv_status::timeout) return false;
    }
}

void ServiceCore::publish_metrics_locked(const std::string& id, ExperimentRuntime& exp) {
    std::vector<RunMetrics> rms;
    nlohmann::json raw_runs = nlohmann::json::array();
    for (const auto& run : exp.runs) {
        rms.push_back(run.metrics);
        rms.back().log.clear();
        raw_runs.push_back(run_metrics_to_json(run.metrics));
    }
    RunRecord record = aggregate(std::move(rms));
    nlohmann::json doc = metrics_json(record);
    doc["experiment_id"] = id;
    doc["protocol"] = to_string(exp.cfg.evaluation.protocol);
    doc["raw_runs"] = raw_runs;
    metrics_docs_[id] = doc;
    metrics_csvs_[id] = metrics_csv(record);
    store_->put(metrics_doc_key(id), to_bytes(doc.dump()));
}

void ServiceCore::worker_loop() {
    std::unique_lock<std::mutex> lock(mutex_);
    while (!stopping_) {
        std::string job_id;
        for (const auto& cand : queue_) {
            const auto& exp = experiments_.at(jobs_.at(cand).experiment_id);
            if (!exp.busy) {
                job_id = cand;
                break;
            }
        }
        if (job_id.empty()) {
            cv_.wait(lock);
            continue;
        }
        queue_.erase(std::find(queue_.begin(), queue_.end(), job_id));
        auto& job = jobs_.at(job_id);
        auto& exp = experiments_.at(job.experiment_id);
        job.state = JobState::running;
        job.started_at = rfc3339_now();
        persist_job_locked(job);
        if (exp.queued_job && *exp.queued_job == job_id) exp.queued_job.reset();
        exp.running_job = job_id;
        exp.busy = true;
        exp.claimed_upto = exp.experiences.size();
        cv_.notify_all();

        lock.unlock();
        run_job(job_id);
        lock.lock();
    }
}

void ServiceCore::run_job(const std::string& job_id) {
    std::string exp_id;
    ExperimentConfig cfg;
    std::vector<Experience> experiences;
    std::vector<RunRuntime> runs;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto& job = jobs_.at(job_id);
        exp_id = job.experiment_id;
        auto& exp = experiments_.at(exp_id);
        cfg = exp.cfg;
        experiences.assign(exp.experiences.begin(),
                           exp.experiences.begin() + static_cast<std::ptrdiff_t>(exp.claimed_upto));
        runs = std::move(exp.runs);
        exp.runs.clear();
    }

    std::string error;
    try {
        for (std::size_t i = 0; i < experiences.size(); ++i) {
            for (std::size_t r = 0; r < runs.size(); ++r) {
                auto& run = runs[r];
                if (run.trained > i) continue;  // uneven recovery state self-heals here
                TrainStats stats = train_experience(run.state, cfg.strategy, experiences[i]);
                record_step(run.metrics, run.state.spec, run.state.params, experiences,
                            cfg.evaluation.protocol, i);
                run.tlog.per_experience.push_back(stats);
                run.metrics.trace.seconds.push_back(stats.seconds);
                run.metrics.trace.patterns.push_back(stats.patterns_trained_on);

                const std::size_t next_version = registry_->version_count(exp_id, r) + 1;
                std::optional<std::size_t> parent;
                if (cfg.strategy.name != StrategyKind::cumulative && next_version > 1)
                    parent = next_version - 1;

                nlohmann::json step_metrics;
                step_metrics["experience"] = i;
                step_metrics["run"] = r;
                step_metrics["seconds"] = stats.seconds;
                step_metrics["patterns"] = stats.patterns_trained_on;
                step_metrics["final_loss"] = stats.final_loss;
                for (std::size_t ki = 0; ki < run.metrics.top_k.size(); ++ki)
                    step_metrics["stream_acc"]["top" + std::to_string(run.metrics.top_k[ki])] =
                        run.metrics.stream_acc[ki].back();
                step_metrics["avg_acc"] = avg_accuracy(run.metrics.matrices[0], i);

                registry_->commit_version(exp_id, r, run.state.params, strategy_to_json(cfg.strategy),
                                          parent, step_metrics);
                run.trained = i + 1;
            }
        }
    } catch (const std::exception& e) {
        error = e.what();
    }

    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto& exp = experiments_.at(exp_id);
        exp.runs = std::move(runs);
        exp.busy = false;
        exp.running_job.reset();
        exp.claimed_upto = 0;
        exp.trained_watermark = exp.experiences.size();
        for (const auto& run : exp.runs)
            exp.trained_watermark = std::min(exp.trained_watermark, run.trained);

        auto& job = jobs_.at(job_id);
        job.finished_at = rfc3339_now();
        if (error.empty()) {
            job.state = JobState::succeeded;
            exp.succeeded_jobs += 1;
            publish_metrics_locked(exp_id, exp);
            if (exp.monitor) {
                // New deployment: restart the reference window and refresh
                // the supervised baseline from the primary run.
                exp.monitor->reset();
                if (!exp.runs.empty() && !exp.runs[0].metrics.stream_acc.empty() &&
                    !exp.runs[0].metrics.stream_acc[0].empty())
                    exp.monitor->set_baseline(exp.runs[0].metrics.stream_acc[0].back());
            }
        } else {
            job.state = JobState::failed;
            job.error = error;
        }
        persist_job_locked(job);
        cv_.notify_all();
    }
}

}  // namespace clb
