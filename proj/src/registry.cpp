#include "clb/registry.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <ctime>
#include <fstream>

#include <unistd.h>

#include "clb/errors.hpp"

namespace clb {

namespace fs = std::filesystem;

bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 128) return false;
    if (id == "." || id == "..") return false;
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '-' || c == '_' || c == '.';
        if (!ok) return false;
    }
    return true;
}

std::string rfc3339_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace {

void validate_key(const std::string& key) {
    if (key.empty() || key.front() == '/' || key.back() == '/')
        throw KeyError("invalid storage key: '" + key + "'");
    std::size_t start = 0;
    while (start <= key.size()) {
        const std::size_t slash = key.find('/', start);
        const std::string seg =
            key.substr(start, slash == std::string::npos ? std::string::npos : slash - start);
        if (seg.empty() || seg == "." || seg == "..")
            throw KeyError("invalid storage key segment in '" + key + "'");
        if (slash == std::string::npos) break;
        start = slash + 1;
    }
}

std::atomic<std::uint64_t> tmp_counter{0};

}  // namespace

FsStore::FsStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec || !fs::is_directory(root_))
        throw StorageError("cannot create store root: " + root_.string());
    // Probe writability up front.
    const fs::path probe = root_ / ".writable";
    std::ofstream out(probe, std::ios::binary);
    if (!out) throw StorageError("store root is not writable: " + root_.string());
    out.close();
    fs::remove(probe, ec);
}

fs::path FsStore::resolve(const std::string& key) const {
    validate_key(key);
    return root_ / fs::path(key);
}

void FsStore::put(const std::string& key, const std::vector<std::uint8_t>& bytes) {
    const fs::path target = resolve(key);
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw StorageError("cannot create directories for key: " + key);

    const fs::path tmp = target.parent_path() /
                         (target.filename().string() + ".tmp." + std::to_string(::getpid()) + "." +
                          std::to_string(tmp_counter.fetch_add(1)));
    {
        std::FILE* f = std::fopen(tmp.c_str(), "wb");
        if (!f) throw StorageError("cannot open temp file for key: " + key);
        if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
            std::fclose(f);
            fs::remove(tmp, ec);
            throw StorageError("short write for key: " + key);
        }
        std::fflush(f);
        ::fsync(::fileno(f));
        std::fclose(f);
    }
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw StorageError("cannot rename temp file into place for key: " + key);
    }
}

std::vector<std::uint8_t> FsStore::get(const std::string& key) const {
    const fs::path target = resolve(key);
    std::ifstream in(target, std::ios::binary);
    if (!in) throw NotFound("no blob at key: " + key);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

bool FsStore::exists(const std::string& key) const {
    return fs::is_regular_file(resolve(key));
}

void FsStore::remove(const std::string& key) {
    std::error_code ec;
    fs::remove(resolve(key), ec);
}

nlohmann::json ModelVersion::to_json() const {
    nlohmann::json j;
    j["experiment_id"] = experiment_id;
    j["run"] = run;
    j["version"] = version;
    if (parent_version)
        j["parent_version"] = *parent_version;
    else
        j["parent_version"] = nullptr;
    j["created_at"] = created_at;
    j["strategy_snapshot"] = strategy_snapshot;
    j["weights_key"] = weights_key;
    j["metrics_key"] = metrics_key;
    return j;
}

ModelVersion ModelVersion::from_json(const nlohmann::json& j) {
    ModelVersion v;
    v.experiment_id = j.at("experiment_id").get<std::string>();
    v.run = j.at("run").get<std::size_t>();
    v.version = j.at("version").get<std::size_t>();
    if (j.contains("parent_version") && !j.at("parent_version").is_null())
        v.parent_version = j.at("parent_version").get<std::size_t>();
    v.created_at = j.at("created_at").get<std::string>();
    v.strategy_snapshot = j.at("strategy_snapshot");
    v.weights_key = j.at("weights_key").get<std::string>();
    v.metrics_key = j.at("metrics_key").get<std::string>();
    return v;
}

Journal::Journal(fs::path path) : path_(std::move(path)) {
    std::error_code ec;
    fs::create_directories(path_.parent_path(), ec);
}

void Journal::append(const nlohmann::json& j) {
    std::FILE* f = std::fopen(path_.c_str(), "ab");
    if (!f) throw StorageError("cannot open journal: " + path_.string());
    const std::string line = j.dump() + "\n";
    const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size();
    std::fflush(f);
    ::fsync(::fileno(f));
    std::fclose(f);
    if (!ok) throw StorageError("short journal append: " + path_.string());
}

std::vector<nlohmann::json> Journal::load() const {
    std::vector<nlohmann::json> out;
    std::ifstream in(path_);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;  // torn tail from an interrupted writer
        out.push_back(std::move(j));
    }
    return out;
}

Registry::Registry(BlobStore& store, fs::path meta_root)
    : store_(store), meta_root_(std::move(meta_root)) {
    std::error_code ec;
    fs::create_directories(meta_root_, ec);
    experiments_journal_ = std::make_unique<Journal>(meta_root_ / "experiments.jsonl");

    for (const auto& j : experiments_journal_->load()) {
        const std::string id = j.at("experiment_id").get<std::string>();
        experiments_[id].config = j.at("config");
        writers_.emplace(id, std::make_unique<std::mutex>());
    }
    for (auto& [id, entry] : experiments_) {
        Journal vj(versions_path(id));
        for (const auto& j : vj.load()) {
            ModelVersion v = ModelVersion::from_json(j);
            entry.versions[{v.run, v.version}] = std::move(v);
        }
    }
}

fs::path Registry::versions_path(const std::string& id) const {
    return meta_root_ / "versions" / (id + ".jsonl");
}

Registry::ExperimentEntry& Registry::entry_or_throw(const std::string& id) {
    auto it = experiments_.find(id);
    if (it == experiments_.end()) throw NotFound("unknown experiment: " + id);
    return it->second;
}

const Registry::ExperimentEntry& Registry::entry_or_throw(const std::string& id) const {
    auto it = experiments_.find(id);
    if (it == experiments_.end()) throw NotFound("unknown experiment: " + id);
    return it->second;
}

void Registry::create_experiment(const std::string& id, const nlohmann::json& config) {
    if (!valid_id(id)) throw KeyError("invalid experiment id: '" + id + "'");
    std::lock_guard<std::mutex> lock(mutex_);
    if (experiments_.count(id)) throw Duplicate("experiment already exists: " + id);
    experiments_journal_->append({{"experiment_id", id}, {"config", config}});
    experiments_[id].config = config;
    writers_.emplace(id, std::make_unique<std::mutex>());
}

bool Registry::experiment_exists(const std::string& id) const {
    std::lock_guard<std::mutex> lock(mutex_);
    return experiments_.count(id) > 0;
}

nlohmann::json Registry::get_experiment_config(const std::string& id) const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entry_or_throw(id).config;
}

std::vector<std::string> Registry::list_experiments() const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<std::string> ids;
    ids.reserve(experiments_.size());
    for (const auto& [id, entry] : experiments_) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    return ids;
}

ModelVersion Registry::commit_version(const std::string& experiment_id, std::size_t run,
                                      const Params& params,
                                      const nlohmann::json& strategy_snapshot,
                                      std::optional<std::size_t> parent_version,
                                      const nlohmann::json& step_metrics) {
    std::mutex* writer;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        entry_or_throw(experiment_id);
        writer = writers_.at(experiment_id).get();
    }
    // One writer per experiment: version numbers stay gapless under
    // concurrent commit attempts.
    std::lock_guard<std::mutex> write_lock(*writer);

    std::size_t next;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        next = version_count_unlocked(experiment_id, run) + 1;
    }

    ModelVersion v;
    v.experiment_id = experiment_id;
    v.run = run;
    v.version = next;
    v.parent_version = parent_version;
    v.created_at = rfc3339_now();
    v.strategy_snapshot = strategy_snapshot;
    const std::string base = "experiments/" + experiment_id + "/runs/" + std::to_string(run);
    v.weights_key = base + "/weights/v" + std::to_string(next) + ".clbw";
    v.metrics_key = base + "/metrics/v" + std::to_string(next) + ".json";

    store_.put(v.weights_key, serialize_weights(params));
    const std::string metrics_text = step_metrics.dump();
    store_.put(v.metrics_key, std::vector<std::uint8_t>(metrics_text.begin(), metrics_text.end()));

    // The journal append is the commit point; a crash before it leaves only
    // unreferenced blobs behind.
    Journal vj(versions_path(experiment_id));
    vj.append(v.to_json());

    {
        std::lock_guard<std::mutex> lock(mutex_);
        entry_or_throw(experiment_id).versions[{run, next}] = v;
    }
    return v;
}

ModelVersion Registry::get_version(const std::string& experiment_id, std::size_t run,
                                   std::size_t version) const {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto& entry = entry_or_throw(experiment_id);
    auto it = entry.versions.find({run, version});
    if (it == entry.versions.end())
        throw NotFound("experiment " + experiment_id + " has no version " + std::to_string(version) +
                       " for run " + std::to_string(run));
    return it->second;
}

std::vector<std::uint8_t> Registry::get_weights(const std::string& experiment_id, std::size_t run,
                                                std::size_t version) const {
    return store_.get(get_version(experiment_id, run, version).weights_key);
}

std::vector<ModelVersion> Registry::list_versions(const std::string& experiment_id) const {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto& entry = entry_or_throw(experiment_id);
    std::vector<ModelVersion> out;
    out.reserve(entry.versions.size());
    for (const auto& [key, v] : entry.versions) out.push_back(v);
    return out;
}

std::size_t Registry::version_count(const std::string& experiment_id, std::size_t run) const {
    std::lock_guard<std::mutex> lock(mutex_);
    return version_count_unlocked(experiment_id, run);
}

std::size_t Registry::version_count_unlocked(const std::string& experiment_id,
                                             std::size_t run) const {
    const auto& entry = entry_or_throw(experiment_id);
    std::size_t count = 0;
    for (const auto& [key, v] : entry.versions)
        if (key.first == run) count = std::max(count, key.second);
    return count;
}

}  // namespace clb
