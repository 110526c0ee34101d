#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "clb/nn.hpp"

#include "json.hpp"

namespace clb {

/// Storage proxy. Keys are slash-separated UTF-8 paths; ".." segments,
/// absolute paths and empty keys are rejected. get(put(k, b)) == b byte-exact.
class BlobStore {
public:
    virtual ~BlobStore() = default;
    virtual void put(const std::string& key, const std::vector<std::uint8_t>& bytes) = 0;
    virtual std::vector<std::uint8_t> get(const std::string& key) const = 0;
    virtual bool exists(const std::string& key) const = 0;
    virtual void remove(const std::string& key) = 0;
};

// Filesystem-backed store; writes go to a temp file and are renamed into
// place, so a key is either absent or complete.
class FsStore : public BlobStore {
public:
    explicit FsStore(std::filesystem::path root);

    void put(const std::string& key, const std::vector<std::uint8_t>& bytes) override;
    std::vector<std::uint8_t> get(const std::string& key) const override;
    bool exists(const std::string& key) const override;
    void remove(const std::string& key) override;

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path resolve(const std::string& key) const;
    std::filesystem::path root_;
};

struct ModelVersion {
    std::string experiment_id;
    std::size_t run = 0;  // seed-run index; versions are gapless per (experiment, run)
    std::size_t version = 0;  // starts at 1
    std::optional<std::size_t> parent_version;
    std::string created_at;  // RFC 3339 UTC
    nlohmann::json strategy_snapshot;
    std::string weights_key;
    std::string metrics_key;

    nlohmann::json to_json() const;
    static ModelVersion from_json(const nlohmann::json& j);
};

// Append-only JSON-lines file. Appends are flushed and fsynced; loading
// tolerates a truncated final line from an interrupted writer.
class Journal {
public:
    explicit Journal(std::filesystem::path path);
    void append(const nlohmann::json& j);
    std::vector<nlohmann::json> load() const;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Middleware tier: experiment records and model version lineage, journaled
/// per experiment and rebuilt on startup. Writes to one experiment are
/// serialized here, not by callers.
class Registry {
public:
    Registry(BlobStore& store, std::filesystem::path meta_root);

    void create_experiment(const std::string& id, const nlohmann::json& config);
    bool experiment_exists(const std::string& id) const;
    nlohmann::json get_experiment_config(const std::string& id) const;
    std::vector<std::string> list_experiments() const;

    ModelVersion commit_version(const std::string& experiment_id, std::size_t run,
                                const Params& params, const nlohmann::json& strategy_snapshot,
                                std::optional<std::size_t> parent_version,
                                const nlohmann::json& step_metrics);
    ModelVersion get_version(const std::string& experiment_id, std::size_t run,
                             std::size_t version) const;
    std::vector<std::uint8_t> get_weights(const std::string& experiment_id, std::size_t run,
                                          std::size_t version) const;
    std::vector<ModelVersion> list_versions(const std::string& experiment_id) const;
    std::size_t version_count(const std::string& experiment_id, std::size_t run) const;

    BlobStore& store() { return store_; }

private:
    struct ExperimentEntry {
        nlohmann::json config;
        // (run, version) -> record
        std::map<std::pair<std::size_t, std::size_t>, ModelVersion> versions;
    };

    std::filesystem::path versions_path(const std::string& id) const;
    ExperimentEntry& entry_or_throw(const std::string& id);
    const ExperimentEntry& entry_or_throw(const std::string& id) const;
    std::size_t version_count_unlocked(const std::string& id, std::size_t run) const;

    BlobStore& store_;
    std::filesystem::path meta_root_;
    std::unordered_map<std::string, ExperimentEntry> experiments_;
    std::unique_ptr<Journal> experiments_journal_;
    mutable std::mutex mutex_;  // guards the maps
    std::unordered_map<std::string, std::unique_ptr<std::mutex>> writers_;  // per experiment
};

// Validates identifiers used in storage keys: [A-Za-z0-9._-]+, no "..".
bool valid_id(const std::string& id);

std::string rfc3339_now();

}  // namespace clb
