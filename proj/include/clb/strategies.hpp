#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "clb/nn.hpp"
#include "clb/scenario.hpp"

namespace clb {

enum class StrategyKind { naive, cumulative, replay };
enum class SamplingKind { reservoir, class_balanced };

StrategyKind strategy_from_string(const std::string& s);
std::string to_string(StrategyKind k);
SamplingKind sampling_from_string(const std::string& s);
std::string to_string(SamplingKind k);

struct StrategyConfig {
    StrategyKind name = StrategyKind::naive;
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    double lr = 0.05;
    std::size_t memory_size = 0;     // replay only
    double replay_ratio = 0.5;       // replay only, fraction of each batch from memory
    SamplingKind sampling = SamplingKind::reservoir;

    void validate() const;  // throws ConfigError
};

struct Pattern {
    std::vector<float> features;
    std::int32_t label = 0;
};

std::vector<Pattern> to_patterns(const Batch& batch);
Batch to_batch(const std::vector<Pattern>& patterns, std::size_t feature_dim);

/// Bounded memory of raw past samples.
struct ReplayBuffer {
    std::vector<Pattern> items;
    std::uint64_t seen = 0;  // items ever offered to the buffer
};

// Reservoir sampling keeps each of the first n items with probability
// memory_size/n; class_balanced keeps per-class FIFO quotas of
// floor(memory_size / classes seen so far).
ReplayBuffer buffer_update(ReplayBuffer buffer, const std::vector<Pattern>& new_items,
                           std::size_t memory_size, SamplingKind sampling, std::uint64_t seed);

struct HookEvent {
    enum class Kind { before_experience, after_epoch, after_experience };
    Kind kind;
    std::size_t experience_index = 0;
    std::size_t epoch = 0;       // valid for after_epoch
    double running_loss = 0.0;   // mean loss of the finished epoch / experience
};

using HookFn = std::function<void(const HookEvent&)>;

/// The stateful learner: parameters plus whatever memory the strategy keeps.
/// spec.seed is the effective seed of this state; every shuffle, draw and
/// re-initialization derives from it, so training is reproducible.
struct StrategyState {
    ModelSpec spec;
    Params params;
    ReplayBuffer buffer;                  // replay
    std::vector<Pattern> cumulative_store;  // cumulative, in arrival order
    std::uint64_t seen_count = 0;
    std::size_t experiences_trained = 0;
};

struct TrainStats {
    double seconds = 0.0;
    std::uint64_t patterns_trained_on = 0;
    double final_loss = 0.0;
};

StrategyState make_strategy(const StrategyConfig& cfg, const ModelSpec& spec);

// Trains the state on one experience, per the configured strategy:
// naive fine-tunes on exp.train; cumulative re-initializes from the spec
// seed and retrains on everything seen; replay mixes exp.train minibatches
// with draws from the buffer (replay_ratio of each batch) and then folds
// exp.train into the buffer.
TrainStats train_experience(StrategyState& state, const StrategyConfig& cfg, const Experience& exp,
                            const std::vector<HookFn>& hooks = {});

// Advances strategy memory and counters for an already-trained experience
// without touching the parameters. Buffer updates reuse the training seed
// schedule, so replaying the trained experiences reproduces the memory a
// crashed process held; parameters come back from the committed weights.
void rebuild_strategy_memory(StrategyState& state, const StrategyConfig& cfg, const Experience& exp);

}  // namespace clb
