#include "clb/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <map>
#include <set>

#include "clb/errors.hpp"
#include "clb/rng.hpp"

namespace clb {

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "naive") return StrategyKind::naive;
    if (s == "cumulative") return StrategyKind::cumulative;
    if (s == "replay") return StrategyKind::replay;
    throw ConfigError("UnknownStrategy", "unknown strategy '" + s + "'", "strategy.name");
}

std::string to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::naive: return "naive";
        case StrategyKind::cumulative: return "cumulative";
        default: return "replay";
    }
}

SamplingKind sampling_from_string(const std::string& s) {
    if (s == "reservoir") return SamplingKind::reservoir;
    if (s == "class_balanced") return SamplingKind::class_balanced;
    throw ConfigError("UnknownSampling", "unknown sampling '" + s + "'", "strategy.sampling");
}

std::string to_string(SamplingKind k) {
    return k == SamplingKind::reservoir ? "reservoir" : "class_balanced";
}

void StrategyConfig::validate() const {
    if (epochs < 1) throw ConfigError("InvalidStrategy", "epochs must be >= 1", "strategy.epochs");
    if (batch_size < 1)
        throw ConfigError("InvalidStrategy", "batch_size must be >= 1", "strategy.batch_size");
    if (lr <= 0.0) throw ConfigError("InvalidStrategy", "lr must be > 0", "strategy.lr");
    if (name == StrategyKind::replay) {
        if (memory_size < 1)
            throw ConfigError("InvalidStrategy", "replay requires memory_size >= 1",
                              "strategy.memory_size");
        if (replay_ratio <= 0.0 || replay_ratio > 1.0)
            throw ConfigError("InvalidStrategy", "replay_ratio must be in (0, 1]",
                              "strategy.replay_ratio");
    }
}

std::vector<Pattern> to_patterns(const Batch& batch) {
    std::vector<Pattern> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Pattern p;
        p.features.assign(batch.features.row(i), batch.features.row(i) + batch.features.cols);
        p.label = batch.labels[i];
        out.push_back(std::move(p));
    }
    return out;
}

Batch to_batch(const std::vector<Pattern>& patterns, std::size_t feature_dim) {
    Batch out;
    out.features.rows = patterns.size();
    out.features.cols = feature_dim;
    out.features.data.reserve(patterns.size() * feature_dim);
    out.labels.reserve(patterns.size());
    for (const auto& p : patterns) {
        out.features.data.insert(out.features.data.end(), p.features.begin(), p.features.end());
        out.labels.push_back(p.label);
    }
    return out;
}

ReplayBuffer buffer_update(ReplayBuffer buffer, const std::vector<Pattern>& new_items,
                           std::size_t memory_size, SamplingKind sampling, std::uint64_t seed) {
    if (memory_size < 1) throw ConfigError("InvalidStrategy", "memory_size must be >= 1");

    if (sampling == SamplingKind::reservoir) {
        Rng rng(mix_seed(seed, 0xBEEFull));
        for (const auto& item : new_items) {
            buffer.seen += 1;
            if (buffer.items.size() < memory_size) {
                buffer.items.push_back(item);
            } else {
                const std::uint64_t j = rng.below(buffer.seen);
                if (j < memory_size) buffer.items[static_cast<std::size_t>(j)] = item;
            }
        }
        return buffer;
    }

    // class_balanced: per-class FIFO under a shared quota. Oldest items are
    // evicted first whenever a class exceeds floor(memory_size / classes seen).
    std::map<std::int32_t, std::deque<Pattern>> per_class;
    for (auto& item : buffer.items) per_class[item.label].push_back(std::move(item));
    for (const auto& item : new_items) {
        buffer.seen += 1;
        per_class[item.label].push_back(item);
        const std::size_t quota = memory_size / per_class.size();
        for (auto& [label, dq] : per_class)
            while (dq.size() > quota) dq.pop_front();
    }
    buffer.items.clear();
    for (auto& [label, dq] : per_class)
        for (auto& item : dq) buffer.items.push_back(std::move(item));
    return buffer;
}

StrategyState make_strategy(const StrategyConfig& cfg, const ModelSpec& spec) {
    cfg.validate();
    spec.validate();
    StrategyState state;
    state.spec = spec;
    state.params = init_params(spec);
    return state;
}

namespace {

constexpr std::uint64_t kShuffleTag = 0x51u;
constexpr std::uint64_t kDrawTag = 0xD2u;
constexpr std::uint64_t kBufferTag = 0xB4u;

Batch gather(const Batch& src, const std::vector<std::size_t>& perm, std::size_t begin,
             std::size_t end) {
    Batch out;
    out.features.rows = end - begin;
    out.features.cols = src.features.cols;
    out.features.data.reserve(out.features.rows * out.features.cols);
    out.labels.reserve(out.features.rows);
    for (std::size_t i = begin; i < end; ++i) {
        const std::size_t r = perm[i];
        out.features.data.insert(out.features.data.end(), src.features.row(r),
                                 src.features.row(r) + src.features.cols);
        out.labels.push_back(src.labels[r]);
    }
    return out;
}

struct EpochResult {
    double mean_loss = 0.0;
    std::uint64_t patterns = 0;
};

// One pass over `data` in shuffled minibatches. The shuffle seed depends on
// the epoch only, never on how many experiences came before, which is what
// makes incremental cumulative training bit-identical to a from-scratch run
// on the same union.
EpochResult run_epoch(StrategyState& state, const StrategyConfig& cfg, const Batch& data,
                      std::size_t epoch) {
    Rng shuffle_rng(mix_seed(state.spec.seed, mix_seed(kShuffleTag, epoch)));
    const auto perm = shuffle_rng.permutation(data.size());

    EpochResult res;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < data.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(begin + cfg.batch_size, data.size());
        Batch mini = gather(data, perm, begin, end);
        auto lg = loss_and_grad(state.spec, state.params, mini);
        state.params = sgd_step(state.params, lg.grads, cfg.lr);
        loss_sum += lg.loss * static_cast<double>(mini.size());
        res.patterns += mini.size();
    }
    res.mean_loss = loss_sum / static_cast<double>(data.size());
    return res;
}

// One replay pass: new data paced in shuffled chunks, each chunk topped up
// with memory draws so that replay_ratio of every minibatch comes from the
// buffer. Draws use replacement; the final partial chunk scales its memory
// share proportionally, so per-epoch memory usage stays bounded by the
// new-data volume.
EpochResult run_replay_epoch(StrategyState& state, const StrategyConfig& cfg, const Batch& data,
                             std::size_t epoch, Rng& draw_rng) {
    const std::size_t batch = cfg.batch_size;
    std::size_t mem_per_batch = 0;
    if (!state.buffer.items.empty()) {
        mem_per_batch = static_cast<std::size_t>(std::llround(cfg.replay_ratio * static_cast<double>(batch)));
        mem_per_batch = std::min(mem_per_batch, batch - 1);
    }
    const std::size_t new_per_batch = batch - mem_per_batch;

    Rng shuffle_rng(mix_seed(state.spec.seed, mix_seed(kShuffleTag, epoch)));
    const auto perm = shuffle_rng.permutation(data.size());

    EpochResult res;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < data.size(); begin += new_per_batch) {
        const std::size_t end = std::min(begin + new_per_batch, data.size());
        Batch mini = gather(data, perm, begin, end);
        std::size_t mem_draw = mem_per_batch;
        if (end - begin < new_per_batch)
            mem_draw = static_cast<std::size_t>(std::llround(
                static_cast<double>(end - begin) * static_cast<double>(mem_per_batch) /
                static_cast<double>(new_per_batch)));
        for (std::size_t d = 0; d < mem_draw; ++d) {
            const auto& p =
                state.buffer.items[static_cast<std::size_t>(draw_rng.below(state.buffer.items.size()))];
            mini.features.data.insert(mini.features.data.end(), p.features.begin(), p.features.end());
            mini.labels.push_back(p.label);
            mini.features.rows += 1;
        }
        auto lg = loss_and_grad(state.spec, state.params, mini);
        state.params = sgd_step(state.params, lg.grads, cfg.lr);
        loss_sum += lg.loss * static_cast<double>(mini.size());
        res.patterns += mini.size();
    }
    res.mean_loss = res.patterns > 0 ? loss_sum / static_cast<double>(res.patterns) : 0.0;
    return res;
}

void emit(const std::vector<HookFn>& hooks, HookEvent ev) {
    for (const auto& h : hooks)
        if (h) h(ev);
}

}  // namespace

TrainStats train_experience(StrategyState& state, const StrategyConfig& cfg, const Experience& exp,
                            const std::vector<HookFn>& hooks) {
    cfg.validate();
    if (exp.train.empty()) throw EmptyExperience("experience " + std::to_string(exp.index) + " has no train data");
    if (exp.train.features.cols != state.spec.input_dim)
        throw DimensionError("experience feature dim does not match model");

    emit(hooks, {HookEvent::Kind::before_experience, exp.index, 0, 0.0});

    TrainStats stats;
    const auto t0 = std::chrono::steady_clock::now();
    double last_epoch_loss = 0.0;

    switch (cfg.name) {
        case StrategyKind::naive: {
            for (std::size_t e = 0; e < cfg.epochs; ++e) {
                auto res = run_epoch(state, cfg, exp.train, e);
                stats.patterns_trained_on += res.patterns;
                last_epoch_loss = res.mean_loss;
                emit(hooks, {HookEvent::Kind::after_epoch, exp.index, e, res.mean_loss});
            }
            break;
        }
        case StrategyKind::cumulative: {
            // Stateless retraining: fresh weights, full history plus the new data.
            state.params = init_params(state.spec);
            Batch all = to_batch(state.cumulative_store, state.spec.input_dim);
            std::vector<const Batch*> parts{&all, &exp.train};
            Batch data = concat_batches(parts);
            for (std::size_t e = 0; e < cfg.epochs; ++e) {
                auto res = run_epoch(state, cfg, data, e);
                stats.patterns_trained_on += res.patterns;
                last_epoch_loss = res.mean_loss;
                emit(hooks, {HookEvent::Kind::after_epoch, exp.index, e, res.mean_loss});
            }
            break;
        }
        case StrategyKind::replay: {
            Rng draw_rng(mix_seed(state.spec.seed,
                                  mix_seed(kDrawTag, state.experiences_trained)));
            for (std::size_t e = 0; e < cfg.epochs; ++e) {
                auto res = run_replay_epoch(state, cfg, exp.train, e, draw_rng);
                stats.patterns_trained_on += res.patterns;
                last_epoch_loss = res.mean_loss;
                emit(hooks, {HookEvent::Kind::after_epoch, exp.index, e, res.mean_loss});
            }
            break;
        }
    }

    const auto t1 = std::chrono::steady_clock::now();
    stats.seconds = std::chrono::duration<double>(t1 - t0).count();
    stats.final_loss = last_epoch_loss;

    // Memory bookkeeping stays outside the timed window.
    rebuild_strategy_memory(state, cfg, exp);

    emit(hooks, {HookEvent::Kind::after_experience, exp.index, cfg.epochs, last_epoch_loss});
    return stats;
}

void rebuild_strategy_memory(StrategyState& state, const StrategyConfig& cfg,
                             const Experience& exp) {
    if (cfg.name == StrategyKind::cumulative) {
        auto new_patterns = to_patterns(exp.train);
        state.cumulative_store.insert(state.cumulative_store.end(),
                                      std::make_move_iterator(new_patterns.begin()),
                                      std::make_move_iterator(new_patterns.end()));
    } else if (cfg.name == StrategyKind::replay) {
        state.buffer = buffer_update(std::move(state.buffer), to_patterns(exp.train), cfg.memory_size,
                                     cfg.sampling,
                                     mix_seed(state.spec.seed,
                                              mix_seed(kBufferTag, state.experiences_trained)));
    }
    state.seen_count += exp.train.size();
    state.experiences_trained += 1;
}

}  // namespace clb
