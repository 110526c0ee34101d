#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clb/nn.hpp"
#include "clb/scenario.hpp"
#include "clb/strategies.hpp"

#include "json.hpp"

namespace clb {

/// R[i][j]: accuracy on experience j's test split after training step i.
/// Under accumulating_test rows stop at j == i; under full_test they cover
/// every experience known when the row was recorded.
struct AccuracyMatrix {
    std::vector<std::vector<double>> rows;

    std::size_t steps() const { return rows.size(); }
};

struct EfficiencyTrace {
    std::vector<double> seconds;
    std::vector<std::uint64_t> patterns;
};

// Raw per-sample predictions, enough to recompute every reported metric.
struct PredictionRecord {
    std::size_t step = 0;
    std::string dataset;  // "exp/<j>" or "stream"
    std::vector<std::int32_t> labels;
    std::vector<std::vector<std::int32_t>> topk;  // per sample, max-k entries
};

struct RunMetrics {
    std::uint64_t seed = 0;
    std::vector<std::size_t> top_k;            // ascending, e.g. {1, 5}
    std::vector<AccuracyMatrix> matrices;      // parallel to top_k
    std::vector<std::vector<double>> stream_acc;  // parallel to top_k, per step
    EfficiencyTrace trace;
    std::vector<PredictionRecord> log;
};

// Per-run metric summaries, elementwise across seeds.
struct MetricsSummary {
    std::vector<std::size_t> top_k;
    std::vector<std::vector<std::vector<double>>> matrices;
    std::vector<std::vector<double>> stream_acc;
    std::vector<double> seconds;
    std::vector<double> patterns;
    std::vector<double> avg_acc;
    std::vector<double> forgetting_mean;
};

struct RunRecord {
    std::vector<RunMetrics> runs;
    MetricsSummary mean;
    MetricsSummary stddev;
};

// Fraction of samples whose label is among the top-k predictions.
double eval_accuracy(const ModelSpec& spec, const Params& params, const Batch& batch, std::size_t k);

// Mean of R[step][j] over j <= step.
double avg_accuracy(const AccuracyMatrix& m, std::size_t step);

// max over l in [j, T-1] of R[l][j], minus R[T][j].
double forgetting(const AccuracyMatrix& m, std::size_t j, std::size_t T);

// mean over j < T of R[T][j] - R[j][j].
double backward_transfer(const AccuracyMatrix& m, std::size_t T);

// Mean forgetting over all past experiences at step T (0 when T == 0).
double mean_forgetting(const AccuracyMatrix& m, std::size_t T);

struct TrainingLog {
    std::vector<TrainStats> per_experience;
    bool complete = false;
};

EfficiencyTrace track(const TrainingLog& log);  // JobStateError unless complete

// Evaluates `params` after training step `step` on every known experience
// plus the protocol test stream, appending one row per configured k and the
// raw prediction records behind them.
void record_step(RunMetrics& rm, const ModelSpec& spec, const Params& params,
                 const std::vector<Experience>& experiences, TestProtocol protocol,
                 std::size_t step);

// Accuracy recomputed from a raw prediction record; the oracle counterpart
// of the values stored by record_step.
double recompute_accuracy(const PredictionRecord& rec, std::size_t k);

RunRecord aggregate(std::vector<RunMetrics> runs);

std::string metrics_csv(const RunRecord& record);
nlohmann::json metrics_json(const RunRecord& record);

}  // namespace clb
