#include "clb/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "clb/errors.hpp"

namespace clb {

double eval_accuracy(const ModelSpec& spec, const Params& params, const Batch& batch,
                     std::size_t k) {
    if (batch.empty()) throw EmptyBatch("cannot evaluate an empty batch");
    const auto topk = predict_topk(spec, params, batch, k);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (std::find(topk[i].begin(), topk[i].end(), batch.labels[i]) != topk[i].end()) ++hits;
    return static_cast<double>(hits) / static_cast<double>(batch.size());
}

double avg_accuracy(const AccuracyMatrix& m, std::size_t step) {
    if (step >= m.rows.size()) throw RangeError("accuracy matrix row " + std::to_string(step) + " missing");
    const auto& row = m.rows[step];
    if (row.size() <= step) throw RangeError("accuracy matrix row " + std::to_string(step) + " too short");
    double sum = 0.0;
    for (std::size_t j = 0; j <= step; ++j) sum += row[j];
    return sum / static_cast<double>(step + 1);
}

double forgetting(const AccuracyMatrix& m, std::size_t j, std::size_t T) {
    if (j >= T) throw RangeError("forgetting requires j < T");
    if (T >= m.rows.size()) throw RangeError("accuracy matrix row " + std::to_string(T) + " missing");
    double best = m.rows[j][j];
    for (std::size_t l = j; l < T; ++l) best = std::max(best, m.rows[l][j]);
    return best - m.rows[T][j];
}

double backward_transfer(const AccuracyMatrix& m, std::size_t T) {
    if (T == 0) return 0.0;
    if (T >= m.rows.size()) throw RangeError("accuracy matrix row " + std::to_string(T) + " missing");
    double sum = 0.0;
    for (std::size_t j = 0; j < T; ++j) sum += m.rows[T][j] - m.rows[j][j];
    return sum / static_cast<double>(T);
}

double mean_forgetting(const AccuracyMatrix& m, std::size_t T) {
    if (T == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t j = 0; j < T; ++j) sum += forgetting(m, j, T);
    return sum / static_cast<double>(T);
}

EfficiencyTrace track(const TrainingLog& log) {
    if (!log.complete) throw JobStateError("job did not run to completion");
    EfficiencyTrace trace;
    for (const auto& s : log.per_experience) {
        trace.seconds.push_back(s.seconds);
        trace.patterns.push_back(s.patterns_trained_on);
    }
    return trace;
}

namespace {

struct EvalResult {
    std::vector<double> acc_per_k;
    PredictionRecord record;
};

EvalResult evaluate_with_log(const ModelSpec& spec, const Params& params, const Batch& batch,
                             const std::vector<std::size_t>& top_k, std::size_t step,
                             std::string dataset) {
    EvalResult out;
    const std::size_t max_k = top_k.back();
    out.record.step = step;
    out.record.dataset = std::move(dataset);
    out.record.labels = batch.labels;
    out.record.topk = predict_topk(spec, params, batch, max_k);
    for (std::size_t k : top_k) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& row = out.record.topk[i];
            for (std::size_t p = 0; p < k; ++p)
                if (row[p] == batch.labels[i]) {
                    ++hits;
                    break;
                }
        }
        out.acc_per_k.push_back(static_cast<double>(hits) / static_cast<double>(batch.size()));
    }
    return out;
}

}  // namespace

double recompute_accuracy(const PredictionRecord& rec, std::size_t k) {
    if (rec.labels.empty()) throw EmptyBatch("prediction record is empty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < rec.labels.size(); ++i) {
        const auto& row = rec.topk[i];
        if (k > row.size()) throw RangeError("k exceeds logged prediction depth");
        for (std::size_t p = 0; p < k; ++p)
            if (row[p] == rec.labels[i]) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(rec.labels.size());
}

void record_step(RunMetrics& rm, const ModelSpec& spec, const Params& params,
                 const std::vector<Experience>& experiences, TestProtocol protocol,
                 std::size_t step) {
    if (rm.top_k.empty()) throw ConfigError("InvalidEvaluation", "top_k list is empty");
    if (rm.matrices.size() != rm.top_k.size()) rm.matrices.resize(rm.top_k.size());
    if (rm.stream_acc.size() != rm.top_k.size()) rm.stream_acc.resize(rm.top_k.size());

    const std::size_t last_j =
        protocol == TestProtocol::full_test ? experiences.size() - 1 : step;
    for (std::size_t ki = 0; ki < rm.top_k.size(); ++ki) rm.matrices[ki].rows.emplace_back();
    for (std::size_t j = 0; j <= last_j; ++j) {
        auto res = evaluate_with_log(spec, params, experiences[j].test, rm.top_k, step,
                                     "exp/" + std::to_string(j));
        for (std::size_t ki = 0; ki < rm.top_k.size(); ++ki)
            rm.matrices[ki].rows.back().push_back(res.acc_per_k[ki]);
        rm.log.push_back(std::move(res.record));
    }

    // Protocol stream accuracy: the curve the per-experience figures plot.
    std::vector<const Batch*> parts;
    for (std::size_t j = 0; j <= last_j; ++j) parts.push_back(&experiences[j].test);
    Batch stream = concat_batches(parts);
    auto res = evaluate_with_log(spec, params, stream, rm.top_k, step, "stream");
    for (std::size_t ki = 0; ki < rm.top_k.size(); ++ki)
        rm.stream_acc[ki].push_back(res.acc_per_k[ki]);
    rm.log.push_back(std::move(res.record));
}

namespace {

double sample_stddev(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// Applies (mean, stddev) over runs for one scalar accessor.
template <typename Get>
void fold(const std::vector<RunMetrics>& runs, std::size_t count, Get get,
          std::vector<double>& mean_out, std::vector<double>& std_out) {
    std::vector<double> vals(runs.size());
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t r = 0; r < runs.size(); ++r) vals[r] = get(runs[r], i);
        double m = 0.0;
        for (double v : vals) m += v;
        m /= static_cast<double>(vals.size());
        mean_out.push_back(m);
        std_out.push_back(sample_stddev(vals, m));
    }
}

std::vector<double> per_run_avg_acc(const RunMetrics& rm) {
    std::vector<double> out;
    const auto& m = rm.matrices[0];  // top_k[0] == 1 by construction
    for (std::size_t step = 0; step < m.steps(); ++step) out.push_back(avg_accuracy(m, step));
    return out;
}

std::vector<double> per_run_mean_forgetting(const RunMetrics& rm) {
    std::vector<double> out;
    const auto& m = rm.matrices[0];
    for (std::size_t step = 0; step < m.steps(); ++step) out.push_back(mean_forgetting(m, step));
    return out;
}

}  // namespace

RunRecord aggregate(std::vector<RunMetrics> runs) {
    if (runs.empty()) throw AggregateError("no runs to aggregate");
    const auto& ref = runs[0];
    for (const auto& r : runs) {
        if (r.top_k != ref.top_k) throw AggregateError("runs evaluated with different top_k lists");
        if (r.trace.seconds.size() != ref.trace.seconds.size())
            throw AggregateError("runs trained different experience counts");
        for (std::size_t ki = 0; ki < ref.matrices.size(); ++ki) {
            if (r.matrices[ki].rows.size() != ref.matrices[ki].rows.size())
                throw AggregateError("accuracy matrices have different step counts");
            for (std::size_t i = 0; i < ref.matrices[ki].rows.size(); ++i)
                if (r.matrices[ki].rows[i].size() != ref.matrices[ki].rows[i].size())
                    throw AggregateError("accuracy matrix rows have different lengths");
        }
    }

    RunRecord record;
    record.mean.top_k = ref.top_k;
    record.stddev.top_k = ref.top_k;

    for (std::size_t ki = 0; ki < ref.top_k.size(); ++ki) {
        std::vector<std::vector<double>> mean_m, std_m;
        for (std::size_t i = 0; i < ref.matrices[ki].rows.size(); ++i) {
            std::vector<double> mrow, srow;
            fold(runs, ref.matrices[ki].rows[i].size(),
                 [&](const RunMetrics& r, std::size_t j) { return r.matrices[ki].rows[i][j]; }, mrow,
                 srow);
            mean_m.push_back(std::move(mrow));
            std_m.push_back(std::move(srow));
        }
        record.mean.matrices.push_back(std::move(mean_m));
        record.stddev.matrices.push_back(std::move(std_m));

        std::vector<double> macc, sacc;
        fold(runs, ref.stream_acc[ki].size(),
             [&](const RunMetrics& r, std::size_t i) { return r.stream_acc[ki][i]; }, macc, sacc);
        record.mean.stream_acc.push_back(std::move(macc));
        record.stddev.stream_acc.push_back(std::move(sacc));
    }

    fold(runs, ref.trace.seconds.size(),
         [](const RunMetrics& r, std::size_t i) { return r.trace.seconds[i]; }, record.mean.seconds,
         record.stddev.seconds);
    fold(runs, ref.trace.patterns.size(),
         [](const RunMetrics& r, std::size_t i) { return static_cast<double>(r.trace.patterns[i]); },
         record.mean.patterns, record.stddev.patterns);

    std::vector<std::vector<double>> avg_accs, forgettings;
    for (const auto& r : runs) {
        avg_accs.push_back(per_run_avg_acc(r));
        forgettings.push_back(per_run_mean_forgetting(r));
    }
    const std::size_t steps = avg_accs[0].size();
    for (std::size_t i = 0; i < steps; ++i) {
        std::vector<double> a, f;
        for (std::size_t r = 0; r < runs.size(); ++r) {
            a.push_back(avg_accs[r][i]);
            f.push_back(forgettings[r][i]);
        }
        double am = 0.0, fm = 0.0;
        for (double v : a) am += v;
        for (double v : f) fm += v;
        am /= static_cast<double>(a.size());
        fm /= static_cast<double>(f.size());
        record.mean.avg_acc.push_back(am);
        record.mean.forgetting_mean.push_back(fm);
        record.stddev.avg_acc.push_back(sample_stddev(a, am));
        record.stddev.forgetting_mean.push_back(sample_stddev(f, fm));
    }

    record.runs = std::move(runs);
    return record;
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

nlohmann::json summary_json(const MetricsSummary& s) {
    nlohmann::json j;
    for (std::size_t ki = 0; ki < s.top_k.size(); ++ki) {
        const std::string key = "top" + std::to_string(s.top_k[ki]);
        j["matrix"][key] = s.matrices[ki];
        j["stream_acc"][key] = s.stream_acc[ki];
    }
    j["seconds"] = s.seconds;
    j["patterns"] = s.patterns;
    j["avg_acc"] = s.avg_acc;
    j["forgetting_mean"] = s.forgetting_mean;
    return j;
}

std::size_t k_index(const std::vector<std::size_t>& top_k, std::size_t want) {
    for (std::size_t i = 0; i < top_k.size(); ++i)
        if (top_k[i] == want) return i;
    return top_k.size() - 1;  // highest available k stands in
}

}  // namespace

std::string metrics_csv(const RunRecord& record) {
    const auto& m = record.mean;
    std::string out = "experience,seconds,patterns,acc_top1,acc_top5,avg_acc,forgetting_mean\n";
    const std::size_t k1 = k_index(m.top_k, 1);
    const std::size_t k5 = k_index(m.top_k, 5);
    for (std::size_t i = 0; i < m.seconds.size(); ++i) {
        out += std::to_string(i);
        out += ',' + fmt_double(m.seconds[i]);
        out += ',' + fmt_double(m.patterns[i]);
        out += ',' + fmt_double(m.stream_acc[k1][i]);
        out += ',' + fmt_double(m.stream_acc[k5][i]);
        out += ',' + fmt_double(m.avg_acc[i]);
        out += ',' + fmt_double(m.forgetting_mean[i]);
        out += '\n';
    }
    return out;
}

nlohmann::json metrics_json(const RunRecord& record) {
    nlohmann::json j;
    j["runs"] = nlohmann::json::array();
    for (const auto& r : record.runs) {
        nlohmann::json rj;
        rj["seed"] = r.seed;
        for (std::size_t ki = 0; ki < r.top_k.size(); ++ki) {
            const std::string key = "top" + std::to_string(r.top_k[ki]);
            rj["matrix"][key] = r.matrices[ki].rows;
            rj["stream_acc"][key] = r.stream_acc[ki];
        }
        rj["seconds"] = r.trace.seconds;
        rj["patterns"] = r.trace.patterns;
        rj["avg_acc"] = per_run_avg_acc(r);
        rj["forgetting_mean"] = per_run_mean_forgetting(r);
        j["runs"].push_back(std::move(rj));
    }
    j["top_k"] = record.mean.top_k;
    j["aggregate"]["mean"] = summary_json(record.mean);
    j["aggregate"]["stddev"] = summary_json(record.stddev);
    return j;
}

}  // namespace clb
