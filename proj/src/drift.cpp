#include "clb/drift.hpp"

#include <algorithm>
#include <cmath>

#include "clb/errors.hpp"

namespace clb {

Detector detector_from_string(const std::string& s) {
    if (s == "perf_decay") return Detector::perf_decay;
    if (s == "ks") return Detector::ks;
    if (s == "psi") return Detector::psi;
    throw ConfigError("UnknownDetector", "unknown drift detector '" + s + "'", "drift.detector");
}

std::string to_string(Detector d) {
    switch (d) {
        case Detector::perf_decay: return "perf_decay";
        case Detector::ks: return "ks";
        default: return "psi";
    }
}

void DriftConfig::validate() const {
    if (window < 20) throw ConfigError("InvalidDrift", "window must be >= 20", "drift.window");
    if (alpha <= 0.0 || alpha >= 1.0)
        throw ConfigError("InvalidDrift", "alpha must be in (0, 1)", "drift.alpha");
    if (detector == Detector::perf_decay && (decay_delta <= 0.0 || decay_delta >= 1.0))
        throw ConfigError("InvalidDrift", "decay_delta must be in (0, 1)", "drift.decay_delta");
    if (detector == Detector::psi) {
        if (psi_threshold <= 0.0)
            throw ConfigError("InvalidDrift", "psi_threshold must be > 0", "drift.psi_threshold");
        if (bins < 2) throw ConfigError("InvalidDrift", "bins must be >= 2", "drift.bins");
    }
}

nlohmann::json DriftReport::to_json() const {
    nlohmann::json j;
    j["fired"] = fired;
    j["detector"] = to_string(detector);
    j["statistic"] = statistic;
    j["threshold"] = threshold;
    j["window_id"] = window_id;
    if (!per_feature.empty()) {
        j["per_feature"] = nlohmann::json::array();
        for (const auto& f : per_feature)
            j["per_feature"].push_back({{"feature", f.feature}, {"statistic", f.statistic}});
    }
    return j;
}

double ks_two_sample(const std::vector<double>& ref, const std::vector<double>& cur) {
    if (ref.size() < 20 || cur.size() < 20)
        throw WindowError("KS needs at least 20 samples per window");
    std::vector<double> a = ref;
    std::vector<double> b = cur;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());

    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t ia = 0, ib = 0;
    double d = 0.0;
    while (ia < a.size() && ib < b.size()) {
        const double x = std::min(a[ia], b[ib]);
        while (ia < a.size() && a[ia] <= x) ++ia;
        while (ib < b.size() && b[ib] <= x) ++ib;
        d = std::max(d, std::abs(static_cast<double>(ia) / na - static_cast<double>(ib) / nb));
    }
    return d;
}

double ks_threshold(double alpha, std::size_t n, std::size_t m) {
    const double c = std::sqrt(-std::log(alpha / 2.0) / 2.0);
    return c * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * static_cast<double>(m)));
}

double psi_from_counts(const std::vector<std::uint64_t>& ref_counts,
                       const std::vector<std::uint64_t>& cur_counts) {
    if (ref_counts.size() != cur_counts.size() || ref_counts.empty())
        throw BinError("histograms must use the same non-empty binning");
    const std::size_t bins = ref_counts.size();
    std::uint64_t ref_total = 0, cur_total = 0;
    for (std::uint64_t c : ref_counts) ref_total += c;
    for (std::uint64_t c : cur_counts) cur_total += c;

    double psi = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
        const double p = static_cast<double>(ref_counts[i] + 1) /
                         static_cast<double>(ref_total + bins);
        const double q = static_cast<double>(cur_counts[i] + 1) /
                         static_cast<double>(cur_total + bins);
        psi += (p - q) * std::log(p / q);
    }
    return psi;
}

std::vector<std::uint64_t> histogram(const std::vector<double>& xs, double lo, double hi,
                                     std::size_t bins) {
    if (bins < 1) throw BinError("bins must be >= 1");
    std::vector<std::uint64_t> counts(bins, 0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (double x : xs) {
        std::size_t b;
        if (width <= 0.0 || x <= lo) {
            b = 0;
        } else {
            b = static_cast<std::size_t>((x - lo) / width);
            if (b >= bins) b = bins - 1;
        }
        counts[b] += 1;
    }
    return counts;
}

DriftReport perf_decay(double baseline_acc, const std::vector<std::int32_t>& labels,
                       const std::vector<std::int32_t>& preds, double decay_delta,
                       std::size_t window_id) {
    if (labels.empty()) throw WindowError("perf_decay window is empty");
    if (labels.size() != preds.size())
        throw DimensionError("labels and predictions differ in length");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == preds[i]) ++hits;
    const double acc = static_cast<double>(hits) / static_cast<double>(labels.size());

    DriftReport report;
    report.detector = Detector::perf_decay;
    report.statistic = acc;
    report.threshold = baseline_acc - decay_delta;
    report.fired = acc < report.threshold;
    report.window_id = window_id;
    return report;
}

DriftMonitor::DriftMonitor(DriftConfig cfg, std::size_t feature_dim)
    : cfg_(cfg), feature_dim_(feature_dim), reference_(feature_dim), current_(feature_dim) {
    cfg_.validate();
    if (cfg_.detector != Detector::perf_decay && feature_dim_ < 1)
        throw ConfigError("InvalidDrift", "feature_dim must be >= 1 for unsupervised detectors");
}

std::size_t DriftMonitor::buffered() const {
    if (cfg_.detector == Detector::perf_decay) return labels_.size();
    return current_.empty() ? 0 : current_[0].size();
}

void DriftMonitor::reset() {
    for (auto& col : reference_) col.clear();
    for (auto& col : current_) col.clear();
    reference_rows_ = 0;
    labels_.clear();
    preds_.clear();
}

void DriftMonitor::set_baseline(double acc) { baseline_ = acc; }

DriftReport DriftMonitor::test_window() {
    DriftReport report;
    report.detector = cfg_.detector;
    report.window_id = next_window_id_++;

    if (cfg_.detector == Detector::perf_decay) {
        auto r = perf_decay(*baseline_, labels_, preds_, cfg_.decay_delta, report.window_id);
        labels_.clear();
        preds_.clear();
        return r;
    }

    if (cfg_.detector == Detector::ks) {
        // Bonferroni across features: each feature tested at alpha / dim.
        report.threshold = ks_threshold(cfg_.alpha / static_cast<double>(feature_dim_),
                                        reference_[0].size(), current_[0].size());
        for (std::size_t f = 0; f < feature_dim_; ++f) {
            const double d = ks_two_sample(reference_[f], current_[f]);
            report.per_feature.push_back({f, d});
            report.statistic = std::max(report.statistic, d);
        }
        report.fired = report.statistic > report.threshold;
    } else {
        report.threshold = cfg_.psi_threshold;
        for (std::size_t f = 0; f < feature_dim_; ++f) {
            const auto [lo_it, hi_it] =
                std::minmax_element(reference_[f].begin(), reference_[f].end());
            const auto ref_h = histogram(reference_[f], *lo_it, *hi_it, cfg_.bins);
            const auto cur_h = histogram(current_[f], *lo_it, *hi_it, cfg_.bins);
            const double s = psi_from_counts(ref_h, cur_h);
            report.per_feature.push_back({f, s});
            report.statistic = std::max(report.statistic, s);
        }
        report.fired = report.statistic > report.threshold;
    }
    for (auto& col : current_) col.clear();
    return report;
}

std::vector<DriftReport> DriftMonitor::observe(const Matrix& samples,
                                               const std::vector<std::int32_t>* labels,
                                               const std::vector<std::int32_t>* preds) {
    std::vector<DriftReport> reports;

    if (cfg_.detector == Detector::perf_decay) {
        if (labels == nullptr || preds == nullptr)
            throw DataError("perf_decay monitoring requires labels and predictions");
        if (labels->size() != preds->size())
            throw DataError("labels and predictions differ in length");
        if (!baseline_) throw DataError("no deployment baseline accuracy established yet");
        for (std::size_t i = 0; i < labels->size(); ++i) {
            labels_.push_back((*labels)[i]);
            preds_.push_back((*preds)[i]);
            if (labels_.size() == cfg_.window) reports.push_back(test_window());
        }
        return reports;
    }

    if (samples.cols != feature_dim_)
        throw DimensionError("observation feature dim " + std::to_string(samples.cols) +
                             " does not match monitor dim " + std::to_string(feature_dim_));
    for (std::size_t i = 0; i < samples.rows; ++i) {
        if (reference_rows_ < cfg_.window) {
            for (std::size_t f = 0; f < feature_dim_; ++f)
                reference_[f].push_back(samples.at(i, f));
            ++reference_rows_;
            continue;
        }
        for (std::size_t f = 0; f < feature_dim_; ++f) current_[f].push_back(samples.at(i, f));
        if (current_[0].size() == cfg_.window) reports.push_back(test_window());
    }
    return reports;
}

}  // namespace clb
