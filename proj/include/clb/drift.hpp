#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clb/nn.hpp"

#include "json.hpp"

namespace clb {

enum class Detector { perf_decay, ks, psi };

Detector detector_from_string(const std::string& s);
std::string to_string(Detector d);

struct DriftConfig {
    Detector detector = Detector::ks;
    double alpha = 0.05;
    std::size_t window = 50;
    double decay_delta = 0.1;    // perf_decay
    double psi_threshold = 0.2;  // psi
    std::size_t bins = 10;       // psi

    void validate() const;  // window >= 20, alpha in (0,1)
};

struct FeatureStat {
    std::size_t feature = 0;
    double statistic = 0.0;
};

struct DriftReport {
    bool fired = false;
    Detector detector = Detector::ks;
    double statistic = 0.0;
    double threshold = 0.0;
    std::size_t window_id = 0;
    std::vector<FeatureStat> per_feature;  // ks/psi only

    nlohmann::json to_json() const;
};

// Two-sample Kolmogorov-Smirnov statistic, sup |ECDF_ref - ECDF_cur|.
// Both samples need >= 20 points.
double ks_two_sample(const std::vector<double>& ref, const std::vector<double>& cur);

// Rejection threshold c(alpha) * sqrt((n+m)/(n*m)), c(a) = sqrt(-ln(a/2)/2).
double ks_threshold(double alpha, std::size_t n, std::size_t m);

// Population stability index over pre-binned counts, +1 smoothing per bin.
double psi_from_counts(const std::vector<std::uint64_t>& ref_counts,
                       const std::vector<std::uint64_t>& cur_counts);

// Equal-width histogram over [lo, hi]; out-of-range values land in the edge bins.
std::vector<std::uint64_t> histogram(const std::vector<double>& xs, double lo, double hi,
                                     std::size_t bins);

// Supervised detector: fires when windowed accuracy drops more than
// decay_delta below the deployment baseline.
DriftReport perf_decay(double baseline_acc, const std::vector<std::int32_t>& labels,
                       const std::vector<std::int32_t>& preds, double decay_delta,
                       std::size_t window_id = 0);

/// Buffers observations into tumbling windows and emits one DriftReport per
/// completed window. For the unsupervised detectors the reference is the
/// first `window` observations after the last reset; KS applies a
/// Bonferroni-corrected alpha/feature_dim per feature.
class DriftMonitor {
public:
    DriftMonitor(DriftConfig cfg, std::size_t feature_dim);

    std::vector<DriftReport> observe(const Matrix& samples,
                                     const std::vector<std::int32_t>* labels = nullptr,
                                     const std::vector<std::int32_t>* preds = nullptr);

    // Discards reference and pending observations; called when a new model
    // version is deployed.
    void reset();
    void set_baseline(double acc);

    const DriftConfig& config() const { return cfg_; }
    bool reference_ready() const { return reference_rows_ >= cfg_.window; }
    std::size_t buffered() const;
    std::optional<double> baseline() const { return baseline_; }

private:
    DriftReport test_window();

    DriftConfig cfg_;
    std::size_t feature_dim_;
    std::vector<std::vector<double>> reference_;  // per feature
    std::vector<std::vector<double>> current_;    // per feature
    std::size_t reference_rows_ = 0;
    std::vector<std::int32_t> labels_;
    std::vector<std::int32_t> preds_;
    std::optional<double> baseline_;
    std::size_t next_window_id_ = 1;
};

}  // namespace clb
