#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pi/train.hpp"

namespace pi {

struct CurvePoint {
    std::uint64_t samples_seen = 0;
    double value = 0.0;

    bool operator==(const CurvePoint&) const = default;
};

struct ScalingCurve {
    std::string run_id;
    std::string metric;
    /// Strictly increasing samples_seen.
    std::vector<CurvePoint> points;
};

struct PowerLawFit {
    double a = 0.0;
    double beta = 0.0;
    double r_squared = 0.0;
    std::size_t n_points = 0;

    bool operator==(const PowerLawFit&) const = default;
};

/// Inclusive samples_seen bounds for a late-training fit.
struct FitWindow {
    std::uint64_t min_samples = 0;
    std::uint64_t max_samples = UINT64_MAX;
};

using WarnFn = std::function<void(const std::string&)>;

/// OLS of log(value) on log(samples_seen): beta is the slope, a = exp(intercept).
/// Points at samples_seen 0 are skipped. Non-positive values are dropped with
/// a message through warn (stderr when empty). Fewer than two usable points or
/// a single distinct x is an input error.
PowerLawFit fit_power_law(const ScalingCurve& curve, const std::optional<FitWindow>& window = std::nullopt,
                          const WarnFn& warn = {});

/// One curve per (run_id, metric) in order of first appearance; points sorted
/// by samples_seen. Records at equal samples_seen keep the last value.
std::vector<ScalingCurve> curves_from_metrics(std::span<const MetricRecord> records);

struct RunComparison {
    std::string metric;
    double beta_pi = 0.0;
    double beta_base = 0.0;
    double beta_delta = 0.0;
    /// Percentage points at the first and last shared milestones.
    double head_start_delta = 0.0;
    double final_delta = 0.0;
    std::uint64_t first_shared = 0;
    std::uint64_t last_shared = 0;
};

struct ScalingFitRow {
    std::string metric;
    std::string run_id;
    PowerLawFit fit;

    bool operator==(const ScalingFitRow&) const = default;
};

struct ScalingReport {
    std::vector<ScalingCurve> curves;
    std::vector<ScalingFitRow> fits;
    std::vector<RunComparison> comparisons;
};

/// Pairs curves by metric name. Metrics fitted on fewer than two points are
/// skipped with a warning; no shared metric or no shared milestone for a
/// metric is an input error.
ScalingReport compare_runs(std::span<const ScalingCurve> pi_curves, std::span<const ScalingCurve> base_curves,
                           const std::optional<FitWindow>& window = std::nullopt, const WarnFn& warn = {});

inline constexpr const char* plot_csv_header = "metric,run_id,samples_seen,value";
inline constexpr const char* fits_csv_header = "metric,run_id,a,beta,r_squared,n_points";

/// Writes the points CSV and the fits CSV.
void export_plot_data(const ScalingReport& report, const std::filesystem::path& points_path,
                      const std::filesystem::path& fits_path);
std::vector<ScalingFitRow> read_fits_csv(const std::filesystem::path& path);
std::vector<ScalingCurve> read_plot_csv(const std::filesystem::path& path);

}  // namespace pi
