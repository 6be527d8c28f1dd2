#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pi/eval.hpp"
#include "pi/scaling.hpp"

namespace pi {

struct ReportOptions {
    std::string title = "Zero-shot comparison";
    std::string ours_run = "ours";
    std::string baseline_run = "baseline";
    /// Optional run compared against the baseline in a control section.
    std::optional<std::string> control_run;
};

/// Markdown with per-family classification tables (Ours/Base/delta for top-1
/// and top-5), family means, the top-1 win/tie/loss line, a retrieval table
/// with the better value bold, a scaling-exponent table when fits are given
/// (only family and retrieval panels when present) and the control section
/// when requested. Values are percent as stored; deltas use one decimal with
/// an explicit sign. A missing baseline or control run is an input error.
std::string render_report(std::span<const EvalRow> rows, std::span<const ScalingFitRow> fits,
                          const ReportOptions& options = {});

/// "%+.1f" with zero (after rounding) always rendered "+0.0".
std::string format_delta(double pp);
/// "%.1f".
std::string format_pp(double pp);

}  // namespace pi
