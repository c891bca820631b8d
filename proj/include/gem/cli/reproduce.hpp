#pragma once

#include <string>
#include <vector>

namespace gem::cli {

enum class ReproStatus { match, mismatch, noted_inconsistency };

/// One published constant next to the value the library computes for it.
struct ReproRow {
    std::string label;
    double published_value = 0.0;
    double computed_value = 0.0;
    double abs_diff = 0.0;
    double tolerance = 0.0;  // absolute
    ReproStatus status = ReproStatus::match;
    std::string note;
};

const char* to_string(ReproStatus s);

/// Every closed-form published number, recomputed. A row whose difference is
/// within tolerance is a match; otherwise it is a mismatch unless it was
/// pre-marked as a known inconsistency in the source figures.
std::vector<ReproRow> build_repro_table();

bool has_unexpected_mismatch(const std::vector<ReproRow>& rows);

std::string format_repro_table(const std::vector<ReproRow>& rows);
std::string repro_csv(const std::vector<ReproRow>& rows);

}  // namespace gem::cli
