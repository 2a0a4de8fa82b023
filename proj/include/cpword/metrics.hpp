#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cpword/analysis.hpp"
#include "cpword/song.hpp"

namespace cpword {

// Bar-wise melody agreement: per bar, the longest common subsequence between
// the lead melody and the piano notes (match = equal pitch and onsets within
// an 8th note, i.e. two grid positions), divided by the number of target
// melody notes; averaged over bars that have target notes. Empty targets
// everywhere give no score.
std::optional<double> melody_matchness(const LeadSheet& lead, const Song& piano);

// Segment-wise harmonic agreement: per chord label, the cosine between the
// binary chord template and the max-normalized piano chroma of the segment,
// weighted by segment length. No-chord labels are skipped; silent piano
// segments contribute zero.
std::optional<double> chord_matchness(const LeadSheet& lead, const Song& piano);

inline constexpr int kOnsetTolerancePositions = 2;  // one 8th note on the 16-grid

struct MatchnessRow {
    std::string name;
    std::optional<double> melody;
    std::optional<double> chord;
};

struct MatchnessAggregate {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

struct MatchnessReport {
    std::vector<MatchnessRow> rows;
    MatchnessAggregate melody;
    MatchnessAggregate chord;
};

MatchnessReport make_report(std::vector<MatchnessRow> rows);

// JSON document and aligned text table renderings of a report.
std::string report_to_json(const MatchnessReport& report);
std::string report_to_table(const MatchnessReport& report, const std::string& label);

}  // namespace cpword
