#include "cpword/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

namespace cpword {

namespace {

struct BarNote {
    int pitch;
    int pos;
};

bool onsets_match(const BarNote& a, const BarNote& b) {
    return a.pitch == b.pitch && std::abs(a.pos - b.pos) <= kOnsetTolerancePositions;
}

// Standard LCS table over the per-bar note lists.
std::size_t lcs_length(const std::vector<BarNote>& a, const std::vector<BarNote>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (onsets_match(a[i - 1], b[j - 1]))
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

std::optional<double> melody_matchness(const LeadSheet& lead, const Song& piano) {
    const int n_bars = std::min(lead.n_bars, piano.n_bars);
    double sum = 0.0;
    int counted = 0;
    for (int bar = 0; bar < n_bars; ++bar) {
        std::vector<BarNote> target;
        for (const Note& n : lead.melody)
            if (n.onset.bar == bar) target.push_back({n.pitch, n.onset.pos});
        if (target.empty()) continue;
        std::sort(target.begin(), target.end(),
                  [](const BarNote& a, const BarNote& b) { return a.pos < b.pos; });

        std::vector<BarNote> candidate;
        for (const Note& n : piano.notes)
            if (n.onset.bar == bar) candidate.push_back({n.pitch, n.onset.pos});
        std::sort(candidate.begin(), candidate.end(), [](const BarNote& a, const BarNote& b) {
            if (a.pos != b.pos) return a.pos < b.pos;
            return a.pitch > b.pitch;
        });

        sum += static_cast<double>(lcs_length(target, candidate)) / static_cast<double>(target.size());
        counted++;
    }
    if (counted == 0) return std::nullopt;
    return sum / counted;
}

std::optional<double> chord_matchness(const LeadSheet& lead, const Song& piano) {
    const int n_bars = std::min(lead.n_bars, piano.n_bars);
    const long long span = static_cast<long long>(n_bars) * lead.grid.positions_per_bar;
    double weighted = 0.0;
    double total_weight = 0.0;
    for (std::size_t i = 0; i < lead.chords.size(); ++i) {
        const ChordEvent& c = lead.chords[i];
        if (c.is_no_chord()) continue;
        const long long begin = static_cast<long long>(c.onset.bar) * lead.grid.positions_per_bar + c.onset.pos;
        long long end = span;
        if (i + 1 < lead.chords.size()) {
            const Onset next = lead.chords[i + 1].onset;
            end = static_cast<long long>(next.bar) * lead.grid.positions_per_bar + next.pos;
        }
        end = std::min(end, span);
        if (end <= begin) continue;
        const double score =
            cosine_similarity(chord_template(c.root, c.quality), window_chroma(piano, begin, end));
        weighted += score * static_cast<double>(end - begin);
        total_weight += static_cast<double>(end - begin);
    }
    if (total_weight == 0.0) return std::nullopt;
    return weighted / total_weight;
}

MatchnessReport make_report(std::vector<MatchnessRow> rows) {
    MatchnessReport report;
    report.rows = std::move(rows);
    auto aggregate = [](const std::vector<MatchnessRow>& rs, auto field) {
        MatchnessAggregate a;
        double sum = 0.0;
        for (const MatchnessRow& r : rs)
            if (field(r)) {
                sum += *field(r);
                a.count++;
            }
        if (a.count == 0) return a;
        a.mean = sum / static_cast<double>(a.count);
        double sq = 0.0;
        for (const MatchnessRow& r : rs)
            if (field(r)) sq += (*field(r) - a.mean) * (*field(r) - a.mean);
        a.stddev = std::sqrt(sq / static_cast<double>(a.count));
        return a;
    };
    report.melody = aggregate(report.rows, [](const MatchnessRow& r) { return r.melody; });
    report.chord = aggregate(report.rows, [](const MatchnessRow& r) { return r.chord; });
    return report;
}

std::string report_to_json(const MatchnessReport& report) {
    nlohmann::ordered_json doc;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const MatchnessRow& r : report.rows) {
        nlohmann::ordered_json jr;
        jr["name"] = r.name;
        if (r.melody) jr["melody"] = *r.melody;
        if (r.chord) jr["chord"] = *r.chord;
        rows.push_back(std::move(jr));
    }
    doc["songs"] = std::move(rows);
    doc["melody"] = {{"mean", report.melody.mean},
                     {"stddev", report.melody.stddev},
                     {"count", report.melody.count}};
    doc["chord"] = {{"mean", report.chord.mean},
                    {"stddev", report.chord.stddev},
                    {"count", report.chord.count}};
    return doc.dump(2) + "\n";
}

std::string report_to_table(const MatchnessReport& report, const std::string& label) {
    char line[160];
    std::string out;
    out += "                                   Matchness\n";
    out += "                                   melody   chord\n";
    std::snprintf(line, sizeof line, "%-32s  %7.3f  %7.3f\n", label.c_str(), report.melody.mean,
                  report.chord.mean);
    out += line;
    std::snprintf(line, sizeof line, "%-32s  (±%.3f) (±%.3f)  n=%zu\n", "", report.melody.stddev,
                  report.chord.stddev, report.rows.size());
    out += line;
    return out;
}

}  // namespace cpword
