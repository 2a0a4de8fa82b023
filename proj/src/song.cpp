#include "cpword/song.hpp"

#include <algorithm>
#include <set>

namespace cpword {

void Song::sort_events() {
    std::stable_sort(notes.begin(), notes.end(), [](const Note& a, const Note& b) {
        return std::tie(a.onset, a.pitch) < std::tie(b.onset, b.pitch);
    });
    std::stable_sort(tempos.begin(), tempos.end(),
                     [](const TempoEvent& a, const TempoEvent& b) { return a.onset < b.onset; });
    std::stable_sort(chords.begin(), chords.end(),
                     [](const ChordEvent& a, const ChordEvent& b) { return a.onset < b.onset; });
}

std::vector<std::string> Song::invariant_violations(const ValueRanges& r) const {
    std::vector<std::string> out;
    auto bad_onset = [&](const Onset& o) {
        return o.bar < 0 || o.bar >= n_bars || o.pos < 0 || o.pos >= grid.positions_per_bar;
    };

    std::set<std::pair<Onset, int>> seen;
    const Note* prev = nullptr;
    for (const Note& n : notes) {
        if (bad_onset(n.onset)) out.push_back("note onset off grid or past n_bars");
        if (n.pitch < r.pitch_min || n.pitch > r.pitch_max) out.push_back("note pitch out of range");
        if (n.duration < 1) out.push_back("note duration < 1");
        if (duration_quantize_units(n.duration, r) != n.duration)
            out.push_back("note duration off the class lattice");
        if (n.velocity < r.velocity_min || n.velocity > r.velocity_max)
            out.push_back("note velocity out of range");
        if (!seen.insert({n.onset, n.pitch}).second) out.push_back("duplicate (onset, pitch) note");
        if (prev && std::tie(prev->onset, prev->pitch) > std::tie(n.onset, n.pitch))
            out.push_back("notes not sorted by (bar, pos, pitch)");
        prev = &n;
    }
    for (const TempoEvent& t : tempos) {
        if (bad_onset(t.onset)) out.push_back("tempo onset off grid or past n_bars");
        if (!on_beat(t.onset, grid)) out.push_back("tempo event not on a beat");
        if (t.klass < 1 || t.klass > r.tempo_classes) out.push_back("tempo class out of range");
    }
    for (const ChordEvent& c : chords) {
        if (bad_onset(c.onset)) out.push_back("chord onset off grid or past n_bars");
        if (!on_beat(c.onset, grid)) out.push_back("chord event not on a beat");
        if (c.root < 0 || c.root >= 12 || c.quality < 0 || c.quality > kNoChordQuality)
            out.push_back("chord label out of range");
    }
    return out;
}

}  // namespace cpword
