#include "cpword/analysis.hpp"

#include <algorithm>
#include <map>

namespace cpword {

namespace {

// Chord-tone pitch-class offsets per quality, same order as kChordQualityNames.
const std::vector<std::vector<int>>& quality_tones() {
    static const std::vector<std::vector<int>> tones = {
        {0, 4, 7},      // maj
        {0, 3, 7},      // min
        {0, 3, 6},      // dim
        {0, 4, 8},      // aug
        {0, 2, 7},      // sus2
        {0, 5, 7},      // sus4
        {0, 4, 7, 11},  // maj7
        {0, 3, 7, 10},  // min7
        {0, 4, 7, 10},  // dom7
        {0, 3, 6, 9},   // dim7
        {0, 3, 6, 10},  // hdim7
    };
    return tones;
}

long long onset_units(const Onset& o, const GridConfig& g) {
    return static_cast<long long>(o.bar) * g.positions_per_bar + o.pos;
}

}  // namespace

ChromaVector chroma_of(const std::vector<std::pair<int, double>>& weighted_pitches) {
    ChromaVector v = ChromaVector::Zero();
    for (const auto& [pitch, weight] : weighted_pitches) v[((pitch % 12) + 12) % 12] += weight;
    const double top = v.maxCoeff();
    if (top > 0.0) v /= top;
    return v;
}

ChromaVector chord_template(int root, int quality) {
    ChromaVector v = ChromaVector::Zero();
    if (quality < 0 || quality >= kNumChordQualities) return v;
    for (int tone : quality_tones()[quality]) v[(root + tone) % 12] = 1.0;
    return v;
}

double cosine_similarity(const ChromaVector& a, const ChromaVector& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

ChromaVector window_chroma(const Song& song, long long begin, long long end) {
    std::vector<std::pair<int, double>> weighted;
    for (const Note& n : song.notes) {
        const long long on = onset_units(n.onset, song.grid);
        const long long off = on + n.duration;
        const long long overlap = std::min(off, end) - std::max(on, begin);
        if (overlap > 0) weighted.push_back({n.pitch, static_cast<double>(overlap)});
    }
    return chroma_of(weighted);
}

std::vector<Note> skyline_melody(const Song& song) {
    const GridConfig& g = song.grid;
    const int ppb = g.positions_per_beat();

    // Highest pitch per distinct onset; notes are sorted, so the last one of
    // each onset run wins.
    std::vector<Note> top;
    for (const Note& n : song.notes) {
        if (!top.empty() && top.back().onset == n.onset)
            top.back() = n;
        else
            top.push_back(n);
    }

    // Re-quantize onsets to beats; collisions keep the higher pitch, then the
    // later source onset. Snapping near the end clamps into the last bar.
    const long long last_beat = static_cast<long long>(song.n_bars) * g.beats_per_bar - 1;
    std::map<long long, Note> by_beat;
    for (const Note& n : top) {
        const long long beat = std::min(snap_to_index(onset_units(n.onset, g), ppb), last_beat);
        auto it = by_beat.find(beat);
        if (it == by_beat.end() || n.pitch >= it->second.pitch) by_beat[beat] = n;
    }

    // Largest representable duration that does not exceed `units`, so
    // truncation can never stretch a note past the next onset.
    const ValueRanges ranges;
    auto floor_to_lattice = [&](long long units) -> int {
        if (units <= ranges.duration_direct_max) return static_cast<int>(std::max<long long>(units, 1));
        if (units < ranges.duration_overflow_units) return ranges.duration_direct_max;
        return ranges.duration_overflow_units;
    };

    std::vector<Note> melody;
    melody.reserve(by_beat.size());
    long long prev_beat = 0;
    for (const auto& [beat, src] : by_beat) {
        Note n = src;
        n.onset = {static_cast<int>(beat / g.beats_per_bar),
                   static_cast<int>(beat % g.beats_per_bar) * ppb};
        if (!melody.empty()) {
            Note& prev = melody.back();
            const long long gap = (beat - prev_beat) * ppb;
            if (prev.duration > gap) prev.duration = floor_to_lattice(gap);
        }
        // Durations land on beat multiples, floored onto the class lattice.
        n.duration = floor_to_lattice(std::max<long long>(snap_to_index(n.duration, ppb), 1) * ppb);
        melody.push_back(n);
        prev_beat = beat;
    }
    return melody;
}

std::vector<ChordEvent> recognize_chords(const Song& song, const ChordRecognizerConfig& cfg) {
    const GridConfig& g = song.grid;
    const int ppb = g.positions_per_beat();
    const long long n_beats = static_cast<long long>(song.n_bars) * g.beats_per_bar;

    std::vector<ChordEvent> out;
    int prev_label = -1;
    for (long long beat = 0; beat < n_beats; ++beat) {
        const ChromaVector chroma = window_chroma(song, beat * ppb, (beat + 1) * ppb);

        int best_root = 0, best_quality = kNoChordQuality;
        double best_score = cfg.threshold;
        if (chroma.maxCoeff() > 0.0) {
            for (int root = 0; root < 12; ++root) {
                for (int q = 0; q < kNumChordQualities; ++q) {
                    const double score = cosine_similarity(chord_template(root, q), chroma);
                    if (score > best_score) {
                        best_score = score;
                        best_root = root;
                        best_quality = q;
                    }
                }
            }
        }

        ChordEvent e;
        e.onset = {static_cast<int>(beat / g.beats_per_bar),
                   static_cast<int>(beat % g.beats_per_bar) * ppb};
        e.root = best_quality == kNoChordQuality ? 0 : best_root;
        e.quality = best_quality;
        if (e.label() != prev_label) {
            out.push_back(e);
            prev_label = e.label();
        }
    }
    return out;
}

LeadSheet make_leadsheet(const Song& song, const ChordRecognizerConfig& cfg) {
    LeadSheet lead;
    lead.grid = song.grid;
    lead.n_bars = song.n_bars;
    lead.melody = skyline_melody(song);
    for (Note& n : lead.melody) n.velocity = 64;  // velocities carry no meaning in a lead sheet
    lead.chords = recognize_chords(song, cfg);
    return lead;
}

}  // namespace cpword
