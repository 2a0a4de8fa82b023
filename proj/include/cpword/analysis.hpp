#pragma once

#include <Eigen/Core>
#include <utility>
#include <vector>

#include "cpword/song.hpp"

namespace cpword {

// Energy over the 12 pitch classes C..B. Binary for chord templates,
// max-normalized to [0,1]^12 for performed segments.
using ChromaVector = Eigen::Matrix<double, 12, 1>;

// Weighted pitch-class energy; normalized so the maximum is 1 when nonzero.
ChromaVector chroma_of(const std::vector<std::pair<int, double>>& weighted_pitches);

// Binary chord-tone indicator for (root, quality); zero vector for no-chord.
ChromaVector chord_template(int root, int quality);

double cosine_similarity(const ChromaVector& a, const ChromaVector& b);

// Piano chroma of a window [begin, end) in 16th units from song start;
// weights are note-duration overlaps with the window.
ChromaVector window_chroma(const Song& song, long long begin, long long end);

// Highest note per onset, truncated at the next kept onset, re-quantized to
// beats. The result is monophonic with beat-aligned onsets and durations.
std::vector<Note> skyline_melody(const Song& song);

// Rule-based recognition: per beat, cosine-score the window chroma against
// all (root, quality) binary templates; the best label wins if it clears the
// threshold, otherwise no-chord. Consecutive identical labels merge.
struct ChordRecognizerConfig {
    double threshold = 0.5;
};

std::vector<ChordEvent> recognize_chords(const Song& song, const ChordRecognizerConfig& cfg = {});

// Skyline melody plus recognized chords.
LeadSheet make_leadsheet(const Song& song, const ChordRecognizerConfig& cfg = {});

}  // namespace cpword
