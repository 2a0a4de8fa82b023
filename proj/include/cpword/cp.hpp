#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "cpword/remi.hpp"
#include "cpword/vocab.hpp"

namespace cpword {

// One time step: a family token plus one slot per token type. Slots hold the
// type's value token, or its [ignore]/[conti] special. The track slot stays
// [ignore] under the unconditional task and is dropped from its serialized
// form, so all words carry the full 7-slot array in memory.
struct CompoundWord {
    TokenId family = 0;
    std::array<TokenId, kNumTokenTypes> slots{};

    TokenId& slot(TokenType t) { return slots[static_cast<int>(t)]; }
    TokenId slot(TokenType t) const { return slots[static_cast<int>(t)]; }

    bool operator==(const CompoundWord&) const = default;
};

struct CpSeq {
    Task task = Task::Unconditional;
    std::vector<CompoundWord> words;

    std::size_t size() const { return words.size(); }
    bool operator==(const CpSeq&) const = default;
};

CompoundWord make_ignore_word(const Vocabulary& vocab, TokenId family);
CompoundWord make_bos_word(const Vocabulary& vocab);
CompoundWord make_eos_word(const Vocabulary& vocab);

// REMI tokens to compound words: note token runs collapse into note-family
// words, position/bar tokens into metric-family words with [conti] filling
// unchanged tempo/chord slots at beats, track tokens into track-family words.
// A [BOS] word is prepended; unconditional sequences get a final EOS word.
CpSeq group_to_cp(const TokenSeq& seq, const Vocabulary& vocab);

// Exact inverse of group_to_cp on its image: drops [ignore] and [conti]
// slots and the [BOS]/EOS words, restoring canonical intra-word token order.
TokenSeq ungroup_from_cp(const CpSeq& cps, const Vocabulary& vocab);

struct CpViolation {
    std::size_t index;
    std::string message;
};

// Structural validation; empty result iff the sequence is well formed.
std::vector<CpViolation> validate_cp(const CpSeq& cps, const Vocabulary& vocab);

// Binary corpus record: u32 word count, then per word the slot tokens in
// table order for the task's slot types followed by the family token.
void write_cp_record(std::ostream& out, const CpSeq& cps, const Vocabulary& vocab);
bool read_cp_record(std::istream& in, CpSeq& cps, const Vocabulary& vocab);

// Sequence-length bookkeeping for corpus statistics. Counts come in two
// flavors: content only, and with the [BOS]/[EOS] specials included (REMI
// gets the same virtual specials so the two columns stay comparable).
struct SongLengths {
    std::string name;
    std::size_t remi_content = 0;
    std::size_t remi_with_specials = 0;
    std::size_t cp_content = 0;
    std::size_t cp_with_specials = 0;
};

SongLengths measure_lengths(const std::string& name, const TokenSeq& remi, const CpSeq& cps,
                            const Vocabulary& vocab);

struct LengthStats {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t max = 0;
};

LengthStats summarize(const std::vector<std::size_t>& lengths);

}  // namespace cpword
