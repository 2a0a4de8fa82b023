#pragma once

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cpword/song.hpp"
#include "cpword/vocab.hpp"

namespace cpword {

// Codec failure at a specific token; index is the first violating position.
struct codec_error : std::runtime_error {
    codec_error(const std::string& what, std::size_t index)
        : std::runtime_error(what + " (token " + std::to_string(index) + ")"), index(index) {}
    std::size_t index;
};

struct TokenSeq {
    Task task = Task::Unconditional;
    std::vector<TokenId> ids;

    std::size_t size() const { return ids.size(); }
    bool operator==(const TokenSeq&) const = default;
};

struct EncodeOptions {
    std::size_t max_tokens = 10240;
};

// Song to REMI. Deterministic ordering: per bar a [bar] token, then occupied
// positions ascending; at each position tempo, then chord, then the notes
// sorted by descending pitch, each as [pitch][duration][velocity].
TokenSeq encode_remi(const Song& song, const Vocabulary& vocab, const EncodeOptions& opts = {});

// Exact inverse of encode_remi on its image. Tolerates event order produced
// by sampling (positions out of order, duplicate notes collapse to the first).
Song decode_remi(const TokenSeq& seq, const Vocabulary& vocab);

// Conditional layout: per bar, [bar] [track=leadsheet] <composition tokens>
// [track=piano] <full piano tokens>. Lead content carries no tempo/velocity.
TokenSeq interleave_conditional(const LeadSheet& lead, const Song& piano, const Vocabulary& vocab,
                                const EncodeOptions& opts = {});

std::pair<LeadSheet, Song> deinterleave_conditional(const TokenSeq& seq, const Vocabulary& vocab);

// Text form: one `type=value` token name per line.
std::string tokens_to_text(const TokenSeq& seq, const Vocabulary& vocab);
TokenSeq tokens_from_text(const std::string& text, const Vocabulary& vocab, Task task);

// Binary corpus records: u32 little-endian length prefix, then that many
// u16 little-endian token ids.
void write_id_record(std::ostream& out, const std::vector<TokenId>& ids);
bool read_id_record(std::istream& in, std::vector<TokenId>& ids);

}  // namespace cpword
