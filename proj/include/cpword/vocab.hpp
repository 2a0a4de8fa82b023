#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpword/song.hpp"

namespace cpword {

// Token types in vocabulary-table order. The order fixes id assignment and
// the CP slot/column layout, so it must never change.
enum class TokenType : int {
    Track = 0,
    Tempo,
    PositionBar,
    Chord,
    Pitch,
    Duration,
    Velocity,
};
inline constexpr int kNumTokenTypes = 7;

enum class Family : int { Track = 0, Note, Metric, Eos };
inline constexpr int kNumFamilies = 4;

enum class Task { Conditional, Unconditional };

inline const char* task_name(Task t) { return t == Task::Conditional ? "conditional" : "unconditional"; }

struct vocab_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Per-type sampling policy: temperature-tempered nucleus sampling.
struct SamplePolicy {
    double tau = 1.0;
    double rho = 0.9;
};

using TokenId = std::uint16_t;

// The partitioned token vocabulary. Ids are assigned in a fixed documented
// order: type values in table order, then the four family tokens, then the
// per-type [ignore] tokens, the two [conti] tokens, and finally [BOS].
// Immutable after construction; lookups are safe from any thread.
class Vocabulary {
public:
    explicit Vocabulary(Task task, const GridConfig& grid = {}, const ValueRanges& ranges = {});

    Task task() const { return task_; }
    const GridConfig& grid() const { return grid_; }
    const ValueRanges& ranges() const { return ranges_; }

    // Sizes. total_base counts type values plus family tokens (the table's
    // "341"); specials are the ignore/conti tokens (the "+9"); [BOS] is a
    // reserved extra id on top of those.
    int base_size(TokenType t) const { return type_[index(t)].base; }
    int total_base() const;
    int total_specials() const;
    int total_ids() const { return n_ids_; }

    // Token kinds and the describe() result of id_to_token.
    enum class Kind { Value, Ignore, Conti, FamilyToken, Bos };
    struct TokenRef {
        Kind kind;
        TokenType type;   // valid for Value / Ignore / Conti
        int value;        // valid for Value
        Family family;    // valid for FamilyToken
    };

    TokenId token_id(TokenType t, int value) const;
    TokenId ignore_id(TokenType t) const { return type_[index(t)].ignore_id; }
    TokenId conti_id(TokenType t) const;
    TokenId family_id(Family f) const { return static_cast<TokenId>(family_offset_ + static_cast<int>(f)); }
    TokenId bos_id() const { return bos_id_; }
    TokenRef describe(TokenId id) const;

    bool has_conti(TokenType t) const { return type_[index(t)].has_conti; }
    int value_lo(TokenType t) const { return type_[index(t)].lo; }
    int value_hi(TokenType t) const { return type_[index(t)].hi; }

    // Per-type class spaces used by embeddings and output heads: values
    // first, then [ignore], then [conti] where present.
    int local_count(TokenType t) const;
    int local_index(TokenType t, TokenId id) const;
    TokenId id_from_local(TokenType t, int local) const;

    // Family head classes: the four families plus the reserved [BOS] symbol.
    static constexpr int kFamilyLocalCount = kNumFamilies + 1;
    int family_local(TokenId id) const;
    TokenId id_from_family_local(int local) const;

    Family family_of_type(TokenType t) const { return type_[index(t)].family; }

    // CP slot columns for this task: all seven types for the conditional
    // task, everything but [track] for the unconditional one.
    const std::vector<TokenType>& slot_types() const { return slot_types_; }
    int num_slots() const { return static_cast<int>(slot_types_.size()); }
    const std::vector<Family>& allowed_families() const { return allowed_families_; }

    int embed_size(TokenType t) const { return type_[index(t)].embed; }
    int family_embed_size() const { return family_embed_; }
    SamplePolicy policy(TokenType t) const { return type_[index(t)].policy; }
    SamplePolicy family_policy() const { return family_policy_; }

    // Display / text-serialization names, e.g. "pitch=60", "bar",
    // "family=note", "tempo:ignore".
    std::string token_name(TokenId id) const;
    TokenId parse_token(const std::string& text) const;

    // Inspection manifest; its FNV-1a hash keys corpus and checkpoint
    // compatibility checks.
    std::string manifest_json() const;
    std::uint64_t hash() const;
    std::string hash_hex() const;

    int bar_value() const { return grid_.positions_per_bar + 1; }  // position/bar value of [bar]

    static const char* type_name(TokenType t);
    static const char* family_name(Family f);

private:
    static int index(TokenType t) { return static_cast<int>(t); }

    struct TypeEntry {
        TokenType type;
        Family family;
        int lo = 0;
        int hi = 0;
        int base = 0;
        bool has_conti = false;
        int embed = 0;
        SamplePolicy policy;
        int offset = 0;        // first value id
        TokenId ignore_id = 0;
        TokenId conti_id = 0;  // meaningful only when has_conti
    };

    std::string value_name(TokenType t, int value) const;
    bool parse_value_name(TokenType t, const std::string& text, int& value) const;

    Task task_;
    GridConfig grid_;
    ValueRanges ranges_;
    std::array<TypeEntry, kNumTokenTypes> type_{};
    int family_offset_ = 0;
    int family_embed_ = 32;
    SamplePolicy family_policy_{1.0, 0.9};
    TokenId bos_id_ = 0;
    int n_ids_ = 0;
    std::vector<TokenType> slot_types_;
    std::vector<Family> allowed_families_;
};

}  // namespace cpword
