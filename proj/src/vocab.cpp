#include "cpword/vocab.hpp"

#include <json.hpp>

namespace cpword {

namespace {

constexpr const char* kTypeNames[kNumTokenTypes] = {
    "track", "tempo", "position", "chord", "pitch", "duration", "velocity",
};
constexpr const char* kFamilyNames[kNumFamilies] = {"track", "note", "metric", "EOS"};
constexpr const char* kTrackNames[2] = {"leadsheet", "piano"};

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

}  // namespace

const char* Vocabulary::type_name(TokenType t) { return kTypeNames[index(t)]; }
const char* Vocabulary::family_name(Family f) { return kFamilyNames[static_cast<int>(f)]; }

Vocabulary::Vocabulary(Task task, const GridConfig& grid, const ValueRanges& ranges)
    : task_(task), grid_(grid), ranges_(ranges) {
    grid.validate();
    if (ranges.duration_direct_max + 1 != ranges.duration_classes)
        throw vocab_error("vocab: duration class count must be direct classes plus one overflow");
    if (ranges.duration_overflow_units <= ranges.duration_direct_max)
        throw vocab_error("vocab: duration overflow must exceed the direct class range");
    if (ranges.pitch_max <= ranges.pitch_min + 12)
        throw vocab_error("vocab: pitch range must span more than an octave");

    auto def = [&](TokenType t, Family fam, int lo, int hi, bool conti, int embed, SamplePolicy p) {
        type_[index(t)] = TypeEntry{t, fam, lo, hi, hi - lo + 1, conti, embed, p, 0, 0, 0};
    };
    def(TokenType::Track, Family::Track, 0, 1, false, 3, {1.0, 0.90});
    def(TokenType::Tempo, Family::Metric, 1, ranges.tempo_classes, true, 128, {1.2, 0.90});
    def(TokenType::PositionBar, Family::Metric, 1, grid.positions_per_bar + 1, false, 64, {1.2, 1.00});
    def(TokenType::Chord, Family::Metric, 0, ranges.chord_labels() - 1, true, 256, {1.0, 0.99});
    def(TokenType::Pitch, Family::Note, ranges.pitch_min, ranges.pitch_max, false, 512, {1.0, 0.90});
    def(TokenType::Duration, Family::Note, 1, ranges.duration_classes, false, 128, {2.0, 0.90});
    def(TokenType::Velocity, Family::Note, 1, ranges.velocity_classes, false, 128, {5.0, 1.00});

    int next = 0;
    for (TypeEntry& e : type_) {
        e.offset = next;
        next += e.base;
    }
    family_offset_ = next;
    next += kNumFamilies;
    for (TypeEntry& e : type_) e.ignore_id = static_cast<TokenId>(next++);
    for (TypeEntry& e : type_)
        if (e.has_conti) e.conti_id = static_cast<TokenId>(next++);
    bos_id_ = static_cast<TokenId>(next++);
    n_ids_ = next;

    for (int i = 0; i < kNumTokenTypes; ++i) {
        const auto t = static_cast<TokenType>(i);
        if (task == Task::Unconditional && t == TokenType::Track) continue;
        slot_types_.push_back(t);
    }
    allowed_families_ = task == Task::Conditional
                            ? std::vector<Family>{Family::Track, Family::Note, Family::Metric}
                            : std::vector<Family>{Family::Eos, Family::Note, Family::Metric};
}

int Vocabulary::total_base() const {
    int n = kNumFamilies;
    for (const TypeEntry& e : type_) n += e.base;
    return n;
}

int Vocabulary::total_specials() const {
    int n = kNumTokenTypes;
    for (const TypeEntry& e : type_) n += e.has_conti ? 1 : 0;
    return n;
}

TokenId Vocabulary::token_id(TokenType t, int value) const {
    const TypeEntry& e = type_[index(t)];
    if (value < e.lo || value > e.hi)
        throw vocab_error(std::string("vocab: ") + kTypeNames[index(t)] + " value " +
                          std::to_string(value) + " out of range");
    return static_cast<TokenId>(e.offset + value - e.lo);
}

TokenId Vocabulary::conti_id(TokenType t) const {
    const TypeEntry& e = type_[index(t)];
    if (!e.has_conti)
        throw vocab_error(std::string("vocab: type ") + kTypeNames[index(t)] + " has no [conti] token");
    return e.conti_id;
}

Vocabulary::TokenRef Vocabulary::describe(TokenId id) const {
    if (id >= n_ids_) throw vocab_error("vocab: id " + std::to_string(id) + " out of range");
    if (id == bos_id_) return {Kind::Bos, TokenType::Track, 0, Family::Track};
    for (const TypeEntry& e : type_) {
        if (id >= e.offset && id < e.offset + e.base)
            return {Kind::Value, e.type, e.lo + (id - e.offset), e.family};
        if (id == e.ignore_id) return {Kind::Ignore, e.type, 0, e.family};
        if (e.has_conti && id == e.conti_id) return {Kind::Conti, e.type, 0, e.family};
    }
    return {Kind::FamilyToken, TokenType::Track, 0, static_cast<Family>(id - family_offset_)};
}

int Vocabulary::local_count(TokenType t) const {
    const TypeEntry& e = type_[index(t)];
    return e.base + 1 + (e.has_conti ? 1 : 0);
}

int Vocabulary::local_index(TokenType t, TokenId id) const {
    const TypeEntry& e = type_[index(t)];
    if (id >= e.offset && id < e.offset + e.base) return id - e.offset;
    if (id == e.ignore_id) return e.base;
    if (e.has_conti && id == e.conti_id) return e.base + 1;
    throw vocab_error(std::string("vocab: id ") + std::to_string(id) + " is not a " +
                      kTypeNames[index(t)] + " token");
}

TokenId Vocabulary::id_from_local(TokenType t, int local) const {
    const TypeEntry& e = type_[index(t)];
    if (local >= 0 && local < e.base) return static_cast<TokenId>(e.offset + local);
    if (local == e.base) return e.ignore_id;
    if (e.has_conti && local == e.base + 1) return e.conti_id;
    throw vocab_error("vocab: local index out of range");
}

int Vocabulary::family_local(TokenId id) const {
    if (id == bos_id_) return kNumFamilies;
    const int rel = static_cast<int>(id) - family_offset_;
    if (rel < 0 || rel >= kNumFamilies)
        throw vocab_error("vocab: id " + std::to_string(id) + " is not a family token");
    return rel;
}

TokenId Vocabulary::id_from_family_local(int local) const {
    if (local == kNumFamilies) return bos_id_;
    if (local < 0 || local > kNumFamilies) throw vocab_error("vocab: family local index out of range");
    return family_id(static_cast<Family>(local));
}

std::string Vocabulary::value_name(TokenType t, int value) const {
    switch (t) {
        case TokenType::Track: return kTrackNames[value];
        case TokenType::PositionBar: return value == bar_value() ? "bar" : std::to_string(value);
        case TokenType::Chord: return ChordEvent::from_label({}, value).name();
        default: return std::to_string(value);
    }
}

bool Vocabulary::parse_value_name(TokenType t, const std::string& text, int& value) const {
    switch (t) {
        case TokenType::Track:
            for (int v = 0; v < 2; ++v)
                if (text == kTrackNames[v]) {
                    value = v;
                    return true;
                }
            return false;
        case TokenType::Chord: {
            for (int label = 0; label < ranges_.chord_labels(); ++label)
                if (ChordEvent::from_label({}, label).name() == text) {
                    value = label;
                    return true;
                }
            return false;
        }
        default: {
            try {
                value = std::stoi(text);
            } catch (...) {
                return false;
            }
            return true;
        }
    }
}

std::string Vocabulary::token_name(TokenId id) const {
    const TokenRef ref = describe(id);
    switch (ref.kind) {
        case Kind::Value:
            if (ref.type == TokenType::PositionBar && ref.value == bar_value()) return "bar";
            return std::string(kTypeNames[index(ref.type)]) + "=" + value_name(ref.type, ref.value);
        case Kind::Ignore: return std::string(kTypeNames[index(ref.type)]) + ":ignore";
        case Kind::Conti: return std::string(kTypeNames[index(ref.type)]) + ":conti";
        case Kind::FamilyToken: return std::string("family=") + kFamilyNames[static_cast<int>(ref.family)];
        case Kind::Bos: return "BOS";
    }
    return "?";
}

TokenId Vocabulary::parse_token(const std::string& text) const {
    if (text == "BOS") return bos_id_;
    if (text == "bar") return token_id(TokenType::PositionBar, bar_value());
    const auto eq = text.find('=');
    const auto colon = text.find(':');
    if (eq != std::string::npos) {
        const std::string head = text.substr(0, eq);
        const std::string tail = text.substr(eq + 1);
        if (head == "family") {
            for (int f = 0; f < kNumFamilies; ++f)
                if (tail == kFamilyNames[f]) return family_id(static_cast<Family>(f));
            throw vocab_error("vocab: unknown family token '" + text + "'");
        }
        for (int i = 0; i < kNumTokenTypes; ++i) {
            if (head != kTypeNames[i]) continue;
            int value = 0;
            if (!parse_value_name(static_cast<TokenType>(i), tail, value))
                throw vocab_error("vocab: bad token value '" + text + "'");
            return token_id(static_cast<TokenType>(i), value);
        }
    } else if (colon != std::string::npos) {
        const std::string head = text.substr(0, colon);
        const std::string tail = text.substr(colon + 1);
        for (int i = 0; i < kNumTokenTypes; ++i) {
            if (head != kTypeNames[i]) continue;
            const auto t = static_cast<TokenType>(i);
            if (tail == "ignore") return ignore_id(t);
            if (tail == "conti") return conti_id(t);
        }
    }
    throw vocab_error("vocab: unparseable token '" + text + "'");
}

std::string Vocabulary::manifest_json() const {
    nlohmann::ordered_json doc;
    doc["task"] = task_name(task_);
    doc["grid"] = {{"ticks_per_beat", grid_.ticks_per_beat},
                   {"positions_per_bar", grid_.positions_per_bar},
                   {"beats_per_bar", grid_.beats_per_bar}};
    nlohmann::ordered_json types = nlohmann::ordered_json::array();
    for (const TypeEntry& e : type_) {
        nlohmann::ordered_json jt;
        jt["name"] = kTypeNames[index(e.type)];
        jt["family"] = kFamilyNames[static_cast<int>(e.family)];
        jt["embed_size"] = e.embed;
        jt["tau"] = e.policy.tau;
        jt["rho"] = e.policy.rho;
        nlohmann::ordered_json values = nlohmann::ordered_json::array();
        for (int v = e.lo; v <= e.hi; ++v)
            values.push_back({{"name", value_name(e.type, v)}, {"id", token_id(e.type, v)}});
        jt["values"] = std::move(values);
        jt["ignore_id"] = e.ignore_id;
        if (e.has_conti) jt["conti_id"] = e.conti_id;
        types.push_back(std::move(jt));
    }
    doc["types"] = std::move(types);
    nlohmann::ordered_json fams = nlohmann::ordered_json::array();
    for (int f = 0; f < kNumFamilies; ++f)
        fams.push_back({{"name", kFamilyNames[f]}, {"id", family_id(static_cast<Family>(f))}});
    doc["families"] = std::move(fams);
    doc["family_embed_size"] = family_embed_;
    doc["family_tau"] = family_policy_.tau;
    doc["family_rho"] = family_policy_.rho;
    doc["bos_id"] = bos_id_;
    doc["total_base"] = total_base();
    doc["total_specials"] = total_specials();
    return doc.dump(2) + "\n";
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = kFnvOffset;
    for (const char c : manifest_json()) {
        h ^= static_cast<unsigned char>(c);
        h *= kFnvPrime;
    }
    return h;
}

std::string Vocabulary::hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
}

}  // namespace cpword
