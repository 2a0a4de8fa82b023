#pragma once

#include <algorithm>
#include <chrono>
#include <numeric>
#include <optional>

#include "cpword/model.hpp"
#include "cpword/remi.hpp"

namespace cpword {

struct sampling_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// softmax(logits / tau).
inline VecX<double> temper(const VecX<double>& logits, double tau) {
    if (!(tau > 0.0)) throw sampling_error("temper: temperature must be > 0");
    VecX<double> scaled = logits / tau;
    const double top = scaled.maxCoeff();
    VecX<double> p = (scaled.array() - top).exp().matrix();
    return p / p.sum();
}

// Smallest probability-descending prefix whose cumulative mass reaches rho
// (closed prefix; probability ties broken by index). rho = 1 keeps all
// tokens with nonzero probability reachable.
inline std::vector<int> nucleus_candidates(const VecX<double>& probs, double rho) {
    if (!(rho > 0.0) || rho > 1.0) throw sampling_error("nucleus: rho must lie in (0, 1]");
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (probs(a) != probs(b)) return probs(a) > probs(b);
        return a < b;
    });
    std::vector<int> keep;
    double cum = 0.0;
    for (int idx : order) {
        keep.push_back(idx);
        cum += probs(idx);
        if (cum >= rho - 1e-12) break;
    }
    return keep;
}

inline int nucleus_sample(const VecX<double>& probs, double rho, Rng& rng) {
    const double total = probs.sum();
    if (!(total > 0.0)) throw sampling_error("nucleus: degenerate all-zero distribution");
    const std::vector<int> keep = nucleus_candidates(probs / total, rho);
    double mass = 0.0;
    for (int idx : keep) mass += probs(idx);
    const double u = rng.uniform() * mass;
    double cum = 0.0;
    for (int idx : keep) {
        cum += probs(idx);
        if (u < cum) return idx;
    }
    return keep.back();
}

// Per-type and family sampling policies; defaults come from the vocabulary
// table, CLI overrides replace individual entries.
struct PolicySet {
    std::array<SamplePolicy, kNumTokenTypes> per_type{};
    SamplePolicy family;

    static PolicySet from_vocab(const Vocabulary& vocab) {
        PolicySet p;
        for (int i = 0; i < kNumTokenTypes; ++i)
            p.per_type[static_cast<std::size_t>(i)] = vocab.policy(static_cast<TokenType>(i));
        p.family = vocab.family_policy();
        return p;
    }

    SamplePolicy of(TokenType t) const { return per_type[static_cast<std::size_t>(t)]; }
};

struct GenerateOptions {
    std::uint64_t seed = 1;
    std::uint64_t stream = 0;   // distinct parallel sessions draw from distinct streams
    int max_steps = 4096;
    bool greedy = false;        // argmax decoding instead of stochastic sampling
};

struct GenerateResult {
    CpSeq sequence;
    std::size_t sampled_words = 0;
    std::size_t forced_words = 0;
    double seconds = 0.0;
    bool hit_max_steps = false;
};

namespace detail {

// Tempered nucleus draw (or argmax) over an allowed subset of a head's
// classes. Returns the chosen local index.
template <typename S>
int sample_head(const VecX<S>& logits, const std::vector<int>& allowed, const SamplePolicy& policy,
                Rng& rng, bool greedy) {
    if (allowed.empty()) throw sampling_error("sample: empty candidate set");
    VecX<double> sub(allowed.size());
    for (std::size_t i = 0; i < allowed.size(); ++i)
        sub(static_cast<Eigen::Index>(i)) = static_cast<double>(logits(allowed[i]));
    int pick;
    if (greedy) {
        Eigen::Index best;
        sub.maxCoeff(&best);
        pick = static_cast<int>(best);
    } else {
        pick = nucleus_sample(temper(sub, policy.tau), policy.rho, rng);
    }
    return allowed[static_cast<std::size_t>(pick)];
}

// Local indices of a type's real values (no specials).
inline std::vector<int> value_locals(const Vocabulary& vocab, TokenType t) {
    std::vector<int> out(static_cast<std::size_t>(vocab.base_size(t)));
    std::iota(out.begin(), out.end(), 0);
    return out;
}

inline std::vector<int> value_and_conti_locals(const Vocabulary& vocab, TokenType t) {
    std::vector<int> out = value_locals(vocab, t);
    out.push_back(vocab.local_index(t, vocab.conti_id(t)));
    return out;
}

}  // namespace detail

// Autoregressive two-stage decoding with incremental attention state. The
// sampler enforces the grammar the codecs expect: the first content word is
// a bar, notes only follow an established position, tempo/chord slots are
// drawn only at beats (with [conti] available), off-family slots stay
// [ignore]. Unconditional runs stop at the EOS family or at max_steps, in
// which case an EOS word terminates the sequence; conditional runs force-feed
// the lead sheet bar by bar and sample only the piano segments.
template <typename S>
class Generator {
public:
    Generator(const ModelParams<S>& params, const Vocabulary& vocab, const PolicySet& policy,
              const GenerateOptions& opts)
        : params_(params),
          vocab_(vocab),
          policy_(policy),
          opts_(opts),
          rng_(opts.seed, opts.stream),
          state_(params.cfg) {
        if (params.cfg.task != vocab.task())
            throw sampling_error("generate: checkpoint task does not match the vocabulary");
        out_.task = vocab.task();
    }

    GenerateResult run(const LeadSheet* condition) {
        const auto started = std::chrono::steady_clock::now();
        if (vocab_.task() == Task::Conditional) {
            if (!condition) throw sampling_error("generate: the conditional task needs a lead sheet");
            run_conditional(*condition);
        } else {
            if (condition) throw sampling_error("generate: unconditional task takes no condition");
            run_unconditional();
        }
        GenerateResult result;
        result.sequence = std::move(out_);
        result.sampled_words = sampled_;
        result.forced_words = forced_;
        result.hit_max_steps = hit_cap_;
        result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        return result;
    }

private:
    void feed(const CompoundWord& word) {
        if (state_.t >= params_.cfg.max_len)
            throw sampling_error("generate: sequence exceeds the attention window");
        h_ = step_forward(params_, vocab_, word, state_);
        out_.words.push_back(word);
    }

    int sample_slot(const VecX<S>& h_out, TokenType t, const std::vector<int>& allowed) {
        const int slot = slot_index(t);
        const VecX<S> logits = slot_logits(params_, slot, h_out);
        return detail::sample_head(logits, allowed, policy_.of(t), rng_, opts_.greedy);
    }

    int slot_index(TokenType t) const {
        const auto& slots = vocab_.slot_types();
        return static_cast<int>(std::find(slots.begin(), slots.end(), t) - slots.begin());
    }

    Family sample_family(const std::vector<Family>& allowed) {
        const VecX<S> logits = family_logits(params_, h_);
        std::vector<int> locals;
        for (Family f : allowed) locals.push_back(static_cast<int>(f));
        const int pick = detail::sample_head(logits, locals, policy_.family, rng_, opts_.greedy);
        return static_cast<Family>(pick);
    }

    // One sampled word given the grammar state; nullopt for "end of bar" in
    // conditional mode (the model asked for the next [bar], which the forced
    // lead-sheet segment of the following bar will provide).
    std::optional<CompoundWord> sample_word(bool conditional) {
        std::vector<Family> families;
        if (has_position_) families.push_back(Family::Note);
        families.push_back(Family::Metric);
        if (!conditional && has_bar_) families.push_back(Family::Eos);
        const Family fam = sample_family(families);

        if (fam == Family::Eos) return make_eos_word(vocab_);

        const VecX<S> h_out = conditioned_hidden(params_, h_, static_cast<int>(fam));
        CompoundWord word = make_ignore_word(vocab_, vocab_.family_id(fam));

        if (fam == Family::Note) {
            word.slot(TokenType::Pitch) = vocab_.id_from_local(
                TokenType::Pitch, sample_slot(h_out, TokenType::Pitch,
                                              detail::value_locals(vocab_, TokenType::Pitch)));
            word.slot(TokenType::Duration) = vocab_.id_from_local(
                TokenType::Duration, sample_slot(h_out, TokenType::Duration,
                                                 detail::value_locals(vocab_, TokenType::Duration)));
            word.slot(TokenType::Velocity) = vocab_.id_from_local(
                TokenType::Velocity, sample_slot(h_out, TokenType::Velocity,
                                                 detail::value_locals(vocab_, TokenType::Velocity)));
            return word;
        }

        // Metric word: the position/bar slot steers the tempo/chord masks.
        std::vector<int> pos_allowed;
        const int bar_local = vocab_.local_index(
            TokenType::PositionBar, vocab_.token_id(TokenType::PositionBar, vocab_.bar_value()));
        if (!has_bar_)
            pos_allowed = {bar_local};
        else
            pos_allowed = detail::value_locals(vocab_, TokenType::PositionBar);
        const int pos_local = sample_slot(h_out, TokenType::PositionBar, pos_allowed);
        const TokenId pos_id = vocab_.id_from_local(TokenType::PositionBar, pos_local);
        const int pos_value = vocab_.describe(pos_id).value;

        if (conditional && pos_value == vocab_.bar_value()) return std::nullopt;

        word.slot(TokenType::PositionBar) = pos_id;
        if (pos_value != vocab_.bar_value() &&
            (pos_value - 1) % vocab_.grid().positions_per_beat() == 0) {
            word.slot(TokenType::Tempo) = vocab_.id_from_local(
                TokenType::Tempo, sample_slot(h_out, TokenType::Tempo,
                                              detail::value_and_conti_locals(vocab_, TokenType::Tempo)));
            word.slot(TokenType::Chord) = vocab_.id_from_local(
                TokenType::Chord, sample_slot(h_out, TokenType::Chord,
                                              detail::value_and_conti_locals(vocab_, TokenType::Chord)));
        }
        return word;
    }

    void apply_grammar(const CompoundWord& word) {
        if (word.family != vocab_.family_id(Family::Metric)) return;
        const auto ref = vocab_.describe(word.slot(TokenType::PositionBar));
        if (ref.value == vocab_.bar_value()) {
            has_bar_ = true;
            has_position_ = false;
        } else {
            has_position_ = true;
        }
    }

    void run_unconditional() {
        feed(make_bos_word(vocab_));
        for (int step = 0; step < opts_.max_steps; ++step) {
            const CompoundWord word = sample_word(false).value();
            sampled_++;
            if (word.family == vocab_.family_id(Family::Eos)) {
                out_.words.push_back(word);  // terminal word is not fed back
                return;
            }
            apply_grammar(word);
            feed(word);
        }
        hit_cap_ = true;
        out_.words.push_back(make_eos_word(vocab_));
    }

    void run_conditional(const LeadSheet& lead) {
        // Forced per-bar prefixes come from the codec itself: the interleaved
        // layout of the condition against an empty piano track.
        Song empty_piano;
        empty_piano.grid = lead.grid;
        empty_piano.n_bars = lead.n_bars;
        const CpSeq skeleton = group_to_cp(interleave_conditional(lead, empty_piano, vocab_), vocab_);

        std::vector<std::vector<CompoundWord>> bars;
        for (std::size_t i = 1; i < skeleton.words.size(); ++i) {
            const CompoundWord& w = skeleton.words[i];
            if (w.family == vocab_.family_id(Family::Metric) &&
                vocab_.describe(w.slot(TokenType::PositionBar)).value == vocab_.bar_value())
                bars.emplace_back();
            bars.back().push_back(w);
        }

        feed(make_bos_word(vocab_));
        int steps = 0;
        for (const auto& bar : bars) {
            for (const CompoundWord& w : bar) {
                apply_grammar(w);
                feed(w);
                forced_++;
            }
            has_position_ = false;  // piano segment of the bar starts fresh
            while (true) {
                if (steps++ >= opts_.max_steps) {
                    hit_cap_ = true;
                    return;
                }
                const auto word = sample_word(true);
                if (!word) break;  // model closed the bar
                sampled_++;
                apply_grammar(*word);
                feed(*word);
            }
        }
    }

    const ModelParams<S>& params_;
    const Vocabulary& vocab_;
    PolicySet policy_;
    GenerateOptions opts_;
    Rng rng_;
    StepState<S> state_;
    VecX<S> h_;
    CpSeq out_;
    bool has_bar_ = false;
    bool has_position_ = false;
    bool hit_cap_ = false;
    std::size_t sampled_ = 0;
    std::size_t forced_ = 0;
};

template <typename S>
GenerateResult generate(const ModelParams<S>& params, const Vocabulary& vocab,
                        const LeadSheet* condition, const PolicySet& policy,
                        const GenerateOptions& opts) {
    Generator<S> g(params, vocab, policy, opts);
    return g.run(condition);
}

}  // namespace cpword
