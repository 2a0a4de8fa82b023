// cpword: compound-word tokenization, decoding and evaluation for symbolic
// piano music. Subcommands: encode, stats, train, generate, evaluate,
// inspect-vocab. Exit codes: 0 ok, 1 usage, 2 data error, 3 model error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "cpword/analysis.hpp"
#include "cpword/checkpoint.hpp"
#include "cpword/cp.hpp"
#include "cpword/metrics.hpp"
#include "cpword/model.hpp"
#include "cpword/remi.hpp"
#include "cpword/sampling.hpp"
#include "cpword/smf.hpp"
#include "cpword/song_json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace cpword;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitModel = 3;

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- run config

struct RunConfig {
    Task task = Task::Unconditional;
    std::string preset = "toy";
    std::uint64_t seed = 1;
    std::string repr = "both";
    std::size_t max_tokens = 10240;

    // training
    int steps = 2000;
    int batch_size = 4;
    double lr = 1e-4;
    int checkpoint_every = 500;
    int log_every = 10;

    // generation
    int max_steps = 4096;
    bool greedy = false;
    json policy_overrides = json::object();
    json model = json::object();  // dimension overrides for the custom preset
};

Task task_from_name(const std::string& name) {
    if (name == "conditional") return Task::Conditional;
    if (name == "unconditional") return Task::Unconditional;
    throw data_error("unknown task '" + name + "' (use conditional|unconditional)");
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw data_error("cannot open config file " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw data_error("config file " + path + " is not valid JSON");
    if (j.contains("task")) cfg.task = task_from_name(j["task"].get<std::string>());
    if (j.contains("preset")) cfg.preset = j["preset"].get<std::string>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("repr")) cfg.repr = j["repr"].get<std::string>();
    if (j.contains("max_tokens")) cfg.max_tokens = j["max_tokens"].get<std::size_t>();
    if (j.contains("steps")) cfg.steps = j["steps"].get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
    if (j.contains("checkpoint_every")) cfg.checkpoint_every = j["checkpoint_every"].get<int>();
    if (j.contains("log_every")) cfg.log_every = j["log_every"].get<int>();
    if (j.contains("max_steps")) cfg.max_steps = j["max_steps"].get<int>();
    if (j.contains("greedy")) cfg.greedy = j["greedy"].get<bool>();
    if (j.contains("policy_overrides")) cfg.policy_overrides = j["policy_overrides"];
    if (j.contains("model")) cfg.model = j["model"];
    return cfg;
}

ordered_json run_config_to_json(const RunConfig& cfg) {
    ordered_json j;
    j["task"] = task_name(cfg.task);
    j["preset"] = cfg.preset;
    j["seed"] = cfg.seed;
    j["repr"] = cfg.repr;
    j["max_tokens"] = cfg.max_tokens;
    j["steps"] = cfg.steps;
    j["batch_size"] = cfg.batch_size;
    j["lr"] = cfg.lr;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["log_every"] = cfg.log_every;
    j["max_steps"] = cfg.max_steps;
    j["greedy"] = cfg.greedy;
    j["policy_overrides"] = cfg.policy_overrides.is_null() ? json::object() : cfg.policy_overrides;
    j["model"] = cfg.model.is_null() ? json::object() : cfg.model;
    return j;
}

// Config precedence: command-line flags > config file > defaults. The
// snapshot written next to every artifact records the merged result.
void write_config_snapshot(const fs::path& dir, const RunConfig& cfg, const Vocabulary& vocab) {
    ordered_json j = run_config_to_json(cfg);
    j["vocab_hash"] = vocab.hash_hex();
    std::ofstream out(dir / "run_config.json", std::ios::trunc);
    out << j.dump(2) << "\n";
}

PolicySet policies_from_config(const Vocabulary& vocab, const RunConfig& cfg) {
    PolicySet set = PolicySet::from_vocab(vocab);
    for (const auto& [key, value] : cfg.policy_overrides.items()) {
        SamplePolicy* target = nullptr;
        if (key == "family") {
            target = &set.family;
        } else {
            for (int i = 0; i < kNumTokenTypes; ++i)
                if (key == Vocabulary::type_name(static_cast<TokenType>(i)))
                    target = &set.per_type[static_cast<std::size_t>(i)];
        }
        if (!target) throw data_error("policy override for unknown token type '" + key + "'");
        if (value.contains("tau")) target->tau = value["tau"].get<double>();
        if (value.contains("rho")) target->rho = value["rho"].get<double>();
    }
    return set;
}

// ------------------------------------------------------------------- file io

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return {bytes.begin(), bytes.end()};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write " + path.string());
    out << text;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<fs::path> list_files(const fs::path& dir, std::initializer_list<const char*> extensions) {
    if (!fs::is_directory(dir)) throw data_error(dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        for (const char* want : extensions)
            if (ext == want) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

Song load_song(const fs::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".json") return parse_json_song(read_text(path));
    return parse_smf(read_bytes(path));
}

// ------------------------------------------------------------------- encode

struct EncodedCorpus {
    std::vector<std::string> names;
    std::vector<TokenSeq> remi;
    std::vector<CpSeq> cp;
    std::vector<LeadSheet> leads;  // conditional task only
    std::vector<SongLengths> lengths;
    std::vector<std::pair<std::string, std::string>> skipped;
};

EncodedCorpus encode_directory(const fs::path& input, const Vocabulary& vocab,
                               const RunConfig& cfg) {
    EncodedCorpus corpus;
    EncodeOptions opts;
    opts.max_tokens = cfg.max_tokens;
    for (const fs::path& path : list_files(input, {".mid", ".midi", ".json"})) {
        try {
            const Song song = load_song(path);
            TokenSeq remi;
            if (vocab.task() == Task::Conditional) {
                LeadSheet lead = make_leadsheet(song);
                remi = interleave_conditional(lead, song, vocab, opts);
                corpus.leads.push_back(std::move(lead));
            } else {
                remi = encode_remi(song, vocab, opts);
            }
            CpSeq cps = group_to_cp(remi, vocab);
            corpus.lengths.push_back(measure_lengths(path.filename().string(), remi, cps, vocab));
            corpus.names.push_back(path.filename().string());
            corpus.remi.push_back(std::move(remi));
            corpus.cp.push_back(std::move(cps));
        } catch (const std::exception& e) {
            corpus.skipped.push_back({path.filename().string(), e.what()});
            std::cerr << "warning: skipping " << path.filename().string() << ": " << e.what() << "\n";
        }
    }
    return corpus;
}

ordered_json stats_block(const EncodedCorpus& corpus) {
    auto collect = [&](auto field) {
        std::vector<std::size_t> v;
        for (const SongLengths& l : corpus.lengths) v.push_back(field(l));
        return summarize(v);
    };
    auto to_json = [](const LengthStats& s) {
        return ordered_json{{"mean", s.mean}, {"stddev", s.stddev}, {"max", s.max}};
    };
    ordered_json j;
    j["remi_content"] = to_json(collect([](const SongLengths& l) { return l.remi_content; }));
    j["remi_with_specials"] =
        to_json(collect([](const SongLengths& l) { return l.remi_with_specials; }));
    j["cp_content"] = to_json(collect([](const SongLengths& l) { return l.cp_content; }));
    j["cp_with_specials"] = to_json(collect([](const SongLengths& l) { return l.cp_with_specials; }));
    return j;
}

void print_stats_table(const EncodedCorpus& corpus, Task task) {
    auto stat = [&](auto field) {
        std::vector<std::size_t> v;
        for (const SongLengths& l : corpus.lengths) v.push_back(field(l));
        return summarize(v);
    };
    const LengthStats remi = stat([](const SongLengths& l) { return l.remi_content; });
    const LengthStats cp = stat([](const SongLengths& l) { return l.cp_content; });
    char line[160];
    std::printf("task          repr   #words (T) mean (± std)      max\n");
    std::snprintf(line, sizeof line, "%-13s REMI   %10.1f (± %.1f) %8zu\n", task_name(task), remi.mean,
                  remi.stddev, remi.max);
    std::fputs(line, stdout);
    std::snprintf(line, sizeof line, "%-13s CP     %10.1f (± %.1f) %8zu\n", task_name(task), cp.mean,
                  cp.stddev, cp.max);
    std::fputs(line, stdout);
}

void write_corpus(const fs::path& out_dir, const EncodedCorpus& corpus, const Vocabulary& vocab,
                  const RunConfig& cfg) {
    fs::create_directories(out_dir);
    const bool want_remi = cfg.repr == "remi" || cfg.repr == "both";
    const bool want_cp = cfg.repr == "cp" || cfg.repr == "both";
    if (want_remi) {
        std::ofstream out(out_dir / "remi.bin", std::ios::binary | std::ios::trunc);
        for (const TokenSeq& seq : corpus.remi) write_id_record(out, seq.ids);
    }
    if (want_cp) {
        std::ofstream out(out_dir / "cp.bin", std::ios::binary | std::ios::trunc);
        for (const CpSeq& cps : corpus.cp) write_cp_record(out, cps, vocab);
    }
    if (vocab.task() == Task::Conditional) {
        // the extracted conditions double as generate/evaluate inputs
        fs::create_directories(out_dir / "leads");
        for (std::size_t i = 0; i < corpus.leads.size(); ++i) {
            const fs::path name = fs::path(corpus.names[i]).stem();
            write_text(out_dir / "leads" / (name.string() + ".json"),
                       serialize_json_leadsheet(corpus.leads[i]));
        }
    }

    ordered_json sidecar;
    sidecar["task"] = task_name(vocab.task());
    sidecar["vocab_hash"] = vocab.hash_hex();
    ordered_json reprs = ordered_json::array();
    if (want_remi) reprs.push_back("remi");
    if (want_cp) reprs.push_back("cp");
    sidecar["repr"] = std::move(reprs);
    ordered_json songs = ordered_json::array();
    for (const SongLengths& l : corpus.lengths)
        songs.push_back({{"name", l.name},
                         {"remi_content", l.remi_content},
                         {"remi_with_specials", l.remi_with_specials},
                         {"cp_content", l.cp_content},
                         {"cp_with_specials", l.cp_with_specials}});
    sidecar["songs"] = std::move(songs);
    sidecar["stats"] = stats_block(corpus);
    ordered_json skipped = ordered_json::array();
    for (const auto& [name, err] : corpus.skipped) skipped.push_back({{"name", name}, {"error", err}});
    sidecar["skipped"] = std::move(skipped);
    write_text(out_dir / "corpus.json", sidecar.dump(2) + "\n");
    write_config_snapshot(out_dir, cfg, vocab);
}

int cmd_encode(const fs::path& input, const fs::path& out_dir, const RunConfig& cfg) {
    const Vocabulary vocab(cfg.task);
    const EncodedCorpus corpus = encode_directory(input, vocab, cfg);
    write_corpus(out_dir, corpus, vocab, cfg);
    print_stats_table(corpus, cfg.task);
    if (corpus.lengths.empty()) std::cerr << "warning: no songs encoded from " << input << "\n";
    std::printf("encoded %zu songs (%zu skipped) -> %s\n", corpus.lengths.size(),
                corpus.skipped.size(), out_dir.string().c_str());
    return kExitOk;
}

// -------------------------------------------------------------------- stats

struct LoadedCorpus {
    Task task = Task::Unconditional;
    std::vector<std::string> names;
    std::vector<std::vector<TokenId>> remi;
    std::vector<CpSeq> cp;
};

LoadedCorpus load_corpus(const fs::path& dir, const Vocabulary* expected_vocab = nullptr) {
    const fs::path sidecar_path = dir / "corpus.json";
    if (!fs::exists(sidecar_path)) throw data_error("no corpus.json in " + dir.string());
    const json sidecar = json::parse(read_text(sidecar_path));
    LoadedCorpus corpus;
    corpus.task = task_from_name(sidecar.at("task").get<std::string>());
    const Vocabulary vocab(corpus.task);
    if (sidecar.at("vocab_hash").get<std::string>() != vocab.hash_hex())
        throw data_error("corpus vocabulary hash does not match this build's vocabulary");
    if (expected_vocab && expected_vocab->task() != corpus.task)
        throw data_error("corpus task does not match the requested task");
    for (const json& s : sidecar.at("songs")) corpus.names.push_back(s.at("name").get<std::string>());

    if (fs::exists(dir / "remi.bin")) {
        std::ifstream in(dir / "remi.bin", std::ios::binary);
        std::vector<TokenId> ids;
        while (read_id_record(in, ids)) corpus.remi.push_back(ids);
    }
    if (fs::exists(dir / "cp.bin")) {
        std::ifstream in(dir / "cp.bin", std::ios::binary);
        CpSeq cps;
        while (read_cp_record(in, cps, vocab)) corpus.cp.push_back(cps);
    }
    return corpus;
}

int cmd_stats(const fs::path& dir) {
    const LoadedCorpus corpus = load_corpus(dir);
    const Vocabulary vocab(corpus.task);
    if (corpus.remi.empty() || corpus.cp.empty())
        throw data_error("stats needs both remi.bin and cp.bin in " + dir.string());
    if (corpus.remi.size() != corpus.cp.size())
        throw data_error("remi.bin and cp.bin record counts differ");

    EncodedCorpus view;
    bool inequality_ok = true;
    for (std::size_t i = 0; i < corpus.remi.size(); ++i) {
        TokenSeq remi;
        remi.task = corpus.task;
        remi.ids = corpus.remi[i];
        const std::string name = i < corpus.names.size() ? corpus.names[i] : std::to_string(i);
        const SongLengths len = measure_lengths(name, remi, corpus.cp[i], vocab);
        view.lengths.push_back(len);
        const bool has_note = len.remi_content > len.cp_content;  // note words expand
        if (len.cp_content == 0) continue;
        if (has_note && !(len.cp_content < len.remi_content &&
                          len.remi_content < static_cast<std::size_t>(vocab.num_slots()) * len.cp_content)) {
            inequality_ok = false;
            std::cerr << "length inequality violated for " << name << "\n";
        }
    }
    print_stats_table(view, corpus.task);
    std::printf("length inequality T_cp < T_remi < K*T_cp: %s\n", inequality_ok ? "ok" : "VIOLATED");
    return inequality_ok ? kExitOk : kExitData;
}

// -------------------------------------------------------------------- train

ModelConfig preset_config(const Vocabulary& vocab, const RunConfig& cfg) {
    ModelConfig mc;
    if (cfg.preset == "full") {
        mc = ModelConfig::full_scale(vocab);
    } else if (cfg.preset == "toy") {
        mc = ModelConfig::toy(vocab);
    } else if (cfg.preset == "custom") {
        mc = ModelConfig::toy(vocab);  // base for the config file's "model" overrides
        const json& m = cfg.model;
        if (m.contains("d_model")) mc.d_model = m["d_model"].get<int>();
        if (m.contains("n_layers")) mc.n_layers = m["n_layers"].get<int>();
        if (m.contains("n_heads")) mc.n_heads = m["n_heads"].get<int>();
        if (m.contains("d_ffn")) mc.d_ffn = m["d_ffn"].get<int>();
        if (m.contains("max_len")) mc.max_len = m["max_len"].get<int>();
        if (m.contains("family_embed")) mc.family_embed = m["family_embed"].get<int>();
        if (m.contains("type_embed")) mc.type_embed = m["type_embed"].get<std::vector<int>>();
        mc.validate(vocab);
    } else {
        throw data_error("unknown preset '" + cfg.preset + "' (use toy|full|custom)");
    }
    mc.seed = cfg.seed;
    return mc;
}

int cmd_train(const fs::path& corpus_dir, const fs::path& out_dir, const RunConfig& cfg,
              const std::string& resume, bool dry_run) {
    const LoadedCorpus corpus = load_corpus(corpus_dir);
    const Vocabulary vocab(corpus.task);
    if (corpus.cp.empty()) throw data_error("no cp.bin records in " + corpus_dir.string());

    ModelConfig mc = preset_config(vocab, cfg);

    if (dry_run) {
        ModelParams<float> params(mc, vocab);
        const std::size_t count = params.parameter_count();
        std::printf("preset %s: %zu parameters, %.1f MiB as float32 (x3 with Adam moments)\n",
                    cfg.preset.c_str(), count,
                    static_cast<double>(count) * sizeof(float) / (1024.0 * 1024.0));
        return kExitOk;
    }

    std::vector<const CpSeq*> usable;
    for (const CpSeq& cps : corpus.cp) {
        if (static_cast<int>(cps.words.size()) - 1 > mc.max_len) {
            std::cerr << "warning: skipping a sequence of " << cps.words.size()
                      << " words (attention window is " << mc.max_len << ")\n";
            continue;
        }
        if (cps.words.size() >= 2) usable.push_back(&cps);
    }
    if (usable.empty()) throw data_error("no trainable sequences under the attention window");

    fs::create_directories(out_dir);
    write_config_snapshot(out_dir, cfg, vocab);

    ModelParams<float> params(mc, vocab);
    AdamState<float> opt(mc, vocab);
    long long start_step = 0;
    if (!resume.empty()) {
        start_step = load_checkpoint<float>(resume, params, vocab, &opt);
        std::printf("resumed from %s at step %lld\n", resume.c_str(), start_step);
    } else {
        Rng rng(mc.seed);
        params.init_random(rng);
    }

    AdamConfig adam;
    adam.lr = cfg.lr;
    ModelParams<float> scratch(mc, vocab);

    const fs::path log_path = out_dir / "loss.csv";
    std::ofstream log(log_path, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (start_step == 0) {
        log << "step,total";
        log << ",family";
        for (TokenType t : vocab.slot_types()) log << "," << Vocabulary::type_name(t);
        log << "\n";
    }

    const int batch = std::max(1, std::min<int>(cfg.batch_size, static_cast<int>(usable.size())));
    for (long long step = start_step; step < cfg.steps; ++step) {
        std::vector<const CpSeq*> slice;
        for (int j = 0; j < batch; ++j)
            slice.push_back(usable[(static_cast<std::size_t>(step) * batch + j) % usable.size()]);
        const LossStats stats = train_step(params, vocab, slice, opt, adam, scratch);

        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log << (step + 1) << "," << stats.total;
            for (double v : stats.per_head) log << "," << v;
            log << "\n";
            std::printf("step %6lld  nll %.4f\n", step + 1, stats.total);
        }
        if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps) {
            char name[64];
            std::snprintf(name, sizeof name, "checkpoint_%06lld.ckpt", step + 1);
            save_checkpoint(out_dir / name, params, vocab, &opt);
            save_checkpoint(out_dir / "checkpoint_latest.ckpt", params, vocab, &opt);
        }
    }
    return kExitOk;
}

// ----------------------------------------------------------------- generate

void write_sample(const fs::path& out_dir, const std::string& stem, const GenerateResult& result,
                  const Vocabulary& vocab) {
    const TokenSeq remi = ungroup_from_cp(result.sequence, vocab);
    Song song;
    if (vocab.task() == Task::Conditional)
        song = deinterleave_conditional(remi, vocab).second;
    else
        song = decode_remi(remi, vocab);

    write_text(out_dir / (stem + ".json"), serialize_json_song(song));
    write_bytes(out_dir / (stem + ".mid"), write_smf(song));
    write_text(out_dir / (stem + ".remi.txt"), tokens_to_text(remi, vocab));
    std::ofstream cp_out(out_dir / (stem + ".cp.bin"), std::ios::binary | std::ios::trunc);
    write_cp_record(cp_out, result.sequence, vocab);

    const std::size_t symbols = result.sequence.words.size() * (vocab.num_slots() + 1);
    std::printf("%s: %zu words (%zu sampled, %zu forced), %zu typed symbols, %.2f s, %.1f words/s\n",
                stem.c_str(), result.sequence.words.size(), result.sampled_words,
                result.forced_words, symbols, result.seconds,
                result.seconds > 0 ? static_cast<double>(result.sampled_words) / result.seconds : 0.0);
}

int cmd_generate(const std::string& checkpoint, const std::string& mode,
                 const std::string& condition, int n, const fs::path& out_dir,
                 const RunConfig& cfg) {
    const Vocabulary vocab(task_from_name(mode));
    ModelParams<float> params;
    load_checkpoint<float>(checkpoint, params, vocab);
    const PolicySet policy = policies_from_config(vocab, cfg);
    fs::create_directories(out_dir);
    write_config_snapshot(out_dir, cfg, vocab);

    GenerateOptions opts;
    opts.seed = cfg.seed;
    opts.max_steps = cfg.max_steps;
    opts.greedy = cfg.greedy;

    if (vocab.task() == Task::Unconditional) {
        if (!condition.empty()) throw data_error("unconditional generation takes no --condition");
        for (int i = 0; i < n; ++i) {
            opts.stream = static_cast<std::uint64_t>(i);
            const GenerateResult result = generate(params, vocab, nullptr, policy, opts);
            char stem[32];
            std::snprintf(stem, sizeof stem, "sample_%03d", i);
            write_sample(out_dir, stem, result, vocab);
        }
        return kExitOk;
    }

    if (condition.empty()) throw data_error("conditional generation needs --condition");
    std::vector<fs::path> lead_files;
    if (fs::is_directory(condition))
        lead_files = list_files(condition, {".json"});
    else
        lead_files.push_back(condition);
    if (lead_files.empty()) throw data_error("no lead sheets found at " + condition);

    for (const fs::path& lead_path : lead_files) {
        const LeadSheet lead = parse_json_leadsheet(read_text(lead_path));
        for (int i = 0; i < n; ++i) {
            opts.stream = static_cast<std::uint64_t>(i);
            const GenerateResult result = generate(params, vocab, &lead, policy, opts);
            std::string stem = lead_path.stem().string();
            if (n > 1) {  // single samples keep the lead's name so evaluate can pair them
                char suffix[16];
                std::snprintf(suffix, sizeof suffix, "_s%02d", i);
                stem += suffix;
            }
            write_sample(out_dir, stem, result, vocab);
        }
    }
    return kExitOk;
}

// ----------------------------------------------------------------- evaluate

int cmd_evaluate(const fs::path& lead_dir, const fs::path& gen_dir, const fs::path& out_dir,
                 const RunConfig& cfg) {
    const auto lead_files = list_files(lead_dir, {".json"});
    std::vector<std::string> unpaired;
    std::vector<std::string> names;
    std::vector<LeadSheet> leads;
    std::vector<Song> songs;
    for (const fs::path& lead_path : lead_files) {
        fs::path gen_path = gen_dir / lead_path.filename();
        if (!fs::exists(gen_path)) {
            const fs::path mid = gen_dir / (lead_path.stem().string() + ".mid");
            if (fs::exists(mid))
                gen_path = mid;
            else {
                unpaired.push_back(lead_path.filename().string());
                continue;
            }
        }
        leads.push_back(parse_json_leadsheet(read_text(lead_path)));
        songs.push_back(load_song(gen_path));
        names.push_back(lead_path.stem().string());
    }
    for (const std::string& name : unpaired)
        std::cerr << "warning: no generated song paired with " << name << "\n";
    if (leads.empty()) std::cerr << "warning: no paired songs to evaluate\n";

    std::vector<MatchnessRow> rows;
    for (std::size_t i = 0; i < leads.size(); ++i)
        rows.push_back({names[i], melody_matchness(leads[i], songs[i]), chord_matchness(leads[i], songs[i])});
    const MatchnessReport report = make_report(rows);

    // Randomized-pairing baseline: a seed-keyed cyclic shift, so every lead
    // scores against some other song.
    MatchnessReport shuffled;
    if (leads.size() > 1) {
        Rng rng(cfg.seed);
        const std::size_t shift = 1 + rng.below(leads.size() - 1);
        std::vector<MatchnessRow> shuffled_rows;
        for (std::size_t i = 0; i < leads.size(); ++i) {
            const std::size_t j = (i + shift) % leads.size();
            shuffled_rows.push_back(
                {names[i], melody_matchness(leads[i], songs[j]), chord_matchness(leads[i], songs[j])});
        }
        shuffled = make_report(shuffled_rows);
    }

    fs::create_directories(out_dir);
    ordered_json doc = ordered_json::parse(report_to_json(report));
    doc["randomized"] = ordered_json::parse(report_to_json(shuffled));
    write_text(out_dir / "matchness.json", doc.dump(2) + "\n");

    std::string table = report_to_table(report, "paired");
    if (!shuffled.rows.empty()) table += report_to_table(shuffled, "randomized");
    write_text(out_dir / "matchness.txt", table);
    std::fputs(table.c_str(), stdout);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compound-word transformer toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // shared flags may follow the subcommand name

    std::string config_path;
    std::optional<std::string> flag_task, flag_preset, flag_repr;
    std::optional<std::uint64_t> flag_seed;
    app.add_option("--config", config_path, "JSON run-config file")->configurable(false);
    app.add_option("--task", flag_task, "conditional|unconditional");
    app.add_option("--preset", flag_preset, "model preset: toy|full|custom");
    app.add_option("--seed", flag_seed, "run seed");
    app.add_option("--repr", flag_repr, "representation: remi|cp|both");

    std::string input_dir, out_dir = "out", corpus_dir, checkpoint, mode = "unconditional";
    std::string condition, resume, lead_dir, gen_dir;
    int n_samples = 1;
    bool dry_run = false;
    std::optional<int> flag_steps, flag_batch, flag_max_steps, flag_ckpt_every;
    std::optional<double> flag_lr;
    bool flag_greedy = false;

    CLI::App* enc = app.add_subcommand("encode", "encode songs into token corpora");
    enc->add_option("input", input_dir, "directory of .mid/.json songs")->required();
    enc->add_option("--out", out_dir, "output corpus directory");

    CLI::App* stats = app.add_subcommand("stats", "corpus length statistics and checks");
    stats->add_option("corpus", corpus_dir, "encoded corpus directory")->required();

    CLI::App* train = app.add_subcommand("train", "train the decoder on a CP corpus");
    train->add_option("--corpus", corpus_dir, "encoded corpus directory")->required();
    train->add_option("--out", out_dir, "checkpoint/log output directory");
    train->add_option("--steps", flag_steps, "optimizer steps");
    train->add_option("--batch", flag_batch, "sequences per step");
    train->add_option("--lr", flag_lr, "Adam learning rate");
    train->add_option("--resume", resume, "checkpoint to resume from");
    train->add_option("--checkpoint-every", flag_ckpt_every, "steps between checkpoints");
    train->add_flag("--dry-run", dry_run, "print parameter count and memory estimate, then exit");

    CLI::App* gen = app.add_subcommand("generate", "sample songs from a checkpoint");
    gen->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    gen->add_option("--mode", mode, "conditional|unconditional");
    gen->add_option("--condition", condition, "lead-sheet JSON file or directory (conditional)");
    gen->add_option("-n", n_samples, "samples per condition");
    gen->add_option("--out", out_dir, "output directory");
    gen->add_option("--max-steps", flag_max_steps, "sampling step cap");
    gen->add_flag("--greedy", flag_greedy, "argmax decoding");

    CLI::App* eval = app.add_subcommand("evaluate", "matchness of generated songs against leads");
    eval->add_option("--lead-dir", lead_dir, "directory of lead-sheet JSON files")->required();
    eval->add_option("--gen-dir", gen_dir, "directory of generated songs")->required();
    eval->add_option("--out", out_dir, "report output directory");

    CLI::App* vocab_cmd = app.add_subcommand("inspect-vocab", "print the vocabulary manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig cfg = load_run_config(config_path);
        if (flag_task) cfg.task = task_from_name(*flag_task);
        if (flag_preset) cfg.preset = *flag_preset;
        if (flag_seed) cfg.seed = *flag_seed;
        if (flag_repr) cfg.repr = *flag_repr;
        if (flag_steps) cfg.steps = *flag_steps;
        if (flag_batch) cfg.batch_size = *flag_batch;
        if (flag_lr) cfg.lr = *flag_lr;
        if (flag_max_steps) cfg.max_steps = *flag_max_steps;
        if (flag_ckpt_every) cfg.checkpoint_every = *flag_ckpt_every;
        if (flag_greedy) cfg.greedy = true;

        if (enc->parsed()) return cmd_encode(input_dir, out_dir, cfg);
        if (stats->parsed()) return cmd_stats(corpus_dir);
        if (train->parsed()) return cmd_train(corpus_dir, out_dir, cfg, resume, dry_run);
        if (gen->parsed()) return cmd_generate(checkpoint, mode, condition, n_samples, out_dir, cfg);
        if (eval->parsed()) return cmd_evaluate(lead_dir, gen_dir, out_dir, cfg);
        if (vocab_cmd->parsed()) {
            std::fputs(Vocabulary(cfg.task).manifest_json().c_str(), stdout);
            return kExitOk;
        }
    } catch (const model_error& e) {
        std::cerr << "model error: " << e.what() << "\n";
        return kExitModel;
    } catch (const sampling_error& e) {
        std::cerr << "model error: " << e.what() << "\n";
        return kExitModel;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
