#include "cpword/checkpoint.hpp"

#include <json.hpp>

namespace cpword {

namespace {

using ordered_json = nlohmann::ordered_json;
using nlohmann::json;

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
    ordered_json j;
    j["task"] = task_name(cfg.task);
    j["d_model"] = cfg.d_model;
    j["n_layers"] = cfg.n_layers;
    j["n_heads"] = cfg.n_heads;
    j["d_ffn"] = cfg.d_ffn;
    j["max_len"] = cfg.max_len;
    j["type_embed"] = cfg.type_embed;
    j["family_embed"] = cfg.family_embed;
    j["feature_map"] = cfg.feature_map;
    j["seed"] = cfg.seed;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    ModelConfig cfg;
    const std::string task = j.at("task").get<std::string>();
    if (task == "conditional")
        cfg.task = Task::Conditional;
    else if (task == "unconditional")
        cfg.task = Task::Unconditional;
    else
        throw model_error("config: unknown task " + task);
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ffn = j.at("d_ffn").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.type_embed = j.at("type_embed").get<std::vector<int>>();
    cfg.family_embed = j.at("family_embed").get<int>();
    cfg.feature_map = j.at("feature_map").get<std::string>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

namespace detail {

std::string checkpoint_header(const ModelConfig& cfg, const std::string& vocab_hash,
                              long long step, const std::vector<ArrayDir>& arrays) {
    ordered_json j;
    j["format_version"] = 1;
    j["config"] = ordered_json::parse(model_config_to_json(cfg));
    j["vocab_hash"] = vocab_hash;
    j["step"] = step;
    ordered_json dir = ordered_json::array();
    for (const ArrayDir& a : arrays)
        dir.push_back({{"name", a.name}, {"rows", a.rows}, {"cols", a.cols}});
    j["arrays"] = std::move(dir);
    return j.dump();
}

ParsedHeader parse_checkpoint_header(const std::string& text) {
    const json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw model_error("checkpoint: header is not valid JSON");
    if (j.at("format_version").get<int>() != 1)
        throw model_error("checkpoint: unsupported format version");
    ParsedHeader out;
    out.config = model_config_from_json(j.at("config").dump());
    out.vocab_hash = j.at("vocab_hash").get<std::string>();
    out.step = j.at("step").get<long long>();
    for (const json& a : j.at("arrays"))
        out.arrays.push_back({a.at("name").get<std::string>(), a.at("rows").get<std::int64_t>(),
                              a.at("cols").get<std::int64_t>()});
    return out;
}

void write_f32(std::ostream& out, const float* data, std::size_t n) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

void read_f32(std::istream& in, float* data, std::size_t n) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw model_error("checkpoint: truncated array data");
}

}  // namespace detail

}  // namespace cpword
