#include "gem/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "gem/error.hpp"

namespace gem::config {
namespace {

namespace pt = boost::property_tree;

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": expected a number, got '" + v + "'");
    }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        const auto x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": expected a non-negative integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key " + key + ": expected true or false, got '" + v + "'");
}

template <std::size_t N>
std::array<double, N> to_list(const std::string& key, const std::string& v) {
    std::array<double, N> out{};
    std::stringstream ss(v);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i == N) throw ConfigError("key " + key + ": expected " + std::to_string(N) + " comma-separated values");
        out[i++] = to_double(key, trim(part));
    }
    if (i != N) throw ConfigError("key " + key + ": expected " + std::to_string(N) + " comma-separated values");
    return out;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <std::size_t N>
std::string list(const std::array<double, N>& a) {
    std::string s;
    for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + num(a[i]);
    return s;
}

struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

using Schema = std::vector<std::pair<std::string, std::vector<std::pair<std::string, Field>>>>;

#define GEM_UINT(member) \
    Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_uint(k, v)); }, \
          [](const RunConfig& c) { return std::to_string(c.member); }}
#define GEM_DOUBLE(member) \
    Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }, \
          [](const RunConfig& c) { return num(c.member); }}
#define GEM_BOOL(member) \
    Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }, \
          [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}
#define GEM_PATH(member) \
    Field{[](RunConfig& c, const std::string&, const std::string& v) { c.member = v; }, \
          [](const RunConfig& c) { return c.member.string(); }}
#define GEM_LIST(member, n) \
    Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_list<n>(k, v); }, \
          [](const RunConfig& c) { return list(c.member); }}

std::vector<std::pair<std::string, Field>> train_fields(train::TrainConfig RunConfig::*which) {
    auto field = [which](auto setter, auto getter) {
        return Field{[which, setter](RunConfig& c, const std::string& k, const std::string& v) { setter(c.*which, k, v); },
                     [which, getter](const RunConfig& c) { return getter(c.*which); }};
    };
    using TC = train::TrainConfig;
    return {
        {"epochs", field([](TC& t, auto& k, auto& v) { t.epochs = to_uint(k, v); }, [](const TC& t) { return std::to_string(t.epochs); })},
        {"batch_size", field([](TC& t, auto& k, auto& v) { t.batch_size = to_uint(k, v); }, [](const TC& t) { return std::to_string(t.batch_size); })},
        {"lr", field([](TC& t, auto& k, auto& v) { t.lr = to_double(k, v); }, [](const TC& t) { return num(t.lr); })},
        {"beta1", field([](TC& t, auto& k, auto& v) { t.beta1 = to_double(k, v); }, [](const TC& t) { return num(t.beta1); })},
        {"beta2", field([](TC& t, auto& k, auto& v) { t.beta2 = to_double(k, v); }, [](const TC& t) { return num(t.beta2); })},
        {"eps", field([](TC& t, auto& k, auto& v) { t.eps = to_double(k, v); }, [](const TC& t) { return num(t.eps); })},
        {"loss_weights", field([](TC& t, auto& k, auto& v) { t.loss_weights = to_list<2>(k, v); }, [](const TC& t) { return list(t.loss_weights); })},
        {"mlm_rate", field([](TC& t, auto& k, auto& v) { t.mlm_rate = to_double(k, v); }, [](const TC& t) { return num(t.mlm_rate); })},
        {"mlm_split", field([](TC& t, auto& k, auto& v) { t.mlm_split = to_list<3>(k, v); }, [](const TC& t) { return list(t.mlm_split); })},
    };
}

const Schema& schema() {
    static const Schema s = [] {
        Schema out;
        out.push_back({"run",
                       {{"seed", GEM_UINT(seed)},
                        {"out_dir", GEM_PATH(out_dir)},
                        {"min_freq", GEM_UINT(min_freq)},
                        {"split_ratios", GEM_LIST(split_ratios, 3)}}});
        out.push_back({"paths",
                       {{"cvd_lexicon", GEM_PATH(cvd_lexicon)},
                        {"symptom_lexicon", GEM_PATH(symptom_lexicon)},
                        {"gender_lexicon", GEM_PATH(gender_lexicon)},
                        {"corpus", GEM_PATH(corpus)}}});
        out.push_back({"generator",
                       {{"n_items", GEM_UINT(generator.n_items)},
                        {"symptom_balance", GEM_LIST(generator.symptom_balance, 4)},
                        {"gender_balance", GEM_LIST(generator.gender_balance, 2)},
                        {"cue_density", GEM_DOUBLE(generator.cue_density)},
                        {"interaction_mode", GEM_BOOL(generator.interaction_mode)},
                        {"noise_vocab_size", GEM_UINT(generator.noise_vocab_size)},
                        {"seed", GEM_UINT(generator.seed)},
                        {"min_filler_sentences", GEM_UINT(generator.min_filler_sentences)},
                        {"max_filler_sentences", GEM_UINT(generator.max_filler_sentences)},
                        {"cue_zipf_exponent", GEM_DOUBLE(generator.cue_zipf_exponent)},
                        {"shorthand_rate", GEM_DOUBLE(generator.shorthand_rate)},
                        {"comment_fraction", GEM_DOUBLE(generator.comment_fraction)},
                        {"off_topic_rate", GEM_DOUBLE(generator.off_topic_rate)},
                        {"gender_label_noise", GEM_DOUBLE(generator.gender_label_noise)},
                        {"gender_channels", GEM_BOOL(generator.gender_channels)}}});
        out.push_back({"model",
                       {{"n_layers", GEM_UINT(model.n_layers)},
                        {"d", GEM_UINT(model.d)},
                        {"n_heads", GEM_UINT(model.n_heads)},
                        {"d_ffn", GEM_UINT(model.d_ffn)},
                        {"max_len", GEM_UINT(model.max_len)},
                        {"dropout_p", GEM_DOUBLE(model.dropout_p)},
                        {"variant",
                         Field{[](RunConfig& c, const std::string&, const std::string& v) { c.model.variant = model::parse_variant(v); },
                               [](const RunConfig& c) { return std::string(model::to_string(c.model.variant)); }}},
                        {"fusion_value_source",
                         Field{[](RunConfig& c, const std::string&, const std::string& v) {
                                   c.model.fusion_value_source = model::parse_fusion_value_source(v);
                               },
                               [](const RunConfig& c) { return std::string(model::to_string(c.model.fusion_value_source)); }}},
                        {"symptom_head_input",
                         Field{[](RunConfig& c, const std::string&, const std::string& v) {
                                   c.model.symptom_head_input = model::parse_symptom_head_input(v);
                               },
                               [](const RunConfig& c) { return std::string(model::to_string(c.model.symptom_head_input)); }}}}});
        out.push_back({"train", train_fields(&RunConfig::train)});
        out.push_back({"pretrain", train_fields(&RunConfig::pretrain)});
        return out;
    }();
    return s;
}

}  // namespace

RunConfig preset(std::string_view name) {
    RunConfig c;
    c.train = train::finetune_preset(name);
    c.pretrain = train::pretrain_preset(name);
    if (name == "paper") c.model.dropout_p = 0.2;
    return c;
}

RunConfig parse_run_config(const std::string& ini_text, RunConfig base) {
    pt::ptree tree;
    try {
        std::istringstream in(ini_text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("configuration: ") + e.what());
    }
    const auto& sch = schema();
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("configuration: key '" + section + "' must appear inside a section");
        const auto sec = std::find_if(sch.begin(), sch.end(), [&](const auto& s) { return s.first == section; });
        if (sec == sch.end()) throw ConfigError("configuration: unknown section [" + section + "]");
        for (const auto& [key, value] : body) {
            const auto f = std::find_if(sec->second.begin(), sec->second.end(), [&](const auto& kv) { return kv.first == key; });
            if (f == sec->second.end()) throw ConfigError("configuration: unknown key '" + key + "' in [" + section + "]");
            f->second.set(base, section + "." + key, trim(value.data()));
        }
    }
    validate(base);
    return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open configuration " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_run_config(ss.str(), std::move(base));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string to_ini(const RunConfig& c) {
    std::string out;
    for (const auto& [section, fields] : schema()) {
        out += "[" + section + "]\n";
        for (const auto& [key, field] : fields) out += key + " = " + field.get(c) + "\n";
        out += "\n";
    }
    return out;
}

void validate(const RunConfig& c) {
    corpus::validate(c.generator);
    train::validate(c.train);
    train::validate(c.pretrain);
    model::ModelConfig m = c.model;
    if (m.vocab_size == 0) m.vocab_size = static_cast<std::size_t>(text::Vocabulary::first_content_id()) + 1;
    model::validate(m);
    double s = 0.0;
    for (double r : c.split_ratios) {
        if (!(r >= 0.0)) throw ConfigError("split_ratios must be non-negative");
        s += r;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ConfigError("split_ratios must sum to 1");
    if (c.min_freq < 1) throw ConfigError("min_freq must be at least 1");
}

}  // namespace gem::config
