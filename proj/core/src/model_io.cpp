#include "treecrf/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace treecrf {

namespace {

constexpr char kMagic[8] = {'T', 'C', 'R', 'F', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian; byte swapping is not implemented");

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw std::runtime_error("model file: truncated");
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw std::runtime_error("model file: truncated");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    std::uint32_t len = read_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw std::runtime_error("model file: truncated");
    return s;
}

void write_array(std::ostream& out, const std::string& name, const double* data, std::uint64_t rows,
                 std::uint64_t cols) {
    write_string(out, name);
    write_u64(out, rows);
    write_u64(out, cols);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(rows * cols * 8));
}

nlohmann::json config_json(const ModelParams& params) {
    const ScorerConfig& c = params.config;
    nlohmann::json j;
    j["word_dim"] = c.word_dim;
    j["char_dim"] = c.char_dim;
    j["char_hidden"] = c.char_hidden;
    j["lstm_layers"] = c.lstm_layers;
    j["lstm_hidden"] = c.lstm_hidden;
    j["mlp_span_dim"] = c.mlp_span_dim;
    j["mlp_label_dim"] = c.mlp_label_dim;
    j["minus_hidden_dim"] = c.minus_hidden_dim;
    j["emb_dropout"] = c.emb_dropout;
    j["lstm_dropout"] = c.lstm_dropout;
    j["minus_features"] = c.minus_features;
    j["words"] = params.words.words;
    j["chars"] = params.chars.chars;
    j["labels"] = params.labels.labels;
    return j;
}

}  // namespace

ModelParams make_params_shell(const ScorerConfig& config, WordVocab words, CharVocab chars,
                              LabelVocab labels) {
    ModelParams p;
    p.config = config;
    p.words = std::move(words);
    p.chars = std::move(chars);
    p.labels = std::move(labels);
    p.word_emb = Matrix::Zero(p.words.size(), config.word_dim);
    p.char_emb = Matrix::Zero(p.chars.size(), config.char_dim);
    auto lstm_shell = [](int in, int hidden) {
        LstmWeights w;
        w.w_ih = Matrix::Zero(4 * hidden, in);
        w.w_hh = Matrix::Zero(4 * hidden, hidden);
        w.bias = Vector::Zero(4 * hidden);
        return w;
    };
    p.char_fwd = lstm_shell(config.char_dim, config.char_hidden);
    p.char_bwd = lstm_shell(config.char_dim, config.char_hidden);
    for (int l = 0; l < config.lstm_layers; ++l) {
        int in = l == 0 ? config.input_dim() : 2 * config.lstm_hidden;
        p.context.push_back(lstm_shell(in, config.lstm_hidden));
        p.context.push_back(lstm_shell(in, config.lstm_hidden));
    }
    auto mlp_shell = [](int out, int in) {
        return Mlp{Matrix::Zero(out, in), Vector::Zero(out)};
    };
    int ctx = config.context_dim();
    p.span_left = mlp_shell(config.mlp_span_dim, ctx);
    p.span_right = mlp_shell(config.mlp_span_dim, ctx);
    p.label_left = mlp_shell(config.mlp_label_dim, ctx);
    p.label_right = mlp_shell(config.mlp_label_dim, ctx);
    p.span_biaffine = Matrix::Zero(config.mlp_span_dim + 1, config.mlp_span_dim);
    for (int l = 0; l < p.labels.size(); ++l)
        p.label_biaffine.push_back(Matrix::Zero(config.mlp_label_dim + 1, config.mlp_label_dim));
    p.minus_hidden = mlp_shell(config.minus_hidden_dim, ctx);
    p.minus_out = Mlp{Matrix::Zero(1, config.minus_hidden_dim), Vector::Zero(1)};
    return p;
}

void save_model(std::ostream& out, const ModelParams& params, const AdamState* opt_state) {
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    write_string(out, config_json(params).dump());

    auto refs = param_refs(const_cast<ModelParams&>(params));
    write_u32(out, static_cast<std::uint32_t>(refs.size()));
    for (const ParamRef& r : refs)
        write_array(out, r.name, r.data, static_cast<std::uint64_t>(r.rows),
                    static_cast<std::uint64_t>(r.cols));

    out.put(opt_state ? 1 : 0);
    if (opt_state) {
        write_u64(out, opt_state->step);
        write_u32(out, static_cast<std::uint32_t>(refs.size()));
        for (std::size_t k = 0; k < refs.size(); ++k) {
            write_array(out, "m." + refs[k].name, opt_state->m[k].data(),
                        static_cast<std::uint64_t>(opt_state->m[k].size()), 1);
            write_array(out, "v." + refs[k].name, opt_state->v[k].data(),
                        static_cast<std::uint64_t>(opt_state->v[k].size()), 1);
        }
    }
    if (!out) throw std::runtime_error("model file: write failed");
}

void save_model_file(const std::string& path, const ModelParams& params, const AdamState* opt_state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open model file for writing: " + path);
    save_model(out, params, opt_state);
}

ModelParams load_model(std::istream& in, AdamState* opt_state) {
    char magic[8] = {};
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("model file: bad magic string");
    std::uint32_t version = read_u32(in);
    if (version != kVersion)
        throw std::runtime_error("model file: unsupported format version " + std::to_string(version));

    nlohmann::json j = nlohmann::json::parse(read_string(in));
    ScorerConfig config;
    config.word_dim = j.at("word_dim").get<int>();
    config.char_dim = j.at("char_dim").get<int>();
    config.char_hidden = j.at("char_hidden").get<int>();
    config.lstm_layers = j.at("lstm_layers").get<int>();
    config.lstm_hidden = j.at("lstm_hidden").get<int>();
    config.mlp_span_dim = j.at("mlp_span_dim").get<int>();
    config.mlp_label_dim = j.at("mlp_label_dim").get<int>();
    config.minus_hidden_dim = j.at("minus_hidden_dim").get<int>();
    config.emb_dropout = j.at("emb_dropout").get<double>();
    config.lstm_dropout = j.at("lstm_dropout").get<double>();
    config.minus_features = j.at("minus_features").get<bool>();

    WordVocab words;
    words.words = j.at("words").get<std::vector<std::string>>();
    for (std::size_t k = 0; k < words.words.size(); ++k)
        words.index.emplace(words.words[k], static_cast<int>(k));
    CharVocab chars;
    chars.chars = j.at("chars").get<std::vector<std::uint32_t>>();
    for (std::size_t k = 0; k < chars.chars.size(); ++k)
        chars.index.emplace(chars.chars[k], static_cast<int>(k));
    LabelVocab labels;
    for (const std::string& l : j.at("labels").get<std::vector<std::string>>()) labels.add(l);

    ModelParams params = make_params_shell(config, std::move(words), std::move(chars), std::move(labels));
    auto refs = param_refs(params);
    std::unordered_map<std::string, std::size_t> by_name;
    for (std::size_t k = 0; k < refs.size(); ++k) by_name.emplace(refs[k].name, k);

    std::uint32_t count = read_u32(in);
    if (count != refs.size()) throw std::runtime_error("model file: parameter array count mismatch");
    std::vector<bool> seen(refs.size(), false);
    for (std::uint32_t k = 0; k < count; ++k) {
        std::string name = read_string(in);
        std::uint64_t rows = read_u64(in);
        std::uint64_t cols = read_u64(in);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("model file: unknown array '" + name + "'");
        const ParamRef& r = refs[it->second];
        if (rows != static_cast<std::uint64_t>(r.rows) || cols != static_cast<std::uint64_t>(r.cols))
            throw std::runtime_error("model file: dimension mismatch for '" + name + "'");
        in.read(reinterpret_cast<char*>(r.data), static_cast<std::streamsize>(rows * cols * 8));
        if (!in) throw std::runtime_error("model file: truncated array '" + name + "'");
        seen[it->second] = true;
    }
    for (std::size_t k = 0; k < refs.size(); ++k)
        if (!seen[k]) throw std::runtime_error("model file: missing array '" + refs[k].name + "'");

    int has_opt = in.get();
    if (has_opt == 1) {
        AdamState state;
        state.step = read_u64(in);
        std::uint32_t n = read_u32(in);
        if (n != refs.size()) throw std::runtime_error("model file: optimizer state count mismatch");
        state.m.resize(refs.size());
        state.v.resize(refs.size());
        for (std::size_t k = 0; k < refs.size(); ++k) {
            for (auto* vecp : {&state.m[k], &state.v[k]}) {
                std::string name = read_string(in);
                std::uint64_t rows = read_u64(in);
                read_u64(in);  // cols, always 1
                if (rows != static_cast<std::uint64_t>(refs[k].size()))
                    throw std::runtime_error("model file: optimizer state size mismatch for '" + name +
                                             "'");
                vecp->resize(rows);
                in.read(reinterpret_cast<char*>(vecp->data()), static_cast<std::streamsize>(rows * 8));
                if (!in) throw std::runtime_error("model file: truncated optimizer state");
            }
        }
        if (opt_state) *opt_state = std::move(state);
    } else if (has_opt != 0) {
        throw std::runtime_error("model file: corrupt optimizer-state flag");
    }
    return params;
}

ModelParams load_model_file(const std::string& path, AdamState* opt_state) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    return load_model(in, opt_state);
}

int load_pretrained_embeddings(const std::string& path, ModelParams& params) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embeddings file: " + path);
    std::string line;
    int hits = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        int row = params.words.find(word);
        if (row == WordVocab::kUnk && word != params.words.words[WordVocab::kUnk]) {
            continue;
        }
        Vector v(params.config.word_dim);
        int k = 0;
        double x;
        while (k < params.config.word_dim && (ss >> x)) v[k++] = x;
        if (k != params.config.word_dim)
            throw std::runtime_error("embeddings file: wrong dimension for word '" + word + "'");
        params.word_emb.row(row) = v.transpose();
        ++hits;
    }
    return hits;
}

}  // namespace treecrf
