#include "treecrf/runconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "treecrf/parallel.hpp"

namespace treecrf {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw std::invalid_argument("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw std::invalid_argument("config key '" + key + "': expected number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config key '" + key + "': expected boolean, got '" + v + "'");
}

void expect_one_of(const std::string& key, const std::string& v,
                   std::initializer_list<const char*> allowed) {
    for (const char* a : allowed)
        if (v == a) return;
    std::string msg = "config key '" + key + "': '" + v + "' is not one of {";
    bool first = true;
    for (const char* a : allowed) {
        if (!first) msg += ", ";
        msg += a;
        first = false;
    }
    throw std::invalid_argument(msg + "}");
}

}  // namespace

int RunConfig::resolved_threads() const { return threads > 0 ? threads : default_thread_count(); }

BinarizeDirection RunConfig::binarize_direction() const {
    return binarize == "right" ? BinarizeDirection::Right : BinarizeDirection::Left;
}

PreterminalPolicy RunConfig::preterminal_policy() const {
    if (preterminals == "keep") return PreterminalPolicy::Keep;
    if (preterminals == "drop") return PreterminalPolicy::Drop;
    return PreterminalPolicy::Auto;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
    if (key == "model") {
        model_path = value;
    } else if (key == "input") {
        input_path = value;
    } else if (key == "output") {
        output_path = value;
    } else if (key == "gold") {
        gold_path = value;
    } else if (key == "train") {
        train_path = value;
    } else if (key == "dev") {
        dev_path = value;
    } else if (key == "evalparams") {
        eval_params_path = value;
    } else if (key == "embeddings") {
        embeddings_path = value;
    } else if (key == "decode") {
        expect_one_of(key, value, {"viterbi", "mbr"});
        decode = value;
    } else if (key == "stage") {
        expect_one_of(key, value, {"two", "one"});
        stage = value;
    } else if (key == "loss") {
        expect_one_of(key, value, {"crf", "maxmargin"});
        loss = value;
    } else if (key == "binarize") {
        expect_one_of(key, value, {"left", "right"});
        binarize = value;
    } else if (key == "preterminals") {
        expect_one_of(key, value, {"auto", "keep", "drop"});
        preterminals = value;
    } else if (key == "seed") {
        seed = static_cast<std::uint64_t>(std::stoull(value));
    } else if (key == "threads") {
        threads = to_int(key, value);
    } else if (key == "batch_words") {
        train.batch_words = to_int(key, value);
        if (train.batch_words < 1) throw std::invalid_argument("batch_words must be positive");
    } else if (key == "max_epochs") {
        train.max_epochs = to_int(key, value);
        if (train.max_epochs < 1) throw std::invalid_argument("max_epochs must be positive");
    } else if (key == "patience") {
        train.patience = to_int(key, value);
        if (train.patience < 0) throw std::invalid_argument("patience must be >= 0");
    } else if (key == "dropout") {
        train.dropout = to_double(key, value);
        if (train.dropout < 0.0 || train.dropout >= 1.0)
            throw std::invalid_argument("dropout must be in [0, 1)");
    } else if (key == "margin") {
        train.margin = to_double(key, value);
    } else if (key == "label_loss_weight") {
        train.label_loss_weight = to_double(key, value);
    } else if (key == "singleton_unk_prob") {
        train.singleton_unk_prob = to_double(key, value);
    } else if (key == "lr") {
        train.optimizer.lr = to_double(key, value);
    } else if (key == "beta1") {
        train.optimizer.beta1 = to_double(key, value);
    } else if (key == "beta2") {
        train.optimizer.beta2 = to_double(key, value);
    } else if (key == "epsilon") {
        train.optimizer.epsilon = to_double(key, value);
    } else if (key == "lr_decay") {
        train.optimizer.lr_decay = to_double(key, value);
    } else if (key == "decay_steps") {
        train.optimizer.decay_steps = to_int(key, value);
    } else if (key == "clip_norm") {
        train.optimizer.clip_norm = to_double(key, value);
    } else if (key == "word_dim") {
        scorer.word_dim = to_int(key, value);
    } else if (key == "char_dim") {
        scorer.char_dim = to_int(key, value);
    } else if (key == "char_hidden") {
        scorer.char_hidden = to_int(key, value);
    } else if (key == "lstm_layers") {
        scorer.lstm_layers = to_int(key, value);
    } else if (key == "lstm_hidden") {
        scorer.lstm_hidden = to_int(key, value);
    } else if (key == "mlp_span_dim") {
        scorer.mlp_span_dim = to_int(key, value);
    } else if (key == "mlp_label_dim") {
        scorer.mlp_label_dim = to_int(key, value);
    } else if (key == "minus_hidden_dim") {
        scorer.minus_hidden_dim = to_int(key, value);
    } else if (key == "minus_features") {
        scorer.minus_features = to_bool(key, value);
    } else {
        throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

std::string RunConfig::echo_json() const {
    nlohmann::json j;
    j["model"] = model_path;
    j["input"] = input_path;
    j["output"] = output_path;
    j["gold"] = gold_path;
    j["train"] = train_path;
    j["dev"] = dev_path;
    j["evalparams"] = eval_params_path;
    j["embeddings"] = embeddings_path;
    j["decode"] = decode;
    j["stage"] = stage;
    j["loss"] = loss;
    j["binarize"] = binarize;
    j["preterminals"] = preterminals;
    j["seed"] = seed;
    j["threads"] = resolved_threads();
    j["batch_words"] = train.batch_words;
    j["max_epochs"] = train.max_epochs;
    j["patience"] = train.patience;
    j["dropout"] = train.dropout;
    j["margin"] = train.margin;
    j["label_loss_weight"] = train.label_loss_weight;
    j["singleton_unk_prob"] = train.singleton_unk_prob;
    j["lr"] = train.optimizer.lr;
    j["beta1"] = train.optimizer.beta1;
    j["beta2"] = train.optimizer.beta2;
    j["epsilon"] = train.optimizer.epsilon;
    j["lr_decay"] = train.optimizer.lr_decay;
    j["decay_steps"] = train.optimizer.decay_steps;
    j["clip_norm"] = train.optimizer.clip_norm;
    j["word_dim"] = scorer.word_dim;
    j["char_dim"] = scorer.char_dim;
    j["char_hidden"] = scorer.char_hidden;
    j["lstm_layers"] = scorer.lstm_layers;
    j["lstm_hidden"] = scorer.lstm_hidden;
    j["mlp_span_dim"] = scorer.mlp_span_dim;
    j["mlp_label_dim"] = scorer.mlp_label_dim;
    j["minus_hidden_dim"] = scorer.minus_hidden_dim;
    j["minus_features"] = scorer.minus_features;
    nlohmann::json wrap;
    wrap["config"] = j;
    return wrap.dump();
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config file line " + std::to_string(line_no) +
                                     ": expected key = value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

RunConfig resolve_config(const std::string& config_path,
                         const std::map<std::string, std::string>& flag_overrides,
                         const char* env_prefix) {
    RunConfig cfg;
    if (!config_path.empty())
        for (const auto& [k, v] : read_config_file(config_path)) cfg.apply(k, v);

    // Environment: TREECRF_<KEY>, key uppercased.
    static const char* kKeys[] = {
        "model",       "input",        "output",       "gold",          "train",
        "dev",         "evalparams",   "embeddings",   "decode",        "stage",
        "loss",        "binarize",     "preterminals", "seed",          "threads",
        "batch_words", "max_epochs",   "patience",     "dropout",       "margin",
        "label_loss_weight", "singleton_unk_prob", "lr", "beta1",       "beta2",
        "epsilon",     "lr_decay",     "decay_steps",  "clip_norm",     "word_dim",
        "char_dim",    "char_hidden",  "lstm_layers",  "lstm_hidden",   "mlp_span_dim",
        "mlp_label_dim", "minus_hidden_dim", "minus_features"};
    for (const char* key : kKeys) {
        std::string env_name = env_prefix;
        for (const char* p = key; *p; ++p)
            env_name += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
        if (const char* v = std::getenv(env_name.c_str())) cfg.apply(key, v);
    }

    for (const auto& [k, v] : flag_overrides) cfg.apply(k, v);
    return cfg;
}

}  // namespace treecrf
