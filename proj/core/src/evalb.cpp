#include "treecrf/evalb.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace treecrf {

namespace {

struct SpanKey {
    int begin;
    int end;
    std::string label;  // empty in unlabeled mode

    bool operator<(const SpanKey& o) const {
        if (begin != o.begin) return begin < o.begin;
        if (end != o.end) return end < o.end;
        return label < o.label;
    }
};

// Counted constituents of one tree after the ignore rules.
std::map<SpanKey, long long> counted_spans(const ConstTree& tree, const std::vector<std::string>& tokens,
                                           const EvalParams& params, bool labeled) {
    std::vector<Constituent> cons = tree_constituents(tree.root);

    std::vector<int> remap;  // token index -> compacted index, -1 for deleted
    int kept = 0;
    if (params.punct_mode == PunctMode::Delete) {
        remap.resize(tokens.size());
        for (std::size_t t = 0; t < tokens.size(); ++t)
            remap[t] = params.punct_tokens.count(tokens[t]) ? -1 : kept++;
    }

    std::map<SpanKey, long long> out;
    for (std::size_t idx = 0; idx < cons.size(); ++idx) {
        const Constituent& c = cons[idx];
        if (idx == 0 && params.ignore_labels.count(c.label)) continue;  // root constituent
        int begin = c.begin, end = c.end;
        if (params.punct_mode == PunctMode::Width1) {
            if (begin == end && params.punct_tokens.count(tokens[begin])) continue;
        } else {
            while (begin <= end && remap[begin] < 0) ++begin;
            while (end >= begin && remap[end] < 0) --end;
            if (begin > end) continue;  // covered only punctuation
            begin = remap[begin];
            end = remap[end];
        }
        SpanKey key{begin, end, labeled ? params.canonical(c.label) : std::string()};
        ++out[key];
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void EvalParams::add_equivalence_set(const std::vector<std::string>& labels) {
    if (labels.empty()) return;
    // Merge with any class the members already belong to.
    std::string rep = canonical(labels.front());
    for (const std::string& l : labels) equivalence[l] = rep;
}

const std::string& EvalParams::canonical(const std::string& label) const {
    auto it = equivalence.find(label);
    return it == equivalence.end() ? label : it->second;
}

EvalParams EvalParams::english_defaults() {
    EvalParams p;
    p.ignore_labels = {"TOP", "S1"};
    p.punct_tokens = {":", "``", "''", ".", "?", "!"};
    p.empty_labels = {"-NONE-"};
    p.add_equivalence_set({"ADVP", "PRT"});
    return p;
}

PRF evalb_score(const std::vector<ConstTree>& gold, const std::vector<ConstTree>& pred,
                const EvalParams& params, bool labeled) {
    if (gold.size() != pred.size())
        throw std::runtime_error("evalb: corpus size mismatch (gold " + std::to_string(gold.size()) +
                                 ", predicted " + std::to_string(pred.size()) + ")");
    PRF prf;
    for (std::size_t s = 0; s < gold.size(); ++s) {
        std::vector<std::string> gold_tokens = tree_tokens(gold[s].root);
        std::vector<std::string> pred_tokens = tree_tokens(pred[s].root);
        if (gold_tokens != pred_tokens)
            throw std::runtime_error("evalb: token mismatch at sentence " + std::to_string(s));

        auto g = counted_spans(gold[s], gold_tokens, params, labeled);
        auto p = counted_spans(pred[s], pred_tokens, params, labeled);
        for (const auto& [key, gc] : g) {
            prf.gold += gc;
            auto it = p.find(key);
            if (it != p.end()) prf.matched += std::min(gc, it->second);
        }
        for (const auto& [key, pc] : p) prf.predicted += pc;
    }
    return prf;
}

EvalParams read_eval_params(std::istream& in) {
    EvalParams params;
    params.punct_mode = PunctMode::Width1;
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
            throw std::runtime_error("eval params line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key == "ignore_label") {
            params.ignore_labels.insert(value);
        } else if (key == "punct_token") {
            params.punct_tokens.insert(value);
        } else if (key == "empty_label") {
            params.empty_labels.insert(value);
        } else if (key == "equivalent") {
            std::istringstream ss(value);
            std::vector<std::string> labels;
            std::string l;
            while (ss >> l) labels.push_back(l);
            params.add_equivalence_set(labels);
        } else if (key == "punct_mode") {
            if (value == "width1")
                params.punct_mode = PunctMode::Width1;
            else if (value == "delete")
                params.punct_mode = PunctMode::Delete;
            else
                throw std::runtime_error("eval params line " + std::to_string(line_no) +
                                         ": punct_mode must be width1 or delete");
        } else {
            throw std::runtime_error("eval params line " + std::to_string(line_no) + ": unknown key '" +
                                     key + "'");
        }
    }
    return params;
}

EvalParams read_eval_params_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open eval params file: " + path);
    return read_eval_params(in);
}

}  // namespace treecrf
