#pragma once

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "treecrf/tree.hpp"

namespace treecrf {

// Labeled bracketing counts with the usual ratio conventions.
struct PRF {
    long long matched = 0;
    long long predicted = 0;
    long long gold = 0;

    double precision() const { return predicted == 0 ? 1.0 : double(matched) / double(predicted); }
    double recall() const { return gold == 0 ? 1.0 : double(matched) / double(gold); }
    double fscore() const {
        double p = precision(), r = recall();
        return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    }
};

// How punctuation-marked tokens are handled: Width1 excludes single-token
// constituents over a punctuation token; Delete removes the tokens before
// span computation (classic evalb behavior).
enum class PunctMode { Width1, Delete };

struct EvalParams {
    std::unordered_set<std::string> ignore_labels;  // root constituents to skip
    std::unordered_set<std::string> punct_tokens;
    std::unordered_set<std::string> empty_labels;               // for preprocessing
    std::unordered_map<std::string, std::string> equivalence;   // label -> class representative
    PunctMode punct_mode = PunctMode::Width1;

    void add_equivalence_set(const std::vector<std::string>& labels);
    const std::string& canonical(const std::string& label) const;

    static EvalParams english_defaults();
};

// Corpus-level labeled (or unlabeled) bracketing match. Gold and predicted
// lists must be aligned over identical token sequences; a mismatch throws
// with the offending sentence index. Duplicate constituents match with
// multiplicity.
PRF evalb_score(const std::vector<ConstTree>& gold, const std::vector<ConstTree>& pred,
                const EvalParams& params = EvalParams::english_defaults(), bool labeled = true);

// Line-oriented `key = value` file: ignore_label, punct_token, empty_label,
// equivalent (space-separated set), punct_mode. '#' starts a comment.
EvalParams read_eval_params(std::istream& in);
EvalParams read_eval_params_file(const std::string& path);

}  // namespace treecrf
