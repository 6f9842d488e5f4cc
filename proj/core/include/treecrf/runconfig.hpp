#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "treecrf/scorer.hpp"
#include "treecrf/training.hpp"

namespace treecrf {

// Resolved run settings. Precedence: command-line flags > environment
// variables (TREECRF_<KEY>) > config file > built-in defaults.
struct RunConfig {
    std::string model_path;
    std::string input_path;
    std::string output_path;
    std::string gold_path;
    std::string train_path;
    std::string dev_path;
    std::string eval_params_path;
    std::string embeddings_path;

    std::string decode = "viterbi";     // viterbi | mbr
    std::string stage = "two";          // two | one
    std::string loss = "crf";           // crf | maxmargin
    std::string binarize = "left";      // left | right
    std::string preterminals = "auto";  // auto | keep | drop

    std::uint64_t seed = 1;
    int threads = 0;  // 0: all available cores

    TrainConfig train;
    ScorerConfig scorer;

    int resolved_threads() const;
    BinarizeDirection binarize_direction() const;
    PreterminalPolicy preterminal_policy() const;
    bool use_mbr() const { return decode == "mbr"; }
    StageMode stage_mode() const { return stage == "one" ? StageMode::OneStage : StageMode::TwoStage; }

    // Throws std::invalid_argument on an unknown key or a bad value.
    void apply(const std::string& key, const std::string& value);

    std::string echo_json() const;
};

// Line-oriented `key = value` files, '#' comments, blank lines skipped.
std::map<std::string, std::string> read_config_file(const std::string& path);

// Layered resolution over the defaults in RunConfig.
RunConfig resolve_config(const std::string& config_path,
                         const std::map<std::string, std::string>& flag_overrides,
                         const char* env_prefix = "TREECRF_");

}  // namespace treecrf
