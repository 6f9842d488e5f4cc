#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "treecrf/scorer.hpp"
#include "treecrf/training.hpp"

namespace treecrf {

// Allocates all parameter arrays for a configuration without initializing
// their contents; the serializer fills them in.
ModelParams make_params_shell(const ScorerConfig& config, WordVocab words, CharVocab chars,
                              LabelVocab labels);

// Binary container: magic + format version, a JSON block for the
// configuration and vocabularies, then named little-endian float64 arrays.
// An optional optimizer-state section makes the file a training checkpoint.
void save_model(std::ostream& out, const ModelParams& params, const AdamState* opt_state = nullptr);
void save_model_file(const std::string& path, const ModelParams& params,
                     const AdamState* opt_state = nullptr);

// Rejects magic/version mismatches and any array whose name or shape does
// not match the configuration.
ModelParams load_model(std::istream& in, AdamState* opt_state = nullptr);
ModelParams load_model_file(const std::string& path, AdamState* opt_state = nullptr);

// GloVe-style text embeddings (word then values, one per line); rows of
// in-vocabulary words are overwritten. Returns the number of hits.
int load_pretrained_embeddings(const std::string& path, ModelParams& params);

}  // namespace treecrf
