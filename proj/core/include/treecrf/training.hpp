#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "treecrf/chart.hpp"
#include "treecrf/evalb.hpp"
#include "treecrf/scorer.hpp"
#include "treecrf/treebank.hpp"

namespace treecrf {

// splitmix64-style mixing for derived seeds; per-sentence RNGs are seeded
// from (seed, epoch, sentence) so results do not depend on thread schedule.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1) + 0xBF58476D1CE4E5B9ull * (c + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

enum class LossMode { TwoStageCrf, OneStageCrf, MaxMargin };
enum class StageMode { TwoStage, OneStage };

struct LabeledSpan {
    int begin = 0;
    int end = 0;
    int label = 0;
};

// Gold views of a CNF tree as consumed by the losses.
struct GoldTree {
    std::vector<std::string> tokens;
    UnlabeledTree bracketing;           // all 2n-1 spans
    std::vector<LabeledSpan> labeled;   // all 2n-1, label ids in the vocab
};
GoldTree gold_tree(const BinaryTree& tree, const LabelVocab& labels);

// ---- losses; every result carries analytic adjoints of the inputs ----

struct BracketLoss {
    std::vector<double> losses;  // per instance
    SpanChart adjoints;          // marginal minus gold indicator, width >= 2 cells
};
BracketLoss crf_bracket_loss(const SpanChart& scores, const std::vector<UnlabeledTree>& gold,
                             int threads = 1);

struct LabelLoss {
    std::vector<double> losses;  // per instance, mean over that instance's constituents
    LabelGrid adjoints;
};
LabelLoss label_loss(const LabelGrid& scores, const std::vector<std::vector<LabeledSpan>>& gold);

inline double total_loss(double bracket, double label) { return bracket + label; }

struct OneStageLoss {
    std::vector<double> losses;
    LabelGrid adjoints;
};
// CRF over labeled bracketings of width >= 2: logZ runs inside over the
// logsumexp label aggregate.
OneStageLoss one_stage_crf_loss(const LabelGrid& scores,
                                const std::vector<std::vector<LabeledSpan>>& gold,
                                int threads = 1);

// Structured hinge with Hamming cost `margin` per wrong span;
// loss-augmented inference is a single cky call.
BracketLoss max_margin_loss(const SpanChart& scores, const std::vector<UnlabeledTree>& gold,
                            double margin, int threads = 1);

// Shuffles sentence indices, groups them greedily under the word budget
// (an over-long sentence forms its own batch), and sorts each batch by
// descending length.
std::vector<std::vector<int>> make_batches(const std::vector<int>& lengths, int batch_words,
                                           std::uint64_t seed);

// ---- optimizer ----

struct AdamConfig {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.9;
    double epsilon = 1e-12;
    double lr_decay = 0.75;       // multiplied in every decay_steps steps
    long long decay_steps = 5000;
    double clip_norm = 5.0;       // global norm; 0 disables
};

struct AdamState {
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m, v;  // aligned with param_refs order
};
AdamState init_adam(ModelParams& params);

// Bias-corrected adaptive-moment update; the step-t learning rate is
// lr * lr_decay^floor((t-1) / decay_steps). Gradients are clipped to
// clip_norm (jointly, by global norm) before the update.
void optimizer_step(ModelParams& params, Gradients& grads, AdamState& state,
                    const AdamConfig& config);

// ---- training loop ----

struct TrainConfig {
    int batch_words = 5000;
    int max_epochs = 1000;
    int patience = 100;
    double dropout = 0.33;  // applied to both embedding and LSTM dropout
    LossMode loss_mode = LossMode::TwoStageCrf;
    double margin = 1.0;
    double label_loss_weight = 1.0;
    double singleton_unk_prob = 0.0;  // train-time unknown replacement for frequency-1 words
    bool dev_mbr = false;             // decode dev with marginals instead of raw scores
    std::string pretrained_embeddings;  // optional GloVe-style text file
    AdamConfig optimizer;
    std::uint64_t seed = 1;
    int threads = 1;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_p = 0.0, dev_r = 0.0, dev_f = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    ModelParams params;  // best dev-F checkpoint
    AdamState opt_state;  // optimizer state at the checkpoint
    std::vector<EpochRecord> log;
    int best_epoch = 0;
    double best_f = -1.0;
    bool diverged = false;
};

// Full loop: batches, forward, loss, analytic adjoints, backward, update;
// labeled dev F selects the checkpoint; stops after `patience` epochs
// without a new peak. A NaN loss aborts with the last good checkpoint.
// Each epoch is appended to `log_stream` (when given) as one JSON line.
TrainResult train(const std::vector<BinaryTree>& train_trees, const std::vector<ConstTree>& dev_trees,
                  const LabelVocab& labels, const ScorerConfig& scorer_config,
                  const TrainConfig& config, const EvalParams& eval_params,
                  std::ostream* log_stream = nullptr);

// ---- decoding pipeline ----

struct ScoredBatch {
    SpanChart span_chart;
    LabelGrid label_grid;
    std::vector<int> sentence_ids;  // positions in the input corpus
};

// Frozen-parameter scoring of a corpus into chart batches grouped under the
// word budget, input order preserved.
std::vector<ScoredBatch> score_corpus(const ModelParams& params,
                                      const std::vector<std::vector<std::string>>& sentences,
                                      int threads, int batch_words = 5000);

// Scores, decodes (cky over raw scores or over marginals), labels each
// predicted span by the label argmax, and recovers n-ary trees.
std::vector<ConstTree> parse_corpus(const ModelParams& params,
                                    const std::vector<std::vector<std::string>>& sentences,
                                    StageMode stage, bool mbr, int threads, int batch_words = 5000);

// Predicted CNF tree for one chart instance: spans from the bracketing,
// label strings from per-span argmaxes.
BinaryTree assemble_tree(const UnlabeledTree& spans, const std::vector<std::string>& tokens,
                         const std::vector<std::string>& span_labels);

std::string epoch_record_json(const EpochRecord& rec);

}  // namespace treecrf
