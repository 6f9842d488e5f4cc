#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "treecrf/treebank.hpp"

namespace treecrf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ScorerConfig {
    int word_dim = 100;
    int char_dim = 50;
    int char_hidden = 50;  // per direction; char representation = 2 * char_hidden
    int lstm_layers = 3;   // 0 bypasses the context encoder (boundary states from inputs)
    int lstm_hidden = 400;  // per direction
    int mlp_span_dim = 500;   // d
    int mlp_label_dim = 100;  // d-bar
    int minus_hidden_dim = 100;
    double emb_dropout = 0.33;
    double lstm_dropout = 0.33;
    bool minus_features = false;  // ablation: s(i,j) = MLP(h_i - h_j) instead of biaffine

    int input_dim() const { return word_dim + 2 * char_hidden; }
    int context_dim() const { return lstm_layers > 0 ? 2 * lstm_hidden : 2 * input_dim(); }
};

// index 0 is padding, index 1 the unknown word.
struct WordVocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    std::vector<std::string> words{"<pad>", "<unk>"};
    std::unordered_map<std::string, int> index;

    int add(const std::string& w);
    int find(const std::string& w) const;
    int size() const { return static_cast<int>(words.size()); }
};

struct CharVocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    std::vector<std::uint32_t> chars{0, 0xFFFD};
    std::unordered_map<std::uint32_t, int> index;

    int add(std::uint32_t cp);
    int find(std::uint32_t cp) const;
    int size() const { return static_cast<int>(chars.size()); }
};

std::vector<std::uint32_t> utf8_codepoints(const std::string& s);

// Gate order in the stacked 4H rows: input, forget, cell, output.
struct LstmWeights {
    Matrix w_ih;  // 4H x in
    Matrix w_hh;  // 4H x H
    Vector bias;  // 4H
};

struct Mlp {
    Matrix w;
    Vector b;
};

struct ModelParams {
    ScorerConfig config;
    WordVocab words;
    CharVocab chars;
    LabelVocab labels;

    Matrix word_emb;  // |V| x word_dim
    Matrix char_emb;  // |C| x char_dim
    LstmWeights char_fwd, char_bwd;
    std::vector<LstmWeights> context;  // fwd/bwd per layer: [f0, b0, f1, b1, ...]
    Mlp span_left, span_right;         // context_dim -> d
    Mlp label_left, label_right;       // context_dim -> d-bar
    Matrix span_biaffine;              // (d+1) x d
    std::vector<Matrix> label_biaffine;  // per label, (d-bar+1) x d-bar
    Mlp minus_hidden;                  // context_dim -> minus_hidden_dim
    Mlp minus_out;                     // minus_hidden_dim -> 1
};

// Gradient buffers with the same shapes as the trainable arrays.
struct Gradients {
    Matrix word_emb, char_emb;
    LstmWeights char_fwd, char_bwd;
    std::vector<LstmWeights> context;
    Mlp span_left, span_right, label_left, label_right;
    Matrix span_biaffine;
    std::vector<Matrix> label_biaffine;
    Mlp minus_hidden, minus_out;

    void add(const Gradients& other);
    void set_zero();
};

struct ParamRef {
    std::string name;
    double* data;
    Eigen::Index rows, cols;

    Eigen::Index size() const { return rows * cols; }
};

// Trainable arrays in a fixed order, shared by the optimizer, the
// serializer and the finite-difference harness.
std::vector<ParamRef> param_refs(ModelParams& params);
std::vector<ParamRef> param_refs(Gradients& grads);

ModelParams init_params(const ScorerConfig& config, WordVocab words, CharVocab chars,
                        LabelVocab labels, std::mt19937_64& rng);
Gradients zero_grads(const ModelParams& params);

// Vocab built from corpus tokens (words and their codepoints).
void build_vocabs(const std::vector<std::vector<std::string>>& sentences, WordVocab& words,
                  CharVocab& chars);

// ---- forward pass with activation recording ----

struct LstmTape {
    Matrix x;  // inputs actually fed to the cell (post input mask), in x T
    Matrix gi, gf, gg, go;  // gate activations, H x T
    Matrix c, h;            // cell and hidden states, H x T
    Vector mask_in, mask_h;  // scaled dropout masks; size 0 in eval mode
};

struct SentenceTape {
    bool recorded = false;
    bool train_mode = false;
    std::vector<int> word_ids;
    std::vector<std::vector<int>> char_ids;
    std::vector<LstmTape> char_tapes;  // fwd/bwd interleaved per word
    std::vector<double> word_scale, char_scale;  // paired-dropout factors per position
    Matrix embed;  // input_dim x n, post paired dropout
    std::vector<LstmTape> layers;  // fwd/bwd per layer; bwd stored in reversed time
    Matrix h;                      // context_dim x n boundary states
    Matrix span_left_pre, span_right_pre, label_left_pre, label_right_pre;
    Matrix span_left, span_right, label_left, label_right;  // post activation
    Matrix minus_pre;  // minus scorer hidden pre-activations, one column per (i, j)
};

struct BoundaryReps {
    Matrix span_left, span_right;    // d x n, one column per position
    Matrix label_left, label_right;  // d-bar x n
};

struct SentenceScores {
    Matrix span;                // n x n, cell (i, j)
    std::vector<Matrix> label;  // per label, n x n
};

// Standalone stage evaluations (deterministic unless train_mode with rng).
Vector char_encode(const ModelParams& params, const std::string& word);
Matrix embed(const ModelParams& params, const std::vector<std::string>& tokens,
             bool train_mode = false, std::mt19937_64* rng = nullptr);
Matrix encode_context(const ModelParams& params, const Matrix& inputs, bool train_mode = false,
                      std::mt19937_64* rng = nullptr);
BoundaryReps boundary_project(const ModelParams& params, const Matrix& h);
Matrix span_scores(const ModelParams& params, const BoundaryReps& reps);
std::vector<Matrix> label_scores(const ModelParams& params, const BoundaryReps& reps);
Matrix minus_span_scores(const ModelParams& params, const Matrix& h);

// Full pipeline. With `tape` non-null every activation needed by
// scorer_backward is recorded. `word_id_override` substitutes word indices
// (unknown-word replacement during training) without touching characters.
SentenceScores score_sentence(const ModelParams& params, const std::vector<std::string>& tokens,
                              bool train_mode = false, std::mt19937_64* rng = nullptr,
                              SentenceTape* tape = nullptr,
                              const std::vector<int>* word_id_override = nullptr);

// Reverse accumulation from score adjoints to parameter gradients. Either
// adjoint may be null. Throws if the tape was not recorded.
void scorer_backward(const ModelParams& params, const SentenceTape& tape, const Matrix* d_span,
                     const std::vector<Matrix>* d_label, Gradients& grads);

}  // namespace treecrf
