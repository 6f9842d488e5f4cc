#include "treecrf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "treecrf/model_io.hpp"
#include "treecrf/parallel.hpp"

namespace treecrf {

namespace {

StageMode stage_of(LossMode mode) {
    return mode == LossMode::OneStageCrf ? StageMode::OneStage : StageMode::TwoStage;
}

void check_gold(const SpanChart& scores, const std::vector<UnlabeledTree>& gold) {
    if (static_cast<int>(gold.size()) != scores.batch)
        throw std::invalid_argument("loss: gold/batch size mismatch");
    for (int b = 0; b < scores.batch; ++b)
        if (gold[b].length != scores.lengths[b])
            throw std::invalid_argument("loss: gold tree length mismatch at instance " +
                                        std::to_string(b));
}

// softmax over one label cell, in place on a scratch vector
void cell_softmax(const double* cell, int L, std::vector<double>& out) {
    out.resize(L);
    double m = cell[0];
    for (int l = 1; l < L; ++l) m = std::max(m, cell[l]);
    double acc = 0.0;
    for (int l = 0; l < L; ++l) acc += (out[l] = std::exp(cell[l] - m));
    for (int l = 0; l < L; ++l) out[l] /= acc;
}

}  // namespace

GoldTree gold_tree(const BinaryTree& tree, const LabelVocab& labels) {
    GoldTree g;
    g.tokens = tree_tokens(tree.root);
    std::vector<Constituent> cons = tree_constituents(tree.root);
    g.bracketing.length = static_cast<int>(g.tokens.size());
    for (const Constituent& c : cons) {
        g.bracketing.spans.emplace_back(c.begin, c.end);
        int id = labels.find(c.label);
        if (id < 0) throw std::invalid_argument("gold label not in vocabulary: " + c.label);
        g.labeled.push_back(LabeledSpan{c.begin, c.end, id});
    }
    std::sort(g.bracketing.spans.begin(), g.bracketing.spans.end());
    validate_unlabeled_tree(g.bracketing);
    return g;
}

BracketLoss crf_bracket_loss(const SpanChart& scores, const std::vector<UnlabeledTree>& gold,
                             int threads) {
    check_gold(scores, gold);
    MarginalResult mr = marginals_with_logz(scores, threads);
    BracketLoss out;
    out.adjoints = std::move(mr.chart);
    out.losses.resize(scores.batch);
    for (int b = 0; b < scores.batch; ++b) {
        out.losses[b] = mr.log_z[b] - tree_score(scores, b, gold[b]);
        for (int i = 0; i < scores.lengths[b]; ++i) out.adjoints.at(b, i, i) = 0.0;
        for (const auto& [i, j] : gold[b].spans)
            if (j > i) out.adjoints.at(b, i, j) -= 1.0;
    }
    return out;
}

LabelLoss label_loss(const LabelGrid& scores, const std::vector<std::vector<LabeledSpan>>& gold) {
    if (static_cast<int>(gold.size()) != scores.batch)
        throw std::invalid_argument("label_loss: gold/batch size mismatch");
    const int L = scores.n_labels;
    if (L < 1) throw std::invalid_argument("label_loss: empty label set");
    LabelLoss out;
    out.losses.assign(scores.batch, 0.0);
    out.adjoints = LabelGrid(scores.batch, scores.n_max, L, scores.lengths, 0.0);
    std::vector<double> soft;
    for (int b = 0; b < scores.batch; ++b) {
        if (gold[b].empty()) continue;
        double inv_k = 1.0 / static_cast<double>(gold[b].size());
        for (const LabeledSpan& c : gold[b]) {
            if (c.label < 0 || c.label >= L)
                throw std::invalid_argument("label_loss: gold label out of vocabulary");
            if (c.begin < 0 || c.end >= scores.lengths[b] || c.begin > c.end)
                throw std::invalid_argument("label_loss: gold span out of range");
            const double* cell =
                &scores.values[((std::size_t(c.begin) * scores.n_max + c.end) * scores.batch + b) *
                               L];
            cell_softmax(cell, L, soft);
            out.losses[b] -= std::log(std::max(soft[c.label], 1e-300)) * inv_k;
            double* adj =
                &out.adjoints.values[((std::size_t(c.begin) * scores.n_max + c.end) *
                                          scores.batch + b) * L];
            for (int l = 0; l < L; ++l) adj[l] += soft[l] * inv_k;
            adj[c.label] -= inv_k;
        }
    }
    return out;
}

OneStageLoss one_stage_crf_loss(const LabelGrid& scores,
                                const std::vector<std::vector<LabeledSpan>>& gold, int threads) {
    if (static_cast<int>(gold.size()) != scores.batch)
        throw std::invalid_argument("one_stage_crf_loss: gold/batch size mismatch");
    const int L = scores.n_labels;
    LabelAggregate agg = label_aggregate(scores, AggregateMode::LogSumExp);
    MarginalResult mr = marginals_with_logz(agg.chart, threads);

    OneStageLoss out;
    out.losses.assign(scores.batch, 0.0);
    out.adjoints = LabelGrid(scores.batch, scores.n_max, L, scores.lengths, 0.0);
    std::vector<double> soft;
    for (int b = 0; b < scores.batch; ++b) {
        double gold_score = 0.0;
        for (const LabeledSpan& c : gold[b]) {
            if (c.end <= c.begin) continue;
            if (c.label < 0 || c.label >= L)
                throw std::invalid_argument("one_stage_crf_loss: gold label out of vocabulary");
            gold_score += scores.at(b, c.begin, c.end, c.label);
        }
        out.losses[b] = mr.log_z[b] - gold_score;
        int n = scores.lengths[b];
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double* cell =
                    &scores.values[((std::size_t(i) * scores.n_max + j) * scores.batch + b) * L];
                cell_softmax(cell, L, soft);
                double* adj =
                    &out.adjoints.values[((std::size_t(i) * scores.n_max + j) * scores.batch + b) *
                                         L];
                double p_span = mr.chart.at(b, i, j);
                for (int l = 0; l < L; ++l) adj[l] = p_span * soft[l];
            }
        for (const LabeledSpan& c : gold[b])
            if (c.end > c.begin) out.adjoints.at(b, c.begin, c.end, c.label) -= 1.0;
    }
    return out;
}

BracketLoss max_margin_loss(const SpanChart& scores, const std::vector<UnlabeledTree>& gold,
                            double margin, int threads) {
    check_gold(scores, gold);
    SpanChart augmented = scores;
    for (int b = 0; b < scores.batch; ++b) {
        int n = scores.lengths[b];
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (!gold[b].contains(i, j)) augmented.at(b, i, j) += margin;
    }
    CkyResult viol = cky(augmented, threads);

    BracketLoss out;
    out.losses.resize(scores.batch);
    out.adjoints = SpanChart(scores.batch, scores.n_max, scores.lengths, 0.0);
    for (int b = 0; b < scores.batch; ++b) {
        double gold_score = tree_score(scores, b, gold[b]);
        double loss = viol.best_score[b] - gold_score;
        if (loss <= 0.0) {
            out.losses[b] = 0.0;
            continue;
        }
        out.losses[b] = loss;
        for (const auto& [i, j] : viol.trees[b].spans)
            if (j > i) out.adjoints.at(b, i, j) += 1.0;
        for (const auto& [i, j] : gold[b].spans)
            if (j > i) out.adjoints.at(b, i, j) -= 1.0;
    }
    return out;
}

std::vector<std::vector<int>> make_batches(const std::vector<int>& lengths, int batch_words,
                                           std::uint64_t seed) {
    if (batch_words < 1) throw std::invalid_argument("make_batches: batch_words must be positive");
    std::vector<int> order(lengths.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<int>> batches;
    std::vector<int> cur;
    int cur_words = 0;
    for (int idx : order) {
        int len = lengths[idx];
        if (!cur.empty() && cur_words + len > batch_words) {
            batches.push_back(std::move(cur));
            cur.clear();
            cur_words = 0;
        }
        cur.push_back(idx);
        cur_words += len;
    }
    if (!cur.empty()) batches.push_back(std::move(cur));
    for (auto& batch : batches)
        std::stable_sort(batch.begin(), batch.end(),
                         [&](int a, int b) { return lengths[a] > lengths[b]; });
    return batches;
}

AdamState init_adam(ModelParams& params) {
    AdamState state;
    for (const ParamRef& r : param_refs(params)) {
        state.m.emplace_back(r.size(), 0.0);
        state.v.emplace_back(r.size(), 0.0);
    }
    return state;
}

void optimizer_step(ModelParams& params, Gradients& grads, AdamState& state,
                    const AdamConfig& config) {
    auto prefs = param_refs(params);
    auto grefs = param_refs(grads);
    if (prefs.size() != grefs.size() || prefs.size() != state.m.size())
        throw std::invalid_argument("optimizer_step: parameter/gradient shape mismatch");
    for (std::size_t k = 0; k < prefs.size(); ++k)
        if (prefs[k].size() != grefs[k].size() ||
            prefs[k].size() != static_cast<Eigen::Index>(state.m[k].size()))
            throw std::invalid_argument("optimizer_step: shape mismatch for " + prefs[k].name);

    if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (const ParamRef& r : grefs)
            for (Eigen::Index i = 0; i < r.size(); ++i) sq += r.data[i] * r.data[i];
        double norm = std::sqrt(sq);
        if (norm > config.clip_norm) {
            double scale = config.clip_norm / norm;
            for (const ParamRef& r : grefs)
                for (Eigen::Index i = 0; i < r.size(); ++i) r.data[i] *= scale;
        }
    }

    state.step += 1;
    double t = static_cast<double>(state.step);
    double lr = config.lr *
                std::pow(config.lr_decay,
                         static_cast<double>((state.step - 1) / static_cast<std::uint64_t>(
                                                                     config.decay_steps)));
    double bc1 = 1.0 - std::pow(config.beta1, t);
    double bc2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t k = 0; k < prefs.size(); ++k) {
        double* p = prefs[k].data;
        const double* g = grefs[k].data;
        double* m = state.m[k].data();
        double* v = state.v[k].data();
        for (Eigen::Index i = 0; i < prefs[k].size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            double m_hat = m[i] / bc1;
            double v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
    }
}

BinaryTree assemble_tree(const UnlabeledTree& spans, const std::vector<std::string>& tokens,
                         const std::vector<std::string>& span_labels) {
    if (spans.spans.size() != span_labels.size())
        throw std::invalid_argument("assemble_tree: span/label count mismatch");
    std::unordered_map<long long, const std::string*> label_of;
    for (std::size_t k = 0; k < spans.spans.size(); ++k)
        label_of[(long long)spans.spans[k].first * 1000000 + spans.spans[k].second] =
            &span_labels[k];
    std::function<TreeNode(int, int)> build = [&](int i, int j) {
        TreeNode node;
        node.label = *label_of.at((long long)i * 1000000 + j);
        if (i == j) {
            TreeNode word;
            word.is_word = true;
            word.label = tokens[i];
            node.children.push_back(std::move(word));
            return node;
        }
        int r = tree_split(spans, i, j);
        node.children.push_back(build(i, r));
        node.children.push_back(build(r + 1, j));
        return node;
    };
    BinaryTree tree{build(0, spans.length - 1)};
    validate_binary_tree(tree.root);
    return tree;
}

namespace {

// Scores a group of sentences into batch charts. Tapes are optional.
void forward_batch(const ModelParams& params, const std::vector<std::vector<std::string>>& tokens,
                   const std::vector<int>& idxs, bool train_mode, std::uint64_t seed,
                   std::uint64_t epoch, const std::vector<std::vector<int>>* id_overrides,
                   SpanChart& span_chart, LabelGrid& label_grid, std::vector<SentenceTape>* tapes,
                   int threads) {
    const int B = static_cast<int>(idxs.size());
    parallel_chunks(B, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t b = lo; b < hi; ++b) {
            int idx = idxs[b];
            std::mt19937_64 rng(mix_seed(seed, epoch, static_cast<std::uint64_t>(idx)));
            SentenceScores scores = score_sentence(
                params, tokens[idx], train_mode, train_mode ? &rng : nullptr,
                tapes ? &(*tapes)[b] : nullptr, id_overrides ? &(*id_overrides)[b] : nullptr);
            int n = static_cast<int>(tokens[idx].size());
            for (int i = 0; i < n; ++i)
                for (int j = i; j < n; ++j) {
                    span_chart.at(static_cast<int>(b), i, j) = scores.span(i, j);
                    for (int l = 0; l < label_grid.n_labels; ++l)
                        label_grid.at(static_cast<int>(b), i, j, l) = scores.label[l](i, j);
                }
        }
    });
}

std::vector<std::string> argmax_labels(const LabelGrid& grid, int b, const UnlabeledTree& tree,
                                       const LabelVocab& vocab) {
    std::vector<std::string> out;
    out.reserve(tree.spans.size());
    for (const auto& [i, j] : tree.spans) {
        const double* cell =
            &grid.values[((std::size_t(i) * grid.n_max + j) * grid.batch + b) * grid.n_labels];
        int best = 0;
        for (int l = 1; l < grid.n_labels; ++l)
            if (cell[l] > cell[best]) best = l;
        out.push_back(vocab.labels[best]);
    }
    return out;
}

}  // namespace

std::vector<ScoredBatch> score_corpus(const ModelParams& params,
                                      const std::vector<std::vector<std::string>>& sentences,
                                      int threads, int batch_words) {
    std::vector<std::vector<int>> groups;
    std::vector<int> cur;
    int words = 0;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        int len = static_cast<int>(sentences[s].size());
        if (len == 0) throw std::invalid_argument("score_corpus: empty sentence");
        if (!cur.empty() && words + len > batch_words) {
            groups.push_back(std::move(cur));
            cur.clear();
            words = 0;
        }
        cur.push_back(static_cast<int>(s));
        words += len;
    }
    if (!cur.empty()) groups.push_back(std::move(cur));

    std::vector<ScoredBatch> out;
    out.reserve(groups.size());
    for (std::vector<int>& group : groups) {
        const int B = static_cast<int>(group.size());
        int n_max = 0;
        std::vector<int> lengths(B);
        for (int b = 0; b < B; ++b) {
            lengths[b] = static_cast<int>(sentences[group[b]].size());
            n_max = std::max(n_max, lengths[b]);
        }
        ScoredBatch sb;
        sb.span_chart = SpanChart(B, n_max, lengths, 0.0);
        sb.label_grid = LabelGrid(B, n_max, params.labels.size(), lengths, 0.0);
        forward_batch(params, sentences, group, false, 0, 0, nullptr, sb.span_chart, sb.label_grid,
                      nullptr, threads);
        sb.sentence_ids = std::move(group);
        out.push_back(std::move(sb));
    }
    return out;
}

std::vector<ConstTree> parse_corpus(const ModelParams& params,
                                    const std::vector<std::vector<std::string>>& sentences,
                                    StageMode stage, bool mbr, int threads, int batch_words) {
    std::vector<ConstTree> out(sentences.size());
    for (const ScoredBatch& sb : score_corpus(params, sentences, threads, batch_words)) {
        const int B = static_cast<int>(sb.sentence_ids.size());
        std::vector<UnlabeledTree> trees;
        LabelAggregate agg;
        if (stage == StageMode::OneStage) {
            agg = label_aggregate(sb.label_grid, AggregateMode::Max);
            if (mbr) {
                LabelAggregate lse = label_aggregate(sb.label_grid, AggregateMode::LogSumExp);
                trees = mbr_decode(lse.chart, threads);
            } else {
                trees = cky(agg.chart, threads).trees;
            }
        } else {
            trees = mbr ? mbr_decode(sb.span_chart, threads) : cky(sb.span_chart, threads).trees;
        }

        for (int b = 0; b < B; ++b) {
            const std::vector<std::string>& toks = sentences[sb.sentence_ids[b]];
            std::vector<std::string> labels;
            if (stage == StageMode::OneStage) {
                labels.reserve(trees[b].spans.size());
                for (const auto& [i, j] : trees[b].spans)
                    labels.push_back(params.labels.labels[agg.argmax_at(b, i, j)]);
            } else {
                labels = argmax_labels(sb.label_grid, b, trees[b], params.labels);
            }
            BinaryTree bt = assemble_tree(trees[b], toks, labels);
            out[sb.sentence_ids[b]] = debinarize(bt);
        }
    }
    return out;
}

std::string epoch_record_json(const EpochRecord& rec) {
    nlohmann::json j;
    j["epoch"] = rec.epoch;
    j["loss"] = rec.train_loss;
    j["dev_p"] = rec.dev_p;
    j["dev_r"] = rec.dev_r;
    j["dev_f"] = rec.dev_f;
    j["seconds"] = rec.seconds;
    return j.dump();
}

namespace {

struct BatchWork {
    double loss_sum = 0.0;
    bool finite = true;
};

BatchWork run_batch(ModelParams& params, AdamState& adam, const std::vector<GoldTree>& gold,
                    const std::vector<std::vector<std::string>>& tokens,
                    const std::vector<std::vector<int>>& id_overrides_all,
                    const std::vector<int>& batch, const TrainConfig& config, std::uint64_t epoch) {
    const int B = static_cast<int>(batch.size());
    const int L = params.labels.size();
    int n_max = 0;
    std::vector<int> lengths(B);
    for (int b = 0; b < B; ++b) {
        lengths[b] = gold[batch[b]].bracketing.length;
        n_max = std::max(n_max, lengths[b]);
    }
    SpanChart span_chart(B, n_max, lengths, 0.0);
    LabelGrid label_grid(B, n_max, L, lengths, 0.0);
    std::vector<SentenceTape> tapes(B);

    std::vector<std::vector<int>> overrides;
    const std::vector<std::vector<int>>* overrides_ptr = nullptr;
    if (!id_overrides_all.empty()) {
        overrides.reserve(B);
        for (int b = 0; b < B; ++b) overrides.push_back(id_overrides_all[batch[b]]);
        overrides_ptr = &overrides;
    }
    forward_batch(params, tokens, batch, true, config.seed, epoch, overrides_ptr, span_chart,
                  label_grid, &tapes, config.threads);

    std::vector<UnlabeledTree> gold_brackets(B);
    std::vector<std::vector<LabeledSpan>> gold_labeled(B);
    for (int b = 0; b < B; ++b) {
        gold_brackets[b] = gold[batch[b]].bracketing;
        gold_labeled[b] = gold[batch[b]].labeled;
    }

    SpanChart d_span;
    LabelGrid d_label;
    bool use_span_adj = false, use_label_adj = false;
    std::vector<double> losses(B, 0.0);

    switch (config.loss_mode) {
        case LossMode::TwoStageCrf: {
            BracketLoss bl = crf_bracket_loss(span_chart, gold_brackets, config.threads);
            LabelLoss ll = label_loss(label_grid, gold_labeled);
            d_span = std::move(bl.adjoints);
            d_label = std::move(ll.adjoints);
            for (double& v : d_label.values) v *= config.label_loss_weight;
            for (int b = 0; b < B; ++b)
                losses[b] = total_loss(bl.losses[b], config.label_loss_weight * ll.losses[b]);
            use_span_adj = use_label_adj = true;
            break;
        }
        case LossMode::OneStageCrf: {
            OneStageLoss ol = one_stage_crf_loss(label_grid, gold_labeled, config.threads);
            // The one-stage objective covers spans of width >= 2; leaf labels
            // still need supervision for decoding, via plain cross-entropy.
            std::vector<std::vector<LabeledSpan>> width1(B);
            for (int b = 0; b < B; ++b)
                for (const LabeledSpan& c : gold_labeled[b])
                    if (c.begin == c.end) width1[b].push_back(c);
            LabelLoss w1 = label_loss(label_grid, width1);
            d_label = std::move(ol.adjoints);
            for (std::size_t k = 0; k < d_label.values.size(); ++k)
                d_label.values[k] += config.label_loss_weight * w1.adjoints.values[k];
            for (int b = 0; b < B; ++b)
                losses[b] = ol.losses[b] + config.label_loss_weight * w1.losses[b];
            use_label_adj = true;
            break;
        }
        case LossMode::MaxMargin: {
            BracketLoss bl = max_margin_loss(span_chart, gold_brackets, config.margin, config.threads);
            LabelLoss ll = label_loss(label_grid, gold_labeled);
            d_span = std::move(bl.adjoints);
            d_label = std::move(ll.adjoints);
            for (double& v : d_label.values) v *= config.label_loss_weight;
            for (int b = 0; b < B; ++b)
                losses[b] = total_loss(bl.losses[b], config.label_loss_weight * ll.losses[b]);
            use_span_adj = use_label_adj = true;
            break;
        }
    }

    BatchWork work;
    for (double l : losses) {
        work.loss_sum += l;
        if (!std::isfinite(l)) work.finite = false;
    }
    if (!work.finite) return work;

    // Mean loss over the batch: scale the adjoints once instead of the grads.
    double inv_b = 1.0 / static_cast<double>(B);
    if (use_span_adj)
        for (double& v : d_span.values) v *= inv_b;
    if (use_label_adj)
        for (double& v : d_label.values) v *= inv_b;

    int workers = config.threads <= 1 ? 1 : std::min(config.threads, B);
    std::size_t chunk = (std::size_t(B) + workers - 1) / workers;
    std::vector<Gradients> grads;
    grads.reserve(workers);
    for (int w = 0; w < workers; ++w) grads.push_back(zero_grads(params));

    auto backward_range = [&](std::size_t lo, std::size_t hi, Gradients& acc) {
        for (std::size_t b = lo; b < hi; ++b) {
            int n = lengths[b];
            Matrix ds = Matrix::Zero(n, n);
            if (use_span_adj)
                for (int i = 0; i < n; ++i)
                    for (int j = i; j < n; ++j) ds(i, j) = d_span.at(static_cast<int>(b), i, j);
            std::vector<Matrix> dl;
            if (use_label_adj) {
                dl.assign(L, Matrix::Zero(n, n));
                for (int i = 0; i < n; ++i)
                    for (int j = i; j < n; ++j)
                        for (int l = 0; l < L; ++l)
                            dl[l](i, j) = d_label.at(static_cast<int>(b), i, j, l);
            }
            scorer_backward(params, tapes[b], use_span_adj ? &ds : nullptr,
                            use_label_adj ? &dl : nullptr, acc);
        }
    };
    if (workers == 1) {
        backward_range(0, B, grads[0]);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            std::size_t lo = w * chunk, hi = std::min<std::size_t>(B, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi, w] { backward_range(lo, hi, grads[w]); });
        }
        for (std::thread& t : pool) t.join();
        for (int w = 1; w < workers; ++w) grads[0].add(grads[w]);
    }

    optimizer_step(params, grads[0], adam, config.optimizer);
    return work;
}

}  // namespace

TrainResult train(const std::vector<BinaryTree>& train_trees, const std::vector<ConstTree>& dev_trees,
                  const LabelVocab& labels, const ScorerConfig& scorer_config,
                  const TrainConfig& config, const EvalParams& eval_params,
                  std::ostream* log_stream) {
    if (train_trees.empty()) throw std::invalid_argument("train: empty training corpus");

    std::vector<GoldTree> gold;
    gold.reserve(train_trees.size());
    std::vector<std::vector<std::string>> tokens;
    tokens.reserve(train_trees.size());
    std::vector<int> lengths;
    for (const BinaryTree& t : train_trees) {
        gold.push_back(gold_tree(t, labels));
        tokens.push_back(gold.back().tokens);
        lengths.push_back(gold.back().bracketing.length);
    }

    WordVocab words;
    CharVocab chars;
    build_vocabs(tokens, words, chars);

    ScorerConfig sc = scorer_config;
    sc.emb_dropout = config.dropout;
    sc.lstm_dropout = config.dropout;
    std::mt19937_64 init_rng(mix_seed(config.seed, 0xA11CE));
    ModelParams params = init_params(sc, std::move(words), std::move(chars), labels, init_rng);
    if (!config.pretrained_embeddings.empty())
        load_pretrained_embeddings(config.pretrained_embeddings, params);
    AdamState adam = init_adam(params);

    // Frequency-1 words may be stochastically replaced by the unknown index.
    std::vector<std::vector<int>> id_overrides;
    std::vector<long long> freq(params.words.size(), 0);
    for (const auto& sent : tokens)
        for (const std::string& w : sent) ++freq[params.words.find(w)];

    std::vector<std::vector<std::string>> dev_tokens;
    for (const ConstTree& t : dev_trees) dev_tokens.push_back(tree_tokens(t.root));

    TrainResult result;
    result.params = params;
    int since_best = 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();

        if (config.singleton_unk_prob > 0.0) {
            id_overrides.assign(tokens.size(), {});
            for (std::size_t s = 0; s < tokens.size(); ++s) {
                std::mt19937_64 rng(mix_seed(config.seed, 0x5157u + epoch, s));
                std::uniform_real_distribution<double> unit(0.0, 1.0);
                auto& ids = id_overrides[s];
                ids.reserve(tokens[s].size());
                for (const std::string& w : tokens[s]) {
                    int id = params.words.find(w);
                    if (freq[id] == 1 && unit(rng) < config.singleton_unk_prob) id = WordVocab::kUnk;
                    ids.push_back(id);
                }
            }
        }

        auto batches = make_batches(lengths, config.batch_words,
                                    mix_seed(config.seed, 0xB47C, static_cast<std::uint64_t>(epoch)));
        double loss_sum = 0.0;
        bool finite = true;
        for (const auto& batch : batches) {
            BatchWork w = run_batch(params, adam, gold, tokens, id_overrides, batch, config,
                                    static_cast<std::uint64_t>(epoch));
            loss_sum += w.loss_sum;
            if (!w.finite) {
                finite = false;
                break;
            }
        }
        if (!finite) {
            result.diverged = true;
            break;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_trees.size());
        if (!dev_trees.empty()) {
            std::vector<ConstTree> preds =
                parse_corpus(params, dev_tokens, stage_of(config.loss_mode), config.dev_mbr,
                             config.threads, config.batch_words);
            PRF prf = evalb_score(dev_trees, preds, eval_params, true);
            rec.dev_p = prf.precision();
            rec.dev_r = prf.recall();
            rec.dev_f = prf.fscore();
        }
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(rec);
        if (log_stream) (*log_stream) << epoch_record_json(rec) << '\n' << std::flush;

        bool improved = dev_trees.empty() ? true : rec.dev_f > result.best_f;
        if (improved) {
            result.best_f = rec.dev_f;
            result.best_epoch = epoch;
            result.params = params;
            result.opt_state = adam;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (since_best >= config.patience) break;
    }
    return result;
}

}  // namespace treecrf
