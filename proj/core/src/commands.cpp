#include "treecrf/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "treecrf/model_io.hpp"
#include "treecrf/oracle.hpp"
#include "treecrf/parallel.hpp"

namespace treecrf {

namespace {

bool file_readable(const std::string& path) { return std::ifstream(path).good(); }

int missing_path(const std::string& what, const std::string& path, std::ostream& err) {
    if (path.empty())
        err << "error: no " << what << " path given\n";
    else
        err << "error: cannot read " << what << " file: " << path << "\n";
    return kExitUsage;
}

std::vector<ConstTree> load_stripped_corpus(const std::string& path, PreterminalPolicy policy,
                                            const EvalParams& eval_params) {
    std::vector<ConstTree> trees = read_corpus_file(path, policy);
    if (!eval_params.empty_labels.empty())
        for (ConstTree& t : trees) t = strip_empties(t, eval_params.empty_labels);
    return trees;
}

// A tree file starts with '('; anything else is whitespace-tokenized text.
std::vector<std::vector<std::string>> read_input_sentences(const std::string& path,
                                                           PreterminalPolicy policy) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open input file: " + path);
    std::string first;
    std::string line;
    while (std::getline(in, line)) {
        std::size_t at = line.find_first_not_of(" \t\r");
        if (at != std::string::npos) {
            first = line.substr(at);
            break;
        }
    }
    in.clear();
    in.seekg(0);
    std::vector<std::vector<std::string>> out;
    if (!first.empty() && first[0] == '(') {
        for (const ConstTree& t : read_corpus(in, policy)) out.push_back(tree_tokens(t.root));
        return out;
    }
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::vector<std::string> toks;
        std::string w;
        while (ss >> w) toks.push_back(w);
        if (!toks.empty()) out.push_back(std::move(toks));
    }
    return out;
}

EvalParams eval_params_for(const RunConfig& cfg) {
    if (cfg.eval_params_path.empty()) return EvalParams::english_defaults();
    return read_eval_params_file(cfg.eval_params_path);
}

double percent(double x) { return 100.0 * x; }

struct Throughput {
    double seconds = 0.0;
    double per_second = 0.0;
};

// Runs fn repeatedly until it has consumed a minimal wall-time budget, so
// short kernels get a stable rate.
template <typename Fn>
Throughput measure(int items, Fn&& fn) {
    using clock = std::chrono::steady_clock;
    int reps = 0;
    auto start = clock::now();
    double elapsed = 0.0;
    do {
        fn();
        ++reps;
        elapsed = std::chrono::duration<double>(clock::now() - start).count();
    } while (elapsed < 0.3 && reps < 1000);
    Throughput t;
    t.seconds = elapsed / reps;
    t.per_second = items / t.seconds;
    return t;
}

}  // namespace

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    if (cfg.train_path.empty() || !file_readable(cfg.train_path))
        return missing_path("train", cfg.train_path, err);
    if (cfg.dev_path.empty() || !file_readable(cfg.dev_path))
        return missing_path("dev", cfg.dev_path, err);
    if (cfg.model_path.empty()) {
        err << "error: no model output path given\n";
        return kExitUsage;
    }
    if (cfg.loss == "maxmargin" && cfg.stage == "one") {
        err << "error: the max-margin loss is only available with --stage two\n";
        return kExitUsage;
    }

    try {
        EvalParams eval_params = eval_params_for(cfg);
        std::vector<ConstTree> train_nary =
            load_stripped_corpus(cfg.train_path, cfg.preterminal_policy(), eval_params);
        std::vector<ConstTree> dev_nary =
            load_stripped_corpus(cfg.dev_path, cfg.preterminal_policy(), eval_params);
        if (train_nary.empty()) {
            err << "error: training file has no trees: " << cfg.train_path << "\n";
            return kExitFail;
        }

        std::vector<BinaryTree> train_bin;
        train_bin.reserve(train_nary.size());
        for (const ConstTree& t : train_nary)
            train_bin.push_back(binarize_cnf(t, cfg.binarize_direction()));
        LabelVocab labels = build_label_vocab(train_bin);

        TrainConfig tc = cfg.train;
        tc.seed = cfg.seed;
        tc.threads = cfg.resolved_threads();
        tc.dev_mbr = cfg.use_mbr();
        tc.pretrained_embeddings = cfg.embeddings_path;
        if (cfg.loss == "maxmargin")
            tc.loss_mode = LossMode::MaxMargin;
        else
            tc.loss_mode = cfg.stage == "one" ? LossMode::OneStageCrf : LossMode::TwoStageCrf;

        std::ofstream log_file;
        std::ostream* log = &out;
        if (!cfg.output_path.empty()) {
            log_file.open(cfg.output_path);
            if (!log_file) {
                err << "error: cannot open log file for writing: " << cfg.output_path << "\n";
                return kExitUsage;
            }
            log = &log_file;
        }
        (*log) << cfg.echo_json() << "\n" << std::flush;

        TrainResult result = train(train_bin, dev_nary, labels, cfg.scorer, tc, eval_params, log);
        save_model_file(cfg.model_path, result.params, &result.opt_state);
        if (result.diverged) {
            err << "error: training diverged (non-finite loss); wrote last good checkpoint\n";
            return kExitFail;
        }
        out << "best epoch " << result.best_epoch << " dev F " << std::fixed << std::setprecision(2)
            << percent(result.best_f) << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFail;
    }
}

int cmd_parse(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    if (cfg.model_path.empty() || !file_readable(cfg.model_path))
        return missing_path("model", cfg.model_path, err);
    if (cfg.input_path.empty() || !file_readable(cfg.input_path))
        return missing_path("input", cfg.input_path, err);
    try {
        ModelParams params = load_model_file(cfg.model_path);
        std::vector<std::vector<std::string>> sentences =
            read_input_sentences(cfg.input_path, cfg.preterminal_policy());
        std::vector<ConstTree> trees =
            parse_corpus(params, sentences, cfg.stage_mode(), cfg.use_mbr(), cfg.resolved_threads(),
                         cfg.train.batch_words);
        std::ofstream out_file;
        std::ostream* sink = &out;
        if (!cfg.output_path.empty()) {
            out_file.open(cfg.output_path);
            if (!out_file) {
                err << "error: cannot open output file for writing: " << cfg.output_path << "\n";
                return kExitUsage;
            }
            sink = &out_file;
        }
        write_corpus(*sink, trees);
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFail;
    }
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    if (cfg.gold_path.empty() || !file_readable(cfg.gold_path))
        return missing_path("gold", cfg.gold_path, err);
    if (cfg.input_path.empty() || !file_readable(cfg.input_path))
        return missing_path("predicted", cfg.input_path, err);
    try {
        EvalParams eval_params = eval_params_for(cfg);
        std::vector<ConstTree> gold =
            load_stripped_corpus(cfg.gold_path, cfg.preterminal_policy(), eval_params);
        std::vector<ConstTree> pred =
            load_stripped_corpus(cfg.input_path, cfg.preterminal_policy(), eval_params);
        PRF prf = evalb_score(gold, pred, eval_params, true);
        out << "matched " << prf.matched << " predicted " << prf.predicted << " gold " << prf.gold
            << "\n";
        out << std::fixed << std::setprecision(2) << "P " << percent(prf.precision()) << " R "
            << percent(prf.recall()) << " F " << percent(prf.fscore()) << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFail;
    }
}

int cmd_bench(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    if (cfg.model_path.empty() || !file_readable(cfg.model_path))
        return missing_path("model", cfg.model_path, err);
    if (cfg.input_path.empty() || !file_readable(cfg.input_path))
        return missing_path("input", cfg.input_path, err);
    try {
        ModelParams params = load_model_file(cfg.model_path);
        std::vector<std::vector<std::string>> sentences =
            read_input_sentences(cfg.input_path, cfg.preterminal_policy());
        const int count = static_cast<int>(sentences.size());
        out << "sentences: " << count << "\n";
        if (count == 0) return kExitOk;

        int threads = cfg.resolved_threads();
        int longest = 0;
        long long words = 0;
        for (const auto& s : sentences) {
            longest = std::max(longest, static_cast<int>(s.size()));
            words += static_cast<long long>(s.size());
        }

        Throughput pipe_viterbi = measure(count, [&] {
            parse_corpus(params, sentences, cfg.stage_mode(), false, threads, cfg.train.batch_words);
        });
        Throughput pipe_mbr = measure(count, [&] {
            parse_corpus(params, sentences, cfg.stage_mode(), true, threads, cfg.train.batch_words);
        });

        std::vector<ScoredBatch> batches =
            score_corpus(params, sentences, threads, cfg.train.batch_words);
        out << "batches: " << batches.size() << " longest: " << longest
            << " words: " << words << "\n";

        Throughput batched_viterbi = measure(count, [&] {
            for (const ScoredBatch& sb : batches) cky(sb.span_chart, threads);
        });
        Throughput batched_mbr = measure(count, [&] {
            for (const ScoredBatch& sb : batches) mbr_decode(sb.span_chart, threads);
        });

        // The per-sentence baseline: one naive chart per sentence.
        Throughput unbatched = measure(count, [&] {
            std::vector<double> block;
            for (const ScoredBatch& sb : batches) {
                const int N = sb.span_chart.n_max;
                for (std::size_t b = 0; b < sb.sentence_ids.size(); ++b) {
                    int n = sb.span_chart.lengths[b];
                    block.assign(std::size_t(n) * n, 0.0);
                    for (int i = 0; i < n; ++i)
                        for (int j = i; j < n; ++j)
                            block[std::size_t(i) * n + j] =
                                sb.span_chart.at(static_cast<int>(b), i, j);
                    reference_cky_single(block.data(), n);
                }
            }
        });

        // Viterbi/marginal agreement, measured over the span sets.
        int agree = 0;
        for (const ScoredBatch& sb : batches) {
            CkyResult v = cky(sb.span_chart, threads);
            std::vector<UnlabeledTree> m = mbr_decode(sb.span_chart, threads);
            for (std::size_t b = 0; b < sb.sentence_ids.size(); ++b)
                if (v.trees[b].spans == m[b].spans) ++agree;
        }

        out << std::fixed << std::setprecision(1);
        out << "pipeline viterbi: " << pipe_viterbi.per_second << " sents/s\n";
        out << "pipeline mbr: " << pipe_mbr.per_second << " sents/s\n";
        out << "decode batched viterbi: " << batched_viterbi.per_second << " sents/s\n";
        out << "decode batched mbr: " << batched_mbr.per_second << " sents/s\n";
        out << "decode unbatched viterbi: " << unbatched.per_second << " sents/s\n";
        out << std::setprecision(2) << "batched/unbatched ratio: "
            << batched_viterbi.per_second / unbatched.per_second << "\n";
        out << "mbr/viterbi agreement: " << std::setprecision(1)
            << 100.0 * agree / count << "%\n";
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFail;
    }
}

namespace {

SpanChart random_chart(int batch, const std::vector<int>& lengths, std::mt19937_64& rng) {
    int n_max = *std::max_element(lengths.begin(), lengths.end());
    SpanChart chart(batch, n_max, lengths, 0.0);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < lengths[b]; ++i)
            for (int j = i; j < lengths[b]; ++j) chart.at(b, i, j) = dist(rng);
    return chart;
}

std::vector<double> chart_block(const SpanChart& chart, int b) {
    int n = chart.lengths[b];
    std::vector<double> block(std::size_t(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) block[std::size_t(i) * n + j] = chart.at(b, i, j);
    return block;
}

struct CheckReport {
    std::ostream& out;
    bool all_ok = true;

    void line(const std::string& name, bool ok, const std::string& detail) {
        out << (ok ? "[ok]   " : "[FAIL] ") << name;
        if (!detail.empty()) out << ": " << detail;
        out << "\n";
        all_ok = all_ok && ok;
    }
};

}  // namespace

int run_selfcheck(std::ostream& out, std::uint64_t seed, int threads, bool corrupt_inside) {
    CheckReport report{out};
    std::mt19937_64 rng(mix_seed(seed, 0xC0DE));
    const double fudge = corrupt_inside ? 1e-3 : 0.0;

    {
        double worst = 0.0;
        for (int n = 2; n <= 8; ++n)
            for (int rep = 0; rep < 20; ++rep) {
                SpanChart chart = random_chart(1, {n}, rng);
                double log_z = inside(chart, threads).log_z[0] + fudge;
                double brute = oracle::brute_logZ(chart_block(chart, 0).data(), n);
                worst = std::max(worst, std::abs(log_z - brute));
            }
        std::ostringstream ss;
        ss << "max |logZ - enumeration| = " << worst;
        report.line("inside vs enumeration", worst < 1e-9, ss.str());
    }

    {
        double worst = 0.0, worst_sum = 0.0;
        for (int n = 2; n <= 8; ++n)
            for (int rep = 0; rep < 20; ++rep) {
                SpanChart chart = random_chart(1, {n}, rng);
                SpanChart m = marginals(chart, threads);
                std::vector<double> brute = oracle::brute_marginals(chart_block(chart, 0).data(), n);
                double sum = 0.0;
                for (int i = 0; i < n; ++i)
                    for (int j = i + 1; j < n; ++j) {
                        worst = std::max(worst,
                                         std::abs(m.at(0, i, j) + fudge - brute[std::size_t(i) * n + j]));
                        sum += m.at(0, i, j);
                    }
                worst_sum = std::max(worst_sum, std::abs(sum - (n - 1)));
            }
        std::ostringstream ss;
        ss << "max marginal err = " << worst << ", max |sum - (n-1)| = " << worst_sum;
        report.line("marginals vs enumeration", worst < 1e-9 && worst_sum < 1e-9, ss.str());
    }

    {
        bool ok = true;
        double worst = 0.0;
        for (int n = 2; n <= 8; ++n)
            for (int rep = 0; rep < 20; ++rep) {
                SpanChart chart = random_chart(1, {n}, rng);
                CkyResult res = cky(chart, threads);
                std::vector<double> block = chart_block(chart, 0);
                oracle::TreeEnumeration e = oracle::enumerate_trees(n);
                double best = -1e300;
                for (const UnlabeledTree& t : e.trees)
                    best = std::max(best, tree_score(chart, 0, t));
                worst = std::max(worst, std::abs(res.best_score[0] - best));
                UnlabeledTree ref = reference_cky_single(block.data(), n);
                ok = ok && res.trees[0].spans == ref.spans;
            }
        std::ostringstream ss;
        ss << "max |best - enumerated max| = " << worst;
        report.line("cky vs enumeration", ok && worst < 1e-9, ss.str());
    }

    {
        bool ok = true;
        for (int n = 2; n <= 7; ++n)
            for (int rep = 0; rep < 10; ++rep) {
                SpanChart chart = random_chart(1, {n}, rng);
                std::vector<UnlabeledTree> mbr = mbr_decode(chart, threads);
                SpanChart m = marginals(chart, threads);
                CkyResult via = cky(m, threads);
                ok = ok && mbr[0].spans == via.trees[0].spans;
                // against enumerated expected-span-count maximizer
                oracle::TreeEnumeration e = oracle::enumerate_trees(n);
                double best = -1e300;
                for (const UnlabeledTree& t : e.trees) best = std::max(best, tree_score(m, 0, t));
                ok = ok && std::abs(tree_score(m, 0, mbr[0]) - best) < 1e-9;
            }
        report.line("mbr decoding", ok, "identity and expected-span optimality");
    }

    {
        const int n = 4, L = 3;
        double worst = 0.0;
        for (int rep = 0; rep < 10; ++rep) {
            LabelGrid grid(1, n, L, {n}, 0.0);
            std::uniform_real_distribution<double> dist(-2.0, 2.0);
            std::vector<double> flat(std::size_t(n) * n * L, 0.0);
            for (int i = 0; i < n; ++i)
                for (int j = i; j < n; ++j)
                    for (int l = 0; l < L; ++l) {
                        double v = dist(rng);
                        grid.at(0, i, j, l) = v;
                        flat[(std::size_t(i) * n + j) * L + l] = v;
                    }
            LabelAggregate agg = label_aggregate(grid, AggregateMode::LogSumExp);
            double log_z = inside(agg.chart, threads).log_z[0];
            double brute = oracle::brute_one_stage_logZ(flat.data(), n, L);
            worst = std::max(worst, std::abs(log_z - brute));
        }
        std::ostringstream ss;
        ss << "max |logZ - joint enumeration| = " << worst;
        report.line("one-stage aggregation", worst < 1e-9, ss.str());
    }

    {
        // Full-model gradient check at toy dimensions.
        ScorerConfig sc;
        sc.word_dim = 6;
        sc.char_dim = 4;
        sc.char_hidden = 3;
        sc.lstm_layers = 2;
        sc.lstm_hidden = 5;
        sc.mlp_span_dim = 7;
        sc.mlp_label_dim = 4;
        sc.minus_hidden_dim = 5;
        sc.emb_dropout = 0.0;
        sc.lstm_dropout = 0.0;
        std::vector<std::string> tokens = {"ab", "c", "de", "f"};
        WordVocab words;
        CharVocab chars;
        build_vocabs({tokens}, words, chars);
        LabelVocab labels;
        labels.add("A");
        labels.add("B");
        std::mt19937_64 init_rng(mix_seed(seed, 0x6AD));
        ModelParams params = init_params(sc, words, chars, labels, init_rng);

        UnlabeledTree gold;
        gold.length = 4;
        gold.spans = {{0, 0}, {0, 1}, {0, 3}, {1, 1}, {2, 2}, {2, 3}, {3, 3}};
        std::vector<LabeledSpan> gold_labels;
        for (const auto& [i, j] : gold.spans) gold_labels.push_back({i, j, (i + j) % 2});

        auto loss_at = [&]() {
            SentenceScores s = score_sentence(params, tokens, false, nullptr, nullptr);
            SpanChart chart(1, 4, {4}, 0.0);
            LabelGrid grid(1, 4, 2, {4}, 0.0);
            for (int i = 0; i < 4; ++i)
                for (int j = i; j < 4; ++j) {
                    chart.at(0, i, j) = s.span(i, j);
                    for (int l = 0; l < 2; ++l) grid.at(0, i, j, l) = s.label[l](i, j);
                }
            BracketLoss bl = crf_bracket_loss(chart, {gold}, 1);
            LabelLoss ll = label_loss(grid, {gold_labels});
            return total_loss(bl.losses[0], ll.losses[0]);
        };

        SentenceTape tape;
        SentenceScores s = score_sentence(params, tokens, false, nullptr, &tape);
        SpanChart chart(1, 4, {4}, 0.0);
        LabelGrid grid(1, 4, 2, {4}, 0.0);
        for (int i = 0; i < 4; ++i)
            for (int j = i; j < 4; ++j) {
                chart.at(0, i, j) = s.span(i, j);
                for (int l = 0; l < 2; ++l) grid.at(0, i, j, l) = s.label[l](i, j);
            }
        BracketLoss bl = crf_bracket_loss(chart, {gold}, 1);
        LabelLoss ll = label_loss(grid, {gold_labels});
        Matrix d_span = Matrix::Zero(4, 4);
        std::vector<Matrix> d_label(2, Matrix::Zero(4, 4));
        for (int i = 0; i < 4; ++i)
            for (int j = i; j < 4; ++j) {
                d_span(i, j) = bl.adjoints.at(0, i, j);
                for (int l = 0; l < 2; ++l) d_label[l](i, j) = ll.adjoints.at(0, i, j, l);
            }
        Gradients grads = zero_grads(params);
        scorer_backward(params, tape, &d_span, &d_label, grads);

        double worst_abs = 0.0, worst_rel = 0.0;
        bool ok = true;
        auto prefs = param_refs(params);
        auto grefs = param_refs(grads);
        for (std::size_t k = 0; k < prefs.size(); ++k) {
            // Probe a few coordinates per group; full sweeps live in the tests.
            Eigen::Index size = prefs[k].size();
            for (Eigen::Index probe = 0; probe < std::min<Eigen::Index>(size, 4); ++probe) {
                Eigen::Index idx = (probe * 2654435761u) % size;
                std::span<double> coord(prefs[k].data + idx, 1);
                double fd = oracle::finite_diff(coord, loss_at, 1e-4)[0];
                double an = grefs[k].data[idx] + fudge;
                double abs_err = std::abs(fd - an);
                double rel_err = abs_err / std::max(1.0e-8, std::abs(fd));
                worst_abs = std::max(worst_abs, abs_err);
                if (abs_err > 1e-4 && rel_err > 1e-3) ok = false;
            }
        }
        std::ostringstream ss;
        ss << "max |analytic - finite difference| = " << worst_abs;
        report.line("parameter gradients vs finite differences", ok, ss.str());

        // Adjoints of the bracket loss against finite differences on scores.
        double worst_adj = 0.0;
        for (int i = 0; i < 4; ++i)
            for (int j = i + 1; j < 4; ++j) {
                std::span<double> coord(&chart.at(0, i, j), 1);
                double fd = oracle::finite_diff(
                    coord,
                    [&] {
                        BracketLoss b2 = crf_bracket_loss(chart, {gold}, 1);
                        return b2.losses[0];
                    },
                    1e-4)[0];
                worst_adj = std::max(worst_adj, std::abs(fd - bl.adjoints.at(0, i, j)));
            }
        std::ostringstream ss2;
        ss2 << "max adjoint err = " << worst_adj;
        report.line("crf adjoints vs finite differences", worst_adj < 1e-5, ss2.str());
    }

    return report.all_ok ? kExitOk : kExitFail;
}

int cmd_selfcheck(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    (void)err;
    return run_selfcheck(out, cfg.seed, cfg.resolved_threads(), false);
}

}  // namespace treecrf
