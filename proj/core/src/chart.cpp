#include "treecrf/chart.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "treecrf/parallel.hpp"

namespace treecrf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// All width->=2 cells of one row prefix (i, j>i, all lanes) are contiguous,
// so the finiteness check is a handful of linear sweeps. x*0 poisons to NaN
// for both infinities and NaNs.
void validate_scores(const SpanChart& scores) {
    if (scores.batch < 1) throw std::invalid_argument("chart: empty batch");
    if (static_cast<int>(scores.lengths.size()) != scores.batch)
        throw std::invalid_argument("chart: lengths/batch mismatch");
    for (int b = 0; b < scores.batch; ++b) {
        int n = scores.lengths[b];
        if (n < 1) throw std::invalid_argument("chart: sentence length must be >= 1");
        if (n > scores.n_max) throw std::invalid_argument("chart: length exceeds n_max");
    }
    const int N = scores.n_max, B = scores.batch;
    double poison = 0.0;
    for (int i = 0; i < N; ++i) {
        const double* row = scores.values.data() + (std::size_t(i) * N + i + 1) * B;
        std::size_t count = std::size_t(N - i - 1) * B;
        for (std::size_t k = 0; k < count; ++k) poison += row[k] * 0.0;
    }
    if (poison != 0.0) {
        // slow rescan for a precise message
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < scores.lengths[b]; ++i)
                for (int j = i + 1; j < scores.lengths[b]; ++j) {
                    double v = scores.at(b, i, j);
                    if (std::isnan(v)) throw std::domain_error("chart: NaN span score");
                    if (std::isinf(v)) throw std::domain_error("chart: non-finite span score");
                }
        throw std::domain_error("chart: non-finite value in padding cells");
    }
}

std::size_t cell_of(int i, int j, int N, int B) { return (std::size_t(i) * N + j) * B; }

// Lanes processed per cell in small register tiles: the running reduction
// state stays in registers across the whole split loop instead of being
// re-streamed from memory at every split point.
constexpr int kTile = 8;

// Inside sweep over a contiguous lane slice [lo, hi). Padding lanes are
// computed along with the live ones (they hold bounded junk and are never
// read into results); that keeps every pass a straight stripe reduction.
// With `splits` the semiring is max and argmax splits are recorded as
// doubles, ties resolved toward the lowest split by the strict compare.
void inside_slice(const SpanChart& scores, std::vector<double>& s, std::vector<double>* splits,
                  int lo, int hi) {
    const int N = scores.n_max, B = scores.batch;
    for (int w = 1; w < N; ++w) {
        for (int i = 0; i + w < N; ++i) {
            const int j = i + w;
            const std::size_t out_cell = cell_of(i, j, N, B);
            double* __restrict out = s.data() + out_cell;
            const double* __restrict sc = scores.values.data() + out_cell;
            if (splits) {
                double* __restrict karr = splits->data() + out_cell;
                int b = lo;
                for (; b + kTile <= hi; b += kTile) {
                    double m[kTile], k[kTile];
                    for (int t = 0; t < kTile; ++t) {
                        m[t] = kNegInf;
                        k[t] = static_cast<double>(i);
                    }
                    for (int r = i; r < j; ++r) {
                        const double* __restrict left = s.data() + cell_of(i, r, N, B) + b;
                        const double* __restrict right = s.data() + cell_of(r + 1, j, N, B) + b;
                        for (int t = 0; t < kTile; ++t) {
                            double v = left[t] + right[t];
                            k[t] = v > m[t] ? static_cast<double>(r) : k[t];
                            m[t] = v > m[t] ? v : m[t];
                        }
                    }
                    for (int t = 0; t < kTile; ++t) {
                        out[b + t] = m[t] + sc[b + t];
                        karr[b + t] = k[t];
                    }
                }
                for (; b < hi; ++b) {
                    double m = kNegInf, k = static_cast<double>(i);
                    for (int r = i; r < j; ++r) {
                        double v = s[cell_of(i, r, N, B) + b] + s[cell_of(r + 1, j, N, B) + b];
                        k = v > m ? static_cast<double>(r) : k;
                        m = v > m ? v : m;
                    }
                    out[b] = m + sc[b];
                    karr[b] = k;
                }
            } else {
                int b = lo;
                for (; b + kTile <= hi; b += kTile) {
                    double m[kTile], acc[kTile];
                    for (int t = 0; t < kTile; ++t) m[t] = kNegInf;
                    for (int r = i; r < j; ++r) {
                        const double* __restrict left = s.data() + cell_of(i, r, N, B) + b;
                        const double* __restrict right = s.data() + cell_of(r + 1, j, N, B) + b;
                        for (int t = 0; t < kTile; ++t)
                            m[t] = std::max(m[t], left[t] + right[t]);
                    }
                    for (int t = 0; t < kTile; ++t) acc[t] = 0.0;
                    for (int r = i; r < j; ++r) {
                        const double* __restrict left = s.data() + cell_of(i, r, N, B) + b;
                        const double* __restrict right = s.data() + cell_of(r + 1, j, N, B) + b;
                        for (int t = 0; t < kTile; ++t)
                            acc[t] += std::exp(left[t] + right[t] - m[t]);
                    }
                    for (int t = 0; t < kTile; ++t)
                        out[b + t] = m[t] + std::log(acc[t]) + sc[b + t];
                }
                for (; b < hi; ++b) {
                    double m = kNegInf;
                    for (int r = i; r < j; ++r)
                        m = std::max(m, s[cell_of(i, r, N, B) + b] + s[cell_of(r + 1, j, N, B) + b]);
                    double acc = 0.0;
                    for (int r = i; r < j; ++r)
                        acc += std::exp(s[cell_of(i, r, N, B) + b] + s[cell_of(r + 1, j, N, B) + b] -
                                        m);
                    out[b] = m + std::log(acc) + sc[b];
                }
            }
        }
    }
}

// Reverse accumulation through the inside recursion; the inside tensor
// doubles as the tape of logsumexp values.
void backward_slice(const SpanChart& scores, const std::vector<double>& s, std::vector<double>& a,
                    int lo, int hi) {
    const int N = scores.n_max, B = scores.batch;
    const int width = hi - lo;
    for (int lane = lo; lane < hi; ++lane)
        a[cell_of(0, scores.lengths[lane] - 1, N, B) + lane] = 1.0;
    for (int w = N - 1; w >= 2; --w) {
        for (int i = 0; i + w < N; ++i) {
            const int j = i + w;
            const double* __restrict g = a.data() + cell_of(i, j, N, B) + lo;
            const double* __restrict s_ij = s.data() + cell_of(i, j, N, B) + lo;
            const double* __restrict sc = scores.values.data() + cell_of(i, j, N, B) + lo;
            for (int r = i; r < j; ++r) {
                const double* __restrict left = s.data() + cell_of(i, r, N, B) + lo;
                const double* __restrict right = s.data() + cell_of(r + 1, j, N, B) + lo;
                double* __restrict a_left = a.data() + cell_of(i, r, N, B) + lo;
                double* __restrict a_right = a.data() + cell_of(r + 1, j, N, B) + lo;
                for (int b = 0; b < width; ++b) {
                    double wgt = g[b] * std::exp(left[b] + right[b] - (s_ij[b] - sc[b]));
                    a_left[b] += wgt;
                    a_right[b] += wgt;
                }
            }
        }
    }
}

// Lanes are processed in blocks small enough that a block's stripes stay
// cache resident across the width sweep; threads pick up whole blocks.
constexpr int kLaneBlock = 32;

template <typename SliceFn>
void for_lane_blocks(int batch, int threads, SliceFn&& fn) {
    int blocks = (batch + kLaneBlock - 1) / kLaneBlock;
    parallel_chunks(blocks, threads, [&](std::size_t blo, std::size_t bhi) {
        for (std::size_t blk = blo; blk < bhi; ++blk) {
            int lo = static_cast<int>(blk) * kLaneBlock;
            int hi = std::min(batch, lo + kLaneBlock);
            fn(lo, hi);
        }
    });
}

// Reused per-thread tensors: fresh multi-megabyte vectors would be mmapped
// and page-faulted on every call.
struct Scratch {
    std::vector<double> s, a, splits;
};

Scratch& scratch() {
    thread_local Scratch sc;
    return sc;
}

std::vector<double>& run_inside(const SpanChart& scores, bool want_splits, int threads) {
    Scratch& sc = scratch();
    sc.s.resize(scores.values.size());
    std::fill(sc.s.begin(), sc.s.end(), 0.0);
    std::vector<double>* splits = nullptr;
    if (want_splits) {
        // every live cell is written before it is read; no fill needed
        sc.splits.resize(scores.values.size());
        splits = &sc.splits;
    }
    for_lane_blocks(scores.batch, threads, [&](int lo, int hi) {
        inside_slice(scores, sc.s, splits, lo, hi);
    });
    return sc.s;
}

void collect_spans(int i, int j, int b, const SpanChart& scores, const std::vector<double>& splits,
                   std::vector<std::pair<int, int>>& out) {
    out.emplace_back(i, j);
    if (i == j) return;
    int k = static_cast<int>(splits[cell_of(i, j, scores.n_max, scores.batch) + b]);
    collect_spans(i, k, b, scores, splits, out);
    collect_spans(k + 1, j, b, scores, splits, out);
}

}  // namespace

bool UnlabeledTree::contains(int i, int j) const {
    return std::binary_search(spans.begin(), spans.end(), std::make_pair(i, j));
}

void validate_unlabeled_tree(const UnlabeledTree& tree) {
    int n = tree.length;
    if (n < 1) throw std::invalid_argument("unlabeled tree: empty sentence");
    if (static_cast<int>(tree.spans.size()) != 2 * n - 1)
        throw std::invalid_argument("unlabeled tree: expected 2n-1 spans");
    if (!std::is_sorted(tree.spans.begin(), tree.spans.end()))
        throw std::invalid_argument("unlabeled tree: spans not sorted");
    for (int i = 0; i < n; ++i)
        if (!tree.contains(i, i)) throw std::invalid_argument("unlabeled tree: missing width-1 span");
    if (!tree.contains(0, n - 1)) throw std::invalid_argument("unlabeled tree: missing root span");
    for (const auto& [i, j] : tree.spans) {
        if (i < 0 || j >= n || i > j) throw std::invalid_argument("unlabeled tree: span out of range");
        for (const auto& [p, q] : tree.spans) {
            bool disjoint = q < i || j < p;
            bool nested = (i <= p && q <= j) || (p <= i && j <= q);
            if (!disjoint && !nested) throw std::invalid_argument("unlabeled tree: crossing spans");
        }
    }
}

int tree_split(const UnlabeledTree& tree, int i, int j) {
    for (int r = i; r < j; ++r)
        if (tree.contains(i, r) && tree.contains(r + 1, j)) return r;
    throw std::invalid_argument("unlabeled tree: no split for span");
}

InsideResult inside(const SpanChart& scores, int threads) {
    validate_scores(scores);
    const int B = scores.batch, N = scores.n_max;
    const std::vector<double>& s = run_inside(scores, false, threads);
    InsideResult res;
    res.chart = SpanChart(B, N, scores.lengths, 0.0);
    res.log_z.resize(B);
    for (int b = 0; b < B; ++b) {
        int n = scores.lengths[b];
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) res.chart.at(b, i, j) = s[cell_of(i, j, N, B) + b];
        res.log_z[b] = s[cell_of(0, n - 1, N, B) + b];
    }
    return res;
}

SpanChart marginals(const SpanChart& scores, int threads) {
    return marginals_with_logz(scores, threads).chart;
}

MarginalResult marginals_with_logz(const SpanChart& scores, int threads) {
    validate_scores(scores);
    const int B = scores.batch, N = scores.n_max;
    const std::vector<double>& s = run_inside(scores, false, threads);
    std::vector<double>& a = scratch().a;
    a.resize(s.size());
    std::fill(a.begin(), a.end(), 0.0);
    for_lane_blocks(B, threads,
                    [&](int lo, int hi) { backward_slice(scores, s, a, lo, hi); });

    MarginalResult res;
    res.chart = SpanChart(B, N, scores.lengths, 0.0);
    res.log_z.resize(B);
    for (int b = 0; b < B; ++b) {
        int n = scores.lengths[b];
        for (int i = 0; i < n; ++i) {
            res.chart.at(b, i, i) = 1.0;
            for (int j = i + 1; j < n; ++j) res.chart.at(b, i, j) = a[cell_of(i, j, N, B) + b];
        }
        res.log_z[b] = s[cell_of(0, n - 1, N, B) + b];
    }
    return res;
}

CkyResult cky(const SpanChart& scores, int threads) {
    validate_scores(scores);
    const int B = scores.batch, N = scores.n_max;
    const std::vector<double>& s = run_inside(scores, true, threads);
    const std::vector<double>& splits = scratch().splits;

    CkyResult res;
    res.trees.resize(B);
    res.best_score.resize(B);
    parallel_chunks(B, B >= 64 ? threads : 1, [&](std::size_t blo, std::size_t bhi) {
        for (std::size_t b = blo; b < bhi; ++b) {
            int n = scores.lengths[b];
            UnlabeledTree& t = res.trees[b];
            t.length = n;
            t.spans.reserve(2 * n - 1);
            collect_spans(0, n - 1, static_cast<int>(b), scores, splits, t.spans);
            std::sort(t.spans.begin(), t.spans.end());
            res.best_score[b] = s[cell_of(0, n - 1, N, B) + b];
        }
    });
    return res;
}

std::vector<UnlabeledTree> mbr_decode(const SpanChart& scores, int threads) {
    SpanChart m = marginals(scores, threads);
    return cky(m, threads).trees;
}

LabelAggregate label_aggregate(const LabelGrid& grid, AggregateMode mode) {
    if (grid.n_labels < 1) throw std::invalid_argument("label_aggregate: empty label set");
    if (grid.batch < 1) throw std::invalid_argument("label_aggregate: empty batch");
    const int B = grid.batch, N = grid.n_max, L = grid.n_labels;
    LabelAggregate out;
    out.chart = SpanChart(B, N, grid.lengths, 0.0);
    if (mode == AggregateMode::Max) out.argmax.assign(std::size_t(B) * N * N, 0);
    for (int b = 0; b < B; ++b) {
        int n = grid.lengths[b];
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                const double* cell = &grid.values[(cell_of(i, j, N, B) + b) * L];
                double m = cell[0];
                int arg = 0;
                for (int l = 1; l < L; ++l)
                    if (cell[l] > m) {
                        m = cell[l];
                        arg = l;
                    }
                if (std::isnan(m)) throw std::domain_error("label_aggregate: NaN label score");
                if (mode == AggregateMode::Max) {
                    out.chart.at(b, i, j) = m;
                    out.argmax[cell_of(i, j, N, B) + b] = arg;
                } else {
                    double acc = 0.0;
                    for (int l = 0; l < L; ++l) acc += std::exp(cell[l] - m);
                    out.chart.at(b, i, j) = m + std::log(acc);
                }
            }
    }
    return out;
}

double tree_score(const SpanChart& scores, int b, const UnlabeledTree& tree) {
    if (b < 0 || b >= scores.batch) throw std::invalid_argument("tree_score: bad batch index");
    if (tree.length != scores.lengths[b])
        throw std::invalid_argument("tree_score: tree/length mismatch");
    double total = 0.0;
    for (const auto& [i, j] : tree.spans)
        if (j > i) total += scores.at(b, i, j);
    return total;
}

double reference_inside_single(const double* scores, int n) {
    std::vector<std::vector<double>> s(n, std::vector<double>(n, 0.0));
    for (int w = 1; w < n; ++w)
        for (int i = 0; i + w < n; ++i) {
            int j = i + w;
            double m = kNegInf;
            for (int r = i; r < j; ++r) m = std::max(m, s[i][r] + s[r + 1][j]);
            double acc = 0.0;
            for (int r = i; r < j; ++r) acc += std::exp(s[i][r] + s[r + 1][j] - m);
            s[i][j] = m + std::log(acc) + scores[std::size_t(i) * n + j];
        }
    return s[0][n - 1];
}

namespace {

void reference_backtrack(int i, int j, int n, const std::vector<std::vector<int>>& splits,
                         std::vector<std::pair<int, int>>& out) {
    out.emplace_back(i, j);
    if (i == j) return;
    int k = splits[i][j];
    reference_backtrack(i, k, n, splits, out);
    reference_backtrack(k + 1, j, n, splits, out);
}

}  // namespace

UnlabeledTree reference_cky_single(const double* scores, int n, double* best_score) {
    std::vector<std::vector<double>> s(n, std::vector<double>(n, 0.0));
    std::vector<std::vector<int>> splits(n, std::vector<int>(n, 0));
    for (int w = 1; w < n; ++w)
        for (int i = 0; i + w < n; ++i) {
            int j = i + w;
            double best = kNegInf;
            int arg = i;
            for (int r = i; r < j; ++r) {
                double v = s[i][r] + s[r + 1][j];
                if (v > best) {
                    best = v;
                    arg = r;
                }
            }
            s[i][j] = best + scores[std::size_t(i) * n + j];
            splits[i][j] = arg;
        }
    UnlabeledTree tree;
    tree.length = n;
    reference_backtrack(0, n - 1, n, splits, tree.spans);
    std::sort(tree.spans.begin(), tree.spans.end());
    if (best_score) *best_score = s[0][n - 1];
    return tree;
}

}  // namespace treecrf
