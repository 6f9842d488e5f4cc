#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace treecrf {

// Dense grid of per-span values over a batch: one n_max x n_max chart per
// instance, stored as an n_max x n_max x batch tensor with the batch
// innermost, so each span cell is a contiguous stripe across the batch and
// the width-synchronous sweeps reduce over whole stripes at once. Cell
// (b, i, j) addresses the inclusive word span i..j of instance b; cells
// outside lengths[b] are padding, kept finite (zero), and never read into
// results.
struct SpanChart {
    int batch = 0;
    int n_max = 0;
    std::vector<double> values;  // (i * n_max + j) * batch + b
    std::vector<int> lengths;

    SpanChart() = default;
    SpanChart(int batch_, int n_max_, std::vector<int> lengths_, double fill = 0.0)
        : batch(batch_),
          n_max(n_max_),
          values(std::size_t(batch_) * n_max_ * n_max_, fill),
          lengths(std::move(lengths_)) {}

    double& at(int b, int i, int j) {
        return values[(std::size_t(i) * n_max + j) * batch + b];
    }
    double at(int b, int i, int j) const {
        return values[(std::size_t(i) * n_max + j) * batch + b];
    }
};

// Per-label span scores; labels contiguous within a cell for the softmax
// reductions, batch next so cells stay batch-dense like SpanChart.
struct LabelGrid {
    int batch = 0;
    int n_max = 0;
    int n_labels = 0;
    std::vector<double> values;  // ((i * n_max + j) * batch + b) * n_labels + l
    std::vector<int> lengths;

    LabelGrid() = default;
    LabelGrid(int batch_, int n_max_, int n_labels_, std::vector<int> lengths_, double fill = 0.0)
        : batch(batch_),
          n_max(n_max_),
          n_labels(n_labels_),
          values(std::size_t(batch_) * n_max_ * n_max_ * n_labels_, fill),
          lengths(std::move(lengths_)) {}

    double& at(int b, int i, int j, int l) {
        return values[((std::size_t(i) * n_max + j) * batch + b) * n_labels + l];
    }
    double at(int b, int i, int j, int l) const {
        return values[((std::size_t(i) * n_max + j) * batch + b) * n_labels + l];
    }
};

// Binary bracketing over n words: all n width-1 spans plus n-1 nested
// spans of width >= 2, stored sorted by (begin, end).
struct UnlabeledTree {
    int length = 0;
    std::vector<std::pair<int, int>> spans;

    bool operator==(const UnlabeledTree&) const = default;
    bool contains(int i, int j) const;
};

// Throws std::invalid_argument unless spans form a full binary bracketing.
void validate_unlabeled_tree(const UnlabeledTree& tree);

// For span (i, j) of width >= 2, the split r such that (i, r) and
// (r+1, j) are in the tree.
int tree_split(const UnlabeledTree& tree, int i, int j);

struct InsideResult {
    std::vector<double> log_z;  // per instance
    SpanChart chart;            // completed inside values, log space
};

// Log-semiring inside pass over the batch, width-synchronous: one dense
// sweep per span width, all instances together. Width-1 cells of the input
// are ignored; the chart diagonal is pinned to 0.
InsideResult inside(const SpanChart& scores, int threads = 1);

// d logZ / d s(i, j) for every meaningful cell, via reverse accumulation
// through the inside recursion. Width-1 cells are reported as exactly 1.
SpanChart marginals(const SpanChart& scores, int threads = 1);

struct MarginalResult {
    SpanChart chart;
    std::vector<double> log_z;
};

// Marginals plus the log partition from the same inside sweep.
MarginalResult marginals_with_logz(const SpanChart& scores, int threads = 1);

struct CkyResult {
    std::vector<UnlabeledTree> trees;
    std::vector<double> best_score;
};

// Max-product variant of the inside sweep with split backtracking.
// Ties take the lowest split point.
CkyResult cky(const SpanChart& scores, int threads = 1);

// cky over the marginal chart: maximizes the expected number of correct
// spans rather than the raw score.
std::vector<UnlabeledTree> mbr_decode(const SpanChart& scores, int threads = 1);

enum class AggregateMode { LogSumExp, Max };

struct LabelAggregate {
    SpanChart chart;
    std::vector<int> argmax;  // same cell layout as the chart, Max mode only

    int argmax_at(int b, int i, int j) const {
        return argmax[(std::size_t(i) * chart.n_max + j) * chart.batch + b];
    }
};

// Per-span reduction over labels; LogSumExp feeds the one-stage CRF inside,
// Max (with recorded argmax) feeds one-stage CKY.
LabelAggregate label_aggregate(const LabelGrid& grid, AggregateMode mode);

// Sum of s(i, j) over the tree's spans of width >= 2. Width-1 spans carry
// no bracketing score: they appear in every tree.
double tree_score(const SpanChart& scores, int b, const UnlabeledTree& tree);
inline double tree_score(const SpanChart& scores, const UnlabeledTree& tree) {
    return tree_score(scores, 0, tree);
}

// Naive single-sentence recursions: the unbatched baseline used by the
// bench command and as an independent route in tests. Scores are a dense
// row-major n*n block.
double reference_inside_single(const double* scores, int n);
UnlabeledTree reference_cky_single(const double* scores, int n, double* best_score = nullptr);

}  // namespace treecrf
