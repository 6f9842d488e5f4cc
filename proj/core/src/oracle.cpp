#include "treecrf/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace treecrf {
namespace oracle {

namespace {

// Bracketings of the span [i, j], each as a sorted span list.
std::vector<std::vector<std::pair<int, int>>> enumerate_span(int i, int j) {
    std::vector<std::vector<std::pair<int, int>>> out;
    if (i == j) {
        out.push_back({{i, i}});
        return out;
    }
    for (int r = i; r < j; ++r) {
        auto lefts = enumerate_span(i, r);
        auto rights = enumerate_span(r + 1, j);
        for (const auto& l : lefts)
            for (const auto& rgt : rights) {
                std::vector<std::pair<int, int>> spans;
                spans.reserve(l.size() + rgt.size() + 1);
                spans.insert(spans.end(), l.begin(), l.end());
                spans.insert(spans.end(), rgt.begin(), rgt.end());
                spans.emplace_back(i, j);
                out.push_back(std::move(spans));
            }
    }
    return out;
}

double logsumexp(const std::vector<double>& xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - m);
    return m + std::log(acc);
}

double span_sum(const std::vector<std::pair<int, int>>& spans, const double* scores, int n) {
    double total = 0.0;
    for (const auto& [i, j] : spans)
        if (j > i) total += scores[std::size_t(i) * n + j];
    return total;
}

}  // namespace

TreeEnumeration enumerate_trees(int n, int max_n) {
    if (n < 1 || n > max_n)
        throw std::invalid_argument("enumerate_trees: n out of range [1, " + std::to_string(max_n) + "]");
    TreeEnumeration res;
    res.n = n;
    for (auto& spans : enumerate_span(0, n - 1)) {
        std::sort(spans.begin(), spans.end());
        res.trees.push_back(UnlabeledTree{n, std::move(spans)});
    }
    return res;
}

double brute_logZ(const double* scores, int n) {
    TreeEnumeration e = enumerate_trees(n);
    std::vector<double> tree_scores;
    tree_scores.reserve(e.trees.size());
    for (const UnlabeledTree& t : e.trees) tree_scores.push_back(span_sum(t.spans, scores, n));
    return logsumexp(tree_scores);
}

std::vector<double> brute_marginals(const double* scores, int n) {
    TreeEnumeration e = enumerate_trees(n);
    std::vector<double> tree_scores;
    tree_scores.reserve(e.trees.size());
    for (const UnlabeledTree& t : e.trees) tree_scores.push_back(span_sum(t.spans, scores, n));
    double log_z = logsumexp(tree_scores);

    std::vector<double> out(std::size_t(n) * n, 0.0);
    for (std::size_t t = 0; t < e.trees.size(); ++t) {
        double p = std::exp(tree_scores[t] - log_z);
        for (const auto& [i, j] : e.trees[t].spans) out[std::size_t(i) * n + j] += p;
    }
    return out;
}

double brute_one_stage_logZ(const double* label_scores, int n, int n_labels) {
    if (n_labels < 1) throw std::invalid_argument("brute_one_stage_logZ: empty label set");
    TreeEnumeration e = enumerate_trees(n);
    std::vector<double> terms;
    for (const UnlabeledTree& t : e.trees) {
        std::vector<std::pair<int, int>> wide;
        for (const auto& s : t.spans)
            if (s.second > s.first) wide.push_back(s);
        // Every assignment of one label per width->=2 span.
        std::vector<int> assign(wide.size(), 0);
        while (true) {
            double total = 0.0;
            for (std::size_t k = 0; k < wide.size(); ++k) {
                auto [i, j] = wide[k];
                total += label_scores[(std::size_t(i) * n + j) * n_labels + assign[k]];
            }
            terms.push_back(total);
            std::size_t pos = 0;
            while (pos < assign.size() && ++assign[pos] == n_labels) assign[pos++] = 0;
            if (pos == assign.size()) break;
        }
    }
    return logsumexp(terms);
}

std::vector<double> finite_diff(std::span<double> coords, const std::function<double()>& eval,
                                double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff: step must be positive");
    std::vector<double> grad(coords.size());
    for (std::size_t k = 0; k < coords.size(); ++k) {
        double saved = coords[k];
        coords[k] = saved + step;
        double up = eval();
        coords[k] = saved - step;
        double down = eval();
        coords[k] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw std::domain_error("finite_diff: non-finite evaluation");
        grad[k] = (up - down) / (2.0 * step);
    }
    return grad;
}

std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& loss_fn,
                                std::vector<double> point, double step) {
    return finite_diff(std::span<double>(point),
                       [&] { return loss_fn(point); }, step);
}

}  // namespace oracle
}  // namespace treecrf
