#pragma once

#include <functional>
#include <span>
#include <vector>

#include "treecrf/chart.hpp"

namespace treecrf {
namespace oracle {

// All binary bracketings over n words. Guarded at max_n (Catalan growth);
// Catalan(11) = 58786 keeps the default under a second.
struct TreeEnumeration {
    int n = 0;
    std::vector<UnlabeledTree> trees;
};

TreeEnumeration enumerate_trees(int n, int max_n = 12);

// logsumexp over the enumeration of tree_score. Scores are a dense
// row-major n*n block for a single sentence.
double brute_logZ(const double* scores, int n);

// p((i,j)|x) by direct summation over the enumeration; row-major n*n out.
std::vector<double> brute_marginals(const double* scores, int n);

// Joint enumeration over trees and label assignments of their width->=2
// spans; label scores indexed (i*n + j)*n_labels + l.
double brute_one_stage_logZ(const double* label_scores, int n, int n_labels);

// Central differences (f(x+h) - f(x-h)) / 2h per coordinate. `coords` are
// perturbed in place and restored; eval() must reflect the perturbation.
std::vector<double> finite_diff(std::span<double> coords, const std::function<double()>& eval,
                                double step);

// Spec-shaped overload over an explicit point vector.
std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& loss_fn,
                                std::vector<double> point, double step);

}  // namespace oracle
}  // namespace treecrf
