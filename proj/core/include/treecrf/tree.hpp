#pragma once

#include <string>
#include <vector>

namespace treecrf {

// A node of a bracketed tree. Either a word (surface form in `label`,
// no children) or a labeled constituent with one or more children.
struct TreeNode {
    std::string label;
    bool is_word = false;
    std::vector<TreeNode> children;

    bool operator==(const TreeNode&) const = default;
};

// Labeled constituent over an inclusive word-index span [begin, end].
struct Constituent {
    int begin = 0;
    int end = 0;
    std::string label;

    bool operator==(const Constituent&) const = default;
};

// n-ary constituency tree. Arbitrary arity, unary chains permitted.
struct ConstTree {
    TreeNode root;

    bool operator==(const ConstTree&) const = default;
};

// CNF tree: every constituent of width >= 2 has exactly two constituent
// children; every width-1 constituent wraps exactly one word. Labels may
// carry a trailing binarization marker or "+"-joined collapsed chains.
struct BinaryTree {
    TreeNode root;

    bool operator==(const BinaryTree&) const = default;
};

// Marker appended to labels introduced by binarization (UTF-8 "∗").
extern const std::string kStarMarker;

int tree_length(const TreeNode& root);
std::vector<std::string> tree_tokens(const TreeNode& root);

// All labeled constituents in preorder, with inclusive spans.
std::vector<Constituent> tree_constituents(const TreeNode& root);

// Checks labels (non-empty, no whitespace/parentheses), words (non-empty,
// no whitespace), and that every constituent has at least one child.
// Throws std::invalid_argument on violation.
void validate_tree(const TreeNode& root);

// validate_tree plus the CNF shape invariants above.
void validate_binary_tree(const TreeNode& root);

}  // namespace treecrf
