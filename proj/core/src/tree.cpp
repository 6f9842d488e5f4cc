#include "treecrf/tree.hpp"

#include <stdexcept>

namespace treecrf {

const std::string kStarMarker = "\xe2\x88\x97";  // "∗"

int tree_length(const TreeNode& root) {
    if (root.is_word) return 1;
    int n = 0;
    for (const TreeNode& c : root.children) n += tree_length(c);
    return n;
}

namespace {

void collect_tokens(const TreeNode& node, std::vector<std::string>& out) {
    if (node.is_word) {
        out.push_back(node.label);
        return;
    }
    for (const TreeNode& c : node.children) collect_tokens(c, out);
}

// Returns the index one past the rightmost word under `node`.
int collect_constituents(const TreeNode& node, int begin, std::vector<Constituent>& out) {
    if (node.is_word) return begin + 1;
    std::size_t slot = out.size();
    out.push_back({begin, 0, node.label});
    int pos = begin;
    for (const TreeNode& c : node.children) pos = collect_constituents(c, pos, out);
    out[slot].end = pos - 1;
    return pos;
}

bool label_ok(const std::string& s) {
    if (s.empty()) return false;
    for (char ch : s) {
        if (ch == '(' || ch == ')' || ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r')
            return false;
    }
    return true;
}

bool word_ok(const std::string& s) {
    if (s.empty()) return false;
    for (char ch : s) {
        if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') return false;
    }
    return true;
}

void validate_node(const TreeNode& node) {
    if (node.is_word) {
        if (!node.children.empty())
            throw std::invalid_argument("word node must not have children: " + node.label);
        if (!word_ok(node.label))
            throw std::invalid_argument("invalid word token: '" + node.label + "'");
        return;
    }
    if (!label_ok(node.label))
        throw std::invalid_argument("invalid constituent label: '" + node.label + "'");
    if (node.children.empty())
        throw std::invalid_argument("empty constituent: " + node.label);
    for (const TreeNode& c : node.children) validate_node(c);
}

void validate_binary_node(const TreeNode& node) {
    if (node.is_word) return;
    int width = tree_length(node);
    if (width == 1) {
        if (node.children.size() != 1 || !node.children[0].is_word)
            throw std::invalid_argument("width-1 CNF constituent must wrap exactly one word: " +
                                        node.label);
        return;
    }
    if (node.children.size() != 2 || node.children[0].is_word || node.children[1].is_word)
        throw std::invalid_argument("CNF constituent of width >= 2 must have two constituent children: " +
                                    node.label);
    validate_binary_node(node.children[0]);
    validate_binary_node(node.children[1]);
}

}  // namespace

std::vector<std::string> tree_tokens(const TreeNode& root) {
    std::vector<std::string> out;
    collect_tokens(root, out);
    return out;
}

std::vector<Constituent> tree_constituents(const TreeNode& root) {
    std::vector<Constituent> out;
    collect_constituents(root, 0, out);
    return out;
}

void validate_tree(const TreeNode& root) {
    if (root.is_word) throw std::invalid_argument("tree root must be a constituent");
    validate_node(root);
}

void validate_binary_tree(const TreeNode& root) {
    validate_tree(root);
    validate_binary_node(root);
}

}  // namespace treecrf
