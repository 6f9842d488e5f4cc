#include "treecrf/treebank.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace treecrf {

namespace {

bool ends_with_star(const std::string& label) {
    return label.size() >= kStarMarker.size() &&
           label.compare(label.size() - kStarMarker.size(), kStarMarker.size(), kStarMarker) == 0;
}

std::string unescape_word(const std::string& w) {
    if (w == "-LRB-") return "(";
    if (w == "-RRB-") return ")";
    return w;
}

std::string escape_word(const std::string& w) {
    if (w == "(") return "-LRB-";
    if (w == ")") return "-RRB-";
    return w;
}

struct Parser {
    const std::string& text;
    std::size_t pos = 0;

    explicit Parser(const std::string& t) : text(t) {}

    void skip_space() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }

    std::string atom() {
        std::size_t start = pos;
        while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
               text[pos] != '(' && text[pos] != ')')
            ++pos;
        if (pos == start) throw ParseError("expected token", pos);
        return text.substr(start, pos - start);
    }

    TreeNode node() {
        skip_space();
        if (pos >= text.size() || text[pos] != '(') throw ParseError("expected '('", pos);
        std::size_t open = pos;
        ++pos;
        skip_space();
        if (pos < text.size() && (text[pos] == '(' || text[pos] == ')'))
            throw ParseError("empty constituent label", pos);
        TreeNode n;
        n.label = atom();
        skip_space();
        while (pos < text.size() && text[pos] != ')') {
            if (text[pos] == '(') {
                n.children.push_back(node());
            } else {
                TreeNode w;
                w.is_word = true;
                w.label = unescape_word(atom());
                n.children.push_back(std::move(w));
            }
            skip_space();
        }
        if (pos >= text.size()) throw ParseError("unbalanced parentheses", open);
        ++pos;  // ')'
        if (n.children.empty()) throw ParseError("empty constituent", open);
        return n;
    }
};

void render_node(const TreeNode& node, std::string& out) {
    if (node.is_word) {
        out += escape_word(node.label);
        return;
    }
    out += '(';
    out += node.label;
    for (const TreeNode& c : node.children) {
        out += ' ';
        render_node(c, out);
    }
    out += ')';
}

bool all_words_wrapped(const TreeNode& node, bool is_root) {
    if (node.is_word) return false;  // bare word under its parent
    if (!is_root && node.children.size() == 1 && node.children[0].is_word) return true;
    for (const TreeNode& c : node.children) {
        if (c.is_word) return false;
        if (!all_words_wrapped(c, false)) return false;
    }
    return true;
}

TreeNode strip_preterminals(const TreeNode& node, bool is_root) {
    if (node.is_word) return node;
    if (!is_root && node.children.size() == 1 && node.children[0].is_word)
        return node.children[0];
    TreeNode out;
    out.label = node.label;
    out.children.reserve(node.children.size());
    for (const TreeNode& c : node.children) out.children.push_back(strip_preterminals(c, false));
    return out;
}

// --- binarization ---

// A constituent node with exactly one constituent child over the same span
// is a unary production; collapse maximal chains into one joined label.
TreeNode collapse_unaries(const TreeNode& node) {
    if (node.is_word) return node;
    std::string label = node.label;
    const TreeNode* cur = &node;
    while (cur->children.size() == 1 && !cur->children[0].is_word) {
        cur = &cur->children[0];
        label += '+';
        label += cur->label;
    }
    TreeNode out;
    out.label = std::move(label);
    out.children.reserve(cur->children.size());
    for (const TreeNode& c : cur->children) out.children.push_back(collapse_unaries(c));
    return out;
}

TreeNode binarize_node(const TreeNode& node, BinarizeDirection dir) {
    if (node.children.size() == 1 && node.children[0].is_word) return node;  // leaf constituent
    const std::string star_label = node.label + kStarMarker;
    std::vector<TreeNode> kids;
    kids.reserve(node.children.size());
    for (const TreeNode& c : node.children) {
        if (c.is_word) {
            TreeNode wrap;
            wrap.label = star_label;
            wrap.children.push_back(c);
            kids.push_back(std::move(wrap));
        } else {
            kids.push_back(binarize_node(c, dir));
        }
    }
    if (dir == BinarizeDirection::Left) {
        while (kids.size() > 2) {
            TreeNode merged;
            merged.label = star_label;
            merged.children.push_back(std::move(kids[0]));
            merged.children.push_back(std::move(kids[1]));
            kids.erase(kids.begin(), kids.begin() + 2);
            kids.insert(kids.begin(), std::move(merged));
        }
    } else {
        while (kids.size() > 2) {
            TreeNode merged;
            merged.label = star_label;
            merged.children.push_back(std::move(kids[kids.size() - 2]));
            merged.children.push_back(std::move(kids[kids.size() - 1]));
            kids.pop_back();
            kids.pop_back();
            kids.push_back(std::move(merged));
        }
    }
    TreeNode out;
    out.label = node.label;
    out.children = std::move(kids);
    return out;
}

// --- debinarization ---

std::vector<std::string> split_plus(const std::string& label) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        std::size_t p = label.find('+', start);
        if (p == std::string::npos) {
            parts.push_back(label.substr(start));
            break;
        }
        parts.push_back(label.substr(start, p - start));
        start = p + 1;
    }
    // A label like "X+" or "+X" keeps its empty piece attached to a neighbor
    // rather than producing an unlabeled node.
    std::vector<std::string> clean;
    for (const std::string& s : parts)
        if (!s.empty()) clean.push_back(s);
    if (clean.empty()) clean.push_back(label);
    return clean;
}

void dissolve_stars(const TreeNode& node, std::vector<TreeNode>& out);

std::vector<TreeNode> debinarize_children(const TreeNode& node) {
    std::vector<TreeNode> out;
    for (const TreeNode& c : node.children) dissolve_stars(c, out);
    return out;
}

TreeNode expand_unaries(const TreeNode& node) {
    std::vector<std::string> parts = split_plus(node.label);
    TreeNode bottom;
    bottom.label = parts.back();
    bottom.children = debinarize_children(node);
    for (std::size_t i = parts.size() - 1; i-- > 0;) {
        TreeNode wrap;
        wrap.label = parts[i];
        wrap.children.push_back(std::move(bottom));
        bottom = std::move(wrap);
    }
    return bottom;
}

void dissolve_stars(const TreeNode& node, std::vector<TreeNode>& out) {
    if (node.is_word) {
        out.push_back(node);
        return;
    }
    if (ends_with_star(node.label)) {
        // The label string before the marker is ignored; promote children.
        for (const TreeNode& c : node.children) dissolve_stars(c, out);
        return;
    }
    out.push_back(expand_unaries(node));
}

TreeNode strip_empty_nodes(const TreeNode& node, const std::unordered_set<std::string>& empty_labels,
                           bool& kept) {
    if (node.is_word) {
        kept = true;
        return node;
    }
    if (empty_labels.count(node.label)) {
        kept = false;
        return {};
    }
    TreeNode out;
    out.label = node.label;
    for (const TreeNode& c : node.children) {
        bool child_kept = false;
        TreeNode stripped = strip_empty_nodes(c, empty_labels, child_kept);
        if (child_kept) out.children.push_back(std::move(stripped));
    }
    kept = !out.children.empty();
    return out;
}

template <typename TreeT>
LabelVocab build_vocab_impl(const std::vector<TreeT>& trees) {
    if (trees.empty()) throw std::invalid_argument("build_label_vocab: empty corpus");
    LabelVocab vocab;
    for (const TreeT& t : trees)
        for (const Constituent& c : tree_constituents(t.root)) vocab.add(c.label);
    return vocab;
}

}  // namespace

ConstTree parse_bracketed(const std::string& text) {
    Parser p(text);
    TreeNode root = p.node();
    p.skip_space();
    if (p.pos != text.size()) throw ParseError("trailing text after tree", p.pos);
    validate_tree(root);
    return ConstTree{std::move(root)};
}

std::string render_bracketed(const ConstTree& tree) {
    std::string out;
    render_node(tree.root, out);
    return out;
}

std::string render_bracketed(const BinaryTree& tree) {
    std::string out;
    render_node(tree.root, out);
    return out;
}

bool has_preterminal_layer(const ConstTree& tree) {
    return all_words_wrapped(tree.root, true);
}

ConstTree drop_preterminals(const ConstTree& tree) {
    ConstTree out{strip_preterminals(tree.root, true)};
    validate_tree(out.root);
    return out;
}

BinaryTree binarize_cnf(const ConstTree& tree, BinarizeDirection dir) {
    TreeNode collapsed = collapse_unaries(tree.root);
    BinaryTree out{binarize_node(collapsed, dir)};
    validate_binary_tree(out.root);
    return out;
}

ConstTree debinarize(const BinaryTree& tree) {
    TreeNode root = tree.root;
    // A marker-labeled root has no ancestor to dissolve into; keep the node
    // under its base label.
    if (ends_with_star(root.label)) root.label.resize(root.label.size() - kStarMarker.size());
    if (root.label.empty()) root.label = "X";
    ConstTree out{expand_unaries(root)};
    validate_tree(out.root);
    return out;
}

int LabelVocab::add(const std::string& label) {
    auto it = index.find(label);
    if (it != index.end()) return it->second;
    int id = static_cast<int>(labels.size());
    labels.push_back(label);
    index.emplace(label, id);
    return id;
}

int LabelVocab::find(const std::string& label) const {
    auto it = index.find(label);
    return it == index.end() ? -1 : it->second;
}

LabelVocab build_label_vocab(const std::vector<BinaryTree>& trees) {
    return build_vocab_impl(trees);
}

LabelVocab build_label_vocab(const std::vector<ConstTree>& trees) {
    return build_vocab_impl(trees);
}

ConstTree strip_empties(const ConstTree& tree, const std::unordered_set<std::string>& empty_labels) {
    bool kept = false;
    TreeNode root = strip_empty_nodes(tree.root, empty_labels, kept);
    if (!kept) throw std::invalid_argument("strip_empties: tree has no non-empty words left");
    return ConstTree{std::move(root)};
}

std::vector<ConstTree> read_corpus(std::istream& in, PreterminalPolicy policy) {
    std::vector<ConstTree> trees;
    std::string line;
    std::size_t line_no = 0;
    bool all_pos = true;
    while (std::getline(in, line)) {
        ++line_no;
        bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
        if (blank) continue;
        try {
            trees.push_back(parse_bracketed(line));
        } catch (const ParseError& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), e.offset());
        }
        if (all_pos && !has_preterminal_layer(trees.back())) all_pos = false;
    }
    bool drop = policy == PreterminalPolicy::Drop || (policy == PreterminalPolicy::Auto && all_pos && !trees.empty());
    if (drop)
        for (ConstTree& t : trees) t = drop_preterminals(t);
    return trees;
}

std::vector<ConstTree> read_corpus_file(const std::string& path, PreterminalPolicy policy) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open tree file: " + path);
    return read_corpus(in, policy);
}

void write_corpus(std::ostream& out, const std::vector<ConstTree>& trees) {
    for (const ConstTree& t : trees) out << render_bracketed(t) << '\n';
}

}  // namespace treecrf
