#pragma once

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "treecrf/tree.hpp"

namespace treecrf {

// Malformed bracketed text. `offset` is the byte offset of the failure.
class ParseError : public std::runtime_error {
  public:
    ParseError(const std::string& msg, std::size_t offset)
        : std::runtime_error(msg + " (at offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

  private:
    std::size_t offset_;
};

enum class BinarizeDirection { Left, Right };

// What to do with a part-of-speech layer (every word wrapped by a node whose
// only child is that word). Auto drops the layer when all words are wrapped.
enum class PreterminalPolicy { Keep, Drop, Auto };

// Parses a one-line bracketed tree. "-LRB-"/"-RRB-" word tokens are
// unescaped to "("/")". Preterminals are kept; use read_corpus or
// drop_preterminals for POS-annotated files.
ConstTree parse_bracketed(const std::string& text);

// Single-line bracketed form; "("/")" in words are escaped back to
// -LRB-/-RRB-. parse_bracketed(render_bracketed(t)) == t.
std::string render_bracketed(const ConstTree& tree);
std::string render_bracketed(const BinaryTree& tree);

// True if every word in the tree is wrapped by a non-root node whose only
// child is that word (the shape of a POS-annotated treebank line).
bool has_preterminal_layer(const ConstTree& tree);

// Replaces each non-root single-word wrapper node with its word.
ConstTree drop_preterminals(const ConstTree& tree);

// Collapses maximal unary chains into "X+Y+...+Z" labels, then binarizes
// nodes with more than two children, introducing intermediates labeled with
// the parent label plus a trailing marker. Bare words under width->=2 nodes
// are wrapped the same way.
BinaryTree binarize_cnf(const ConstTree& tree, BinarizeDirection dir = BinarizeDirection::Left);

// Dissolves every marker-labeled node (children promoted, whatever the label
// prefix) and expands "+"-joined labels back into unary chains.
ConstTree debinarize(const BinaryTree& tree);

struct LabelVocab {
    std::vector<std::string> labels;
    std::unordered_map<std::string, int> index;

    int add(const std::string& label);
    // -1 when unknown.
    int find(const std::string& label) const;
    int size() const { return static_cast<int>(labels.size()); }
};

// Distinct labels in order of first occurrence (corpus order, preorder
// within a tree). Throws on an empty corpus.
LabelVocab build_label_vocab(const std::vector<BinaryTree>& trees);
LabelVocab build_label_vocab(const std::vector<ConstTree>& trees);

// Removes subtrees labeled in `empty_labels` (and any constituent left with
// no words). Throws if the whole tree vanishes.
ConstTree strip_empties(const ConstTree& tree, const std::unordered_set<std::string>& empty_labels);

// One bracketed tree per line; blank lines skipped. `policy` applies
// corpus-wide: Auto drops the preterminal layer only when every tree in the
// file has one.
std::vector<ConstTree> read_corpus(std::istream& in,
                                   PreterminalPolicy policy = PreterminalPolicy::Auto);
std::vector<ConstTree> read_corpus_file(const std::string& path,
                                        PreterminalPolicy policy = PreterminalPolicy::Auto);

void write_corpus(std::ostream& out, const std::vector<ConstTree>& trees);

}  // namespace treecrf
