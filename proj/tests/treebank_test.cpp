#include <doctest.h>

#include <random>
#include <sstream>
#include <unordered_set>

#include "treecrf/treebank.hpp"
#include "test_util.hpp"

using namespace treecrf;

namespace {

const std::string kFig1a = "(S (NP I) (ADVP really) (VP love (NP this game)))";

std::string star(const std::string& base) { return base + kStarMarker; }

}  // namespace

TEST_CASE("star marker is the expected codepoint") {
    CHECK(kStarMarker == "∗");
}

TEST_CASE("parse_bracketed builds the expected structure") {
    ConstTree t = parse_bracketed(kFig1a);
    CHECK(tree_length(t.root) == 5);
    CHECK(tree_tokens(t.root) == std::vector<std::string>{"I", "really", "love", "this", "game"});
    auto cons = tree_constituents(t.root);
    REQUIRE(cons.size() == 5);
    CHECK(cons[0] == Constituent{0, 4, "S"});
    CHECK(cons[1] == Constituent{0, 0, "NP"});
    CHECK(cons[2] == Constituent{1, 1, "ADVP"});
    CHECK(cons[3] == Constituent{2, 4, "VP"});
    CHECK(cons[4] == Constituent{3, 4, "NP"});
}

TEST_CASE("parse_bracketed smallest tree") {
    ConstTree t = parse_bracketed("(X w)");
    CHECK(tree_length(t.root) == 1);
    auto cons = tree_constituents(t.root);
    REQUIRE(cons.size() == 1);
    CHECK(cons[0] == Constituent{0, 0, "X"});
}

TEST_CASE("parse_bracketed reports malformed input with an offset") {
    CHECK_THROWS_AS(parse_bracketed("(S (NP I"), ParseError);
    try {
        parse_bracketed("(S (NP I");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 3);  // the unclosed '('
    }
    CHECK_THROWS_AS(parse_bracketed(""), ParseError);
    CHECK_THROWS_AS(parse_bracketed("(S (NP a)) extra"), ParseError);
    CHECK_THROWS_AS(parse_bracketed("(S ())"), ParseError);
}

TEST_CASE("render round trips and normalizes whitespace") {
    CHECK(render_bracketed(parse_bracketed(kFig1a)) == kFig1a);
    std::string spaced = "( S  (NP I)   (ADVP really) (VP love (NP this game)) )";
    CHECK(render_bracketed(parse_bracketed(spaced)) == kFig1a);
    CHECK(render_bracketed(parse_bracketed("(X w)")) == "(X w)");
}

TEST_CASE("labels with parentheses are rejected at construction") {
    TreeNode word{"w", true, {}};
    TreeNode bad{"X(", false, {word}};
    CHECK_THROWS_AS(validate_tree(bad), std::invalid_argument);
}

TEST_CASE("parenthesis tokens are stored escaped in bracketed text") {
    ConstTree t = parse_bracketed("(S (X -LRB-) (X a) (X -RRB-))");
    CHECK(tree_tokens(t.root) == std::vector<std::string>{"(", "a", ")"});
    CHECK(render_bracketed(t) == "(S (X -LRB-) (X a) (X -RRB-))");
}

TEST_CASE("binarize_cnf reproduces the left-binarized reference tree") {
    BinaryTree bt = binarize_cnf(parse_bracketed(kFig1a), BinarizeDirection::Left);
    std::string want = "(S (" + star("S") + " (NP I) (ADVP really)) (VP (" + star("VP") +
                       " love) (NP (" + star("NP") + " this) (" + star("NP") + " game))))";
    CHECK(render_bracketed(bt) == want);
    CHECK(tree_constituents(bt.root).size() == 9);  // 2n-1 for n=5
}

TEST_CASE("binarize_cnf right direction groups the right children") {
    ConstTree t = parse_bracketed("(S (A a) (B b) (C c))");
    BinaryTree bt = binarize_cnf(t, BinarizeDirection::Right);
    CHECK(render_bracketed(bt) == "(S (A a) (" + star("S") + " (B b) (C c)))");
}

TEST_CASE("unary chains collapse into one joined label") {
    BinaryTree bt = binarize_cnf(parse_bracketed("(X (Y (Z w)))"));
    auto cons = tree_constituents(bt.root);
    REQUIRE(cons.size() == 1);
    CHECK(cons[0] == Constituent{0, 0, "X+Y+Z"});
}

TEST_CASE("already binary trees are a fixed point") {
    ConstTree t = parse_bracketed("(S (A (B x) (C y)) (D z))");
    BinaryTree bt = binarize_cnf(t);
    CHECK(render_bracketed(bt) == render_bracketed(t));
}

TEST_CASE("debinarize inverts binarization on the reference pair") {
    BinaryTree bt = binarize_cnf(parse_bracketed(kFig1a));
    CHECK(render_bracketed(debinarize(bt)) == kFig1a);
}

TEST_CASE("debinarize expands joined labels into unary chains") {
    BinaryTree bt = binarize_cnf(parse_bracketed("(X (Y (Z w)))"));
    CHECK(render_bracketed(debinarize(bt)) == "(X (Y (Z w)))");
}

TEST_CASE("debinarize dissolves marker nodes regardless of the label prefix") {
    // A VP whose left child came out labeled PP-star: the prefix is ignored.
    std::string text = "(S (VP (" + star("PP") + " (A a) (B b)) (NP (C c) (D d))))";
    ConstTree got = debinarize(BinaryTree{parse_bracketed(text).root});
    CHECK(render_bracketed(got) == "(S (VP (A a) (B b) (NP (C c) (D d))))");
}

TEST_CASE("debinarize tolerates a marker-labeled root") {
    std::string text = "(" + star("VP") + " (A a) (B b))";
    ConstTree got = debinarize(BinaryTree{parse_bracketed(text).root});
    CHECK(render_bracketed(got) == "(VP (A a) (B b))");
}

TEST_CASE("round trip holds on random n-ary trees, both directions") {
    std::mt19937_64 rng(20240811);
    for (int rep = 0; rep < 300; ++rep) {
        ConstTree t = testutil::random_tree(rng);
        int n = tree_length(t.root);
        for (BinarizeDirection dir : {BinarizeDirection::Left, BinarizeDirection::Right}) {
            BinaryTree bt = binarize_cnf(t, dir);
            CHECK(static_cast<int>(tree_constituents(bt.root).size()) == 2 * n - 1);
            CHECK(debinarize(bt) == t);
        }
    }
}

TEST_CASE("binarize output labels come from the source, a marker, or a join") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        ConstTree t = testutil::random_tree(rng);
        std::unordered_set<std::string> source;
        for (const Constituent& c : tree_constituents(t.root)) source.insert(c.label);
        for (const Constituent& c : tree_constituents(binarize_cnf(t).root)) {
            bool starred = c.label.size() > kStarMarker.size() &&
                           c.label.compare(c.label.size() - kStarMarker.size(), kStarMarker.size(),
                                           kStarMarker) == 0;
            bool joined = c.label.find('+') != std::string::npos;
            CHECK((source.count(c.label) || starred || joined));
        }
    }
}

TEST_CASE("binarize_cnf is deterministic") {
    std::mt19937_64 rng(99);
    ConstTree t = testutil::random_tree(rng);
    CHECK(binarize_cnf(t) == binarize_cnf(t));
}

TEST_CASE("build_label_vocab orders by first occurrence") {
    BinaryTree bt = binarize_cnf(parse_bracketed(kFig1a));
    LabelVocab v = build_label_vocab(std::vector<BinaryTree>{bt});
    CHECK(v.size() == 7);
    CHECK(v.labels == std::vector<std::string>{"S", star("S"), "NP", "ADVP", "VP", star("VP"),
                                               star("NP")});
    CHECK(v.find("VP") == 4);
    CHECK(v.find("missing") == -1);
}

TEST_CASE("build_label_vocab trivial and error cases") {
    LabelVocab v = build_label_vocab(std::vector<ConstTree>{parse_bracketed("(X w)")});
    CHECK(v.size() == 1);
    CHECK(v.labels[0] == "X");
    CHECK_THROWS_AS(build_label_vocab(std::vector<ConstTree>{}), std::invalid_argument);
}

TEST_CASE("strip_empties removes marked subtrees and recompacts indices") {
    ConstTree t = parse_bracketed("(S (NP a b) (-NONE- *T*) (VP c d))");
    ConstTree got = strip_empties(t, {"-NONE-"});
    CHECK(render_bracketed(got) == "(S (NP a b) (VP c d))");
    auto cons = tree_constituents(got.root);
    CHECK(cons[0] == Constituent{0, 3, "S"});
    CHECK(cons[2] == Constituent{2, 3, "VP"});
}

TEST_CASE("strip_empties leaves clean trees unchanged") {
    ConstTree t = parse_bracketed(kFig1a);
    CHECK(strip_empties(t, {"-NONE-"}) == t);
}

TEST_CASE("strip_empties removes nodes emptied transitively") {
    // Manual trace: X contains only empties at depth 3, so X itself goes.
    ConstTree t = parse_bracketed("(S (X (Y (-NONE- a) (-NONE- b))) (VP c d))");
    ConstTree got = strip_empties(t, {"-NONE-"});
    CHECK(render_bracketed(got) == "(S (VP c d))");
    CHECK_THROWS_AS(strip_empties(parse_bracketed("(-NONE- x)"), {"-NONE-"}), std::invalid_argument);
}

TEST_CASE("read_corpus skips blank lines and reports the failing line") {
    std::istringstream in("(S (A a) (B b))\n\n(X w)\n");
    auto trees = read_corpus(in);
    CHECK(trees.size() == 2);
    std::istringstream bad("(S (A a))\n(S (NP b\n");
    CHECK_THROWS_WITH_AS(read_corpus(bad), doctest::Contains("line 2"), ParseError);
}

TEST_CASE("read_corpus drops a part-of-speech layer when every word is wrapped") {
    std::istringstream in(
        "(S (NP (PRP I)) (VP (VBP love) (NP (DT this) (NN game))))\n"
        "(S (NP (NNP John)) (VP (VBZ sleeps)))\n");
    auto trees = read_corpus(in, PreterminalPolicy::Auto);
    CHECK(render_bracketed(trees[0]) == "(S (NP I) (VP love (NP this game)))");
    CHECK(render_bracketed(trees[1]) == "(S (NP John) (VP sleeps))");
}

TEST_CASE("read_corpus keeps the layer when any tree has a bare word") {
    std::istringstream in("(S (NP (PRP I)) (VP (VBP love) (NP (DT this) (NN game))))\n" + kFig1a +
                          "\n");
    auto trees = read_corpus(in, PreterminalPolicy::Auto);
    CHECK(render_bracketed(trees[0]) ==
          "(S (NP (PRP I)) (VP (VBP love) (NP (DT this) (NN game))))");
    CHECK(render_bracketed(trees[1]) == kFig1a);
}

TEST_CASE("single-word trees never lose their root") {
    std::istringstream in("(X w)\n");
    auto trees = read_corpus(in, PreterminalPolicy::Drop);
    CHECK(render_bracketed(trees[0]) == "(X w)");
}
