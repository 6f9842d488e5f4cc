#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "treecrf/commands.hpp"
#include "treecrf/treebank.hpp"
#include "test_util.hpp"

using namespace treecrf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path dir;
    TempDir() {
        dir = fs::temp_directory_path() /
              ("treecrf_cmd_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::create_directories(dir);
    }
    ~TempDir() { fs::remove_all(dir); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name, const std::string& body) const {
        fs::path p = dir / name;
        std::ofstream out(p);
        out << body;
        return p.string();
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string corpus_text(int count, std::uint64_t seed) {
    testutil::PcfgSampler sampler(seed);
    std::ostringstream out;
    for (const ConstTree& t : sampler.corpus(count)) out << render_bracketed(t) << "\n";
    return out.str();
}

RunConfig small_train_config(const TempDir& tmp, const std::string& train_path,
                             const std::string& dev_path) {
    RunConfig cfg;
    cfg.train_path = train_path;
    cfg.dev_path = dev_path;
    cfg.model_path = tmp.path("model.bin");
    cfg.seed = 5;
    cfg.threads = 1;
    cfg.train.batch_words = 120;
    cfg.train.max_epochs = 10;
    cfg.train.patience = 10;
    cfg.train.dropout = 0.0;
    cfg.train.optimizer.lr = 1e-2;
    cfg.scorer = testutil::tiny_scorer_config();
    return cfg;
}

int train_into(const TempDir& tmp, RunConfig& cfg, std::string log_name = "log.jsonl") {
    cfg.output_path = tmp.path(log_name);
    std::ostringstream out, err;
    int rc = cmd_train(cfg, out, err);
    INFO(err.str());
    return rc;
}

}  // namespace

TEST_CASE("cmd_train writes a checkpoint and a per-epoch log") {
    TempDir tmp;
    std::string train = tmp.file("train.trees", corpus_text(12, 7));
    std::string dev = tmp.file("dev.trees", corpus_text(4, 8));
    RunConfig cfg = small_train_config(tmp, train, dev);
    CHECK(train_into(tmp, cfg) == kExitOk);
    CHECK(fs::exists(cfg.model_path));

    std::ifstream log(cfg.output_path);
    std::string line;
    int epochs = 0;
    bool config_echoed = false;
    while (std::getline(log, line)) {
        if (line.find("\"config\"") != std::string::npos) config_echoed = true;
        if (line.find("\"epoch\"") != std::string::npos) ++epochs;
    }
    CHECK(config_echoed);
    CHECK(epochs >= 1);
}

TEST_CASE("cmd_train exit codes for missing inputs and bad mode pairs") {
    TempDir tmp;
    std::ostringstream out, err;
    RunConfig cfg;
    cfg.dev_path = tmp.file("dev.trees", "(X w)\n");
    cfg.model_path = tmp.path("m.bin");
    CHECK(cmd_train(cfg, out, err) == kExitUsage);
    CHECK(err.str().find("train") != std::string::npos);

    cfg.train_path = tmp.path("missing.trees");
    std::ostringstream err2;
    CHECK(cmd_train(cfg, out, err2) == kExitUsage);
    CHECK(err2.str().find(cfg.train_path) != std::string::npos);

    cfg.train_path = tmp.file("train.trees", "(X w)\n");
    cfg.loss = "maxmargin";
    cfg.stage = "one";
    std::ostringstream err3;
    CHECK(cmd_train(cfg, out, err3) == kExitUsage);
}

TEST_CASE("train, parse, evaluate round trip on a learnable corpus") {
    TempDir tmp;
    std::string train = tmp.file("train.trees", corpus_text(24, 17));
    RunConfig cfg = small_train_config(tmp, train, train);
    cfg.train.max_epochs = 90;
    cfg.train.patience = 90;
    REQUIRE(train_into(tmp, cfg) == kExitOk);

    // parse the training sentences back from raw text
    testutil::PcfgSampler sampler(17);
    std::ostringstream raw;
    std::vector<ConstTree> gold = sampler.corpus(24);
    for (const ConstTree& t : gold) {
        auto toks = tree_tokens(t.root);
        for (std::size_t k = 0; k < toks.size(); ++k) raw << (k ? " " : "") << toks[k];
        raw << "\n";
    }
    RunConfig pcfg;
    pcfg.model_path = cfg.model_path;
    pcfg.input_path = tmp.file("input.txt", raw.str());
    pcfg.output_path = tmp.path("pred.trees");
    pcfg.threads = 1;
    std::ostringstream out, err;
    REQUIRE(cmd_parse(pcfg, out, err) == kExitOk);

    std::ifstream pred(pcfg.output_path);
    std::string line;
    int lines = 0;
    while (std::getline(pred, line)) {
        if (!line.empty()) {
            CHECK_NOTHROW(parse_bracketed(line));
            ++lines;
        }
    }
    CHECK(lines == 24);

    RunConfig ecfg;
    ecfg.gold_path = train;
    ecfg.input_path = pcfg.output_path;
    std::ostringstream eout, eerr;
    REQUIRE(cmd_evaluate(ecfg, eout, eerr) == kExitOk);
    INFO(eout.str());
    CHECK(eout.str().find("P ") != std::string::npos);

    // the trained model should reproduce its training set nearly perfectly
    double f = 0.0;
    std::sscanf(eout.str().substr(eout.str().rfind("F ")).c_str(), "F %lf", &f);
    CHECK(f > 90.0);
}

TEST_CASE("cmd_parse handles tree-shaped input and one-word sentences") {
    TempDir tmp;
    std::string train = tmp.file("train.trees", corpus_text(12, 27));
    RunConfig cfg = small_train_config(tmp, train, train);
    REQUIRE(train_into(tmp, cfg) == kExitOk);

    RunConfig pcfg;
    pcfg.model_path = cfg.model_path;
    pcfg.input_path = tmp.file("input.trees", "(S (NP the cat) (VP sees (NP a dog)))\n(X word)\n");
    pcfg.threads = 1;
    std::ostringstream out, err;
    REQUIRE(cmd_parse(pcfg, out, err) == kExitOk);
    std::istringstream lines(out.str());
    std::string line1, line2;
    std::getline(lines, line1);
    std::getline(lines, line2);
    ConstTree t1 = parse_bracketed(line1);
    CHECK(tree_tokens(t1.root) == std::vector<std::string>{"the", "cat", "sees", "a", "dog"});
    ConstTree t2 = parse_bracketed(line2);
    CHECK(tree_tokens(t2.root) == std::vector<std::string>{"word"});
    CHECK(tree_constituents(t2.root).front().begin == 0);

    // mbr decoding also yields valid trees
    pcfg.decode = "mbr";
    std::ostringstream out2, err2;
    REQUIRE(cmd_parse(pcfg, out2, err2) == kExitOk);
    std::istringstream lines2(out2.str());
    while (std::getline(lines2, line1)) CHECK_NOTHROW(parse_bracketed(line1));
}

TEST_CASE("cmd_evaluate prints the documented score lines") {
    TempDir tmp;
    RunConfig cfg;
    cfg.gold_path = tmp.file("gold.trees", "(S (NP a b) (VP c d e))\n");
    cfg.input_path = tmp.file("pred.trees", "(S (NP a b) (NP c d e))\n");
    std::ostringstream out, err;
    REQUIRE(cmd_evaluate(cfg, out, err) == kExitOk);
    CHECK(out.str() == "matched 2 predicted 3 gold 3\nP 66.67 R 66.67 F 66.67\n");

    RunConfig same;
    same.gold_path = cfg.gold_path;
    same.input_path = cfg.gold_path;
    std::ostringstream out2, err2;
    REQUIRE(cmd_evaluate(same, out2, err2) == kExitOk);
    CHECK(out2.str().find("P 100.00 R 100.00 F 100.00") != std::string::npos);
}

TEST_CASE("cmd_evaluate flags misaligned corpora as a validation failure") {
    TempDir tmp;
    RunConfig cfg;
    cfg.gold_path = tmp.file("gold.trees", "(S (A a) (B b))\n");
    cfg.input_path = tmp.file("pred.trees", "(S (A a) (B c))\n");
    std::ostringstream out, err;
    CHECK(cmd_evaluate(cfg, out, err) == kExitFail);
    CHECK(err.str().find("sentence 0") != std::string::npos);
}

TEST_CASE("cmd_bench reports throughput and handles empty input") {
    TempDir tmp;
    std::string train = tmp.file("train.trees", corpus_text(10, 37));
    RunConfig cfg = small_train_config(tmp, train, train);
    cfg.train.max_epochs = 2;
    cfg.train.patience = 2;
    REQUIRE(train_into(tmp, cfg) == kExitOk);

    RunConfig bcfg;
    bcfg.model_path = cfg.model_path;
    bcfg.input_path = tmp.file("bench_in.txt", "the cat sees a dog\na dog sees the cat\n");
    bcfg.threads = 1;
    std::ostringstream out, err;
    REQUIRE(cmd_bench(bcfg, out, err) == kExitOk);
    CHECK(out.str().find("sentences: 2") != std::string::npos);
    CHECK(out.str().find("decode batched viterbi:") != std::string::npos);
    CHECK(out.str().find("batched/unbatched ratio:") != std::string::npos);
    CHECK(out.str().find("mbr/viterbi agreement:") != std::string::npos);

    bcfg.input_path = tmp.file("empty.txt", "");
    std::ostringstream out2, err2;
    REQUIRE(cmd_bench(bcfg, out2, err2) == kExitOk);
    CHECK(out2.str().find("sentences: 0") != std::string::npos);
}

TEST_CASE("selfcheck passes on a fresh build and catches a corrupted kernel") {
    std::ostringstream out;
    CHECK(run_selfcheck(out, 1, 1, false) == kExitOk);
    CHECK(out.str().find("[FAIL]") == std::string::npos);

    std::ostringstream out2;
    CHECK(run_selfcheck(out2, 1, 1, true) == kExitFail);
    CHECK(out2.str().find("[FAIL]") != std::string::npos);
}

TEST_CASE("training rerun with the same seed gives identical metric records") {
    TempDir tmp;
    std::string train = tmp.file("train.trees", corpus_text(10, 47));
    RunConfig cfg = small_train_config(tmp, train, train);
    cfg.train.max_epochs = 4;
    cfg.train.patience = 4;
    cfg.train.dropout = 0.2;

    REQUIRE(train_into(tmp, cfg, "log_a.jsonl") == kExitOk);
    std::string model_a = cfg.model_path;
    cfg.model_path = tmp.path("model_b.bin");
    REQUIRE(train_into(tmp, cfg, "log_b.jsonl") == kExitOk);

    auto read_all = [](const std::string& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    // Epoch records only: the config echo differs by the model path, and
    // wall-clock seconds differ between any two runs.
    auto metric_records = [](std::string text) {
        std::string out;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.find("\"epoch\"") == std::string::npos) continue;
            std::size_t at = line.find(",\"seconds\":");
            if (at != std::string::npos) line.resize(at);
            out += line;
            out += '\n';
        }
        return out;
    };
    std::string a = metric_records(read_all(tmp.path("log_a.jsonl")));
    std::string b = metric_records(read_all(tmp.path("log_b.jsonl")));
    CHECK(!a.empty());
    CHECK(a == b);
}
