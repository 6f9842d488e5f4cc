#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "treecrf/runconfig.hpp"

using namespace treecrf;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
    std::string path = "/tmp/treecrf_cfg_" + name;
    std::ofstream out(path);
    out << body;
    return path;
}

}  // namespace

TEST_CASE("defaults match the shipped settings") {
    RunConfig cfg;
    CHECK(cfg.decode == "viterbi");
    CHECK(cfg.stage == "two");
    CHECK(cfg.loss == "crf");
    CHECK(cfg.binarize == "left");
    CHECK(cfg.train.batch_words == 5000);
    CHECK(cfg.train.max_epochs == 1000);
    CHECK(cfg.train.patience == 100);
    CHECK(cfg.train.dropout == 0.33);
    CHECK(cfg.train.margin == 1.0);
    CHECK(cfg.train.optimizer.lr == 2e-3);
    CHECK(cfg.train.optimizer.beta1 == 0.9);
    CHECK(cfg.train.optimizer.beta2 == 0.9);
    CHECK(cfg.train.optimizer.epsilon == 1e-12);
    CHECK(cfg.train.optimizer.lr_decay == 0.75);
    CHECK(cfg.train.optimizer.decay_steps == 5000);
    CHECK(cfg.scorer.word_dim == 100);
    CHECK(cfg.scorer.char_dim == 50);
    CHECK(cfg.scorer.char_hidden == 50);
    CHECK(cfg.scorer.lstm_layers == 3);
    CHECK(cfg.scorer.lstm_hidden == 400);
    CHECK(cfg.scorer.mlp_span_dim == 500);
    CHECK(cfg.scorer.mlp_label_dim == 100);
    CHECK(cfg.resolved_threads() >= 1);
}

TEST_CASE("config file values apply with flag and env precedence") {
    std::string path = write_temp("basic.conf",
                                  "# sample\n"
                                  "decode = mbr\n"
                                  "seed = 7\n"
                                  "dropout = 0.1  # trailing comment\n"
                                  "lstm_hidden = 64\n");
    RunConfig from_file = resolve_config(path, {});
    CHECK(from_file.decode == "mbr");
    CHECK(from_file.seed == 7);
    CHECK(from_file.train.dropout == doctest::Approx(0.1));
    CHECK(from_file.scorer.lstm_hidden == 64);

    setenv("TREECRF_DECODE", "viterbi", 1);
    setenv("TREECRF_LSTM_HIDDEN", "32", 1);
    RunConfig with_env = resolve_config(path, {});
    CHECK(with_env.decode == "viterbi");  // env beats file
    CHECK(with_env.scorer.lstm_hidden == 32);

    RunConfig with_flags = resolve_config(path, {{"decode", "mbr"}, {"seed", "99"}});
    CHECK(with_flags.decode == "mbr");  // flag beats env
    CHECK(with_flags.seed == 99);
    CHECK(with_flags.scorer.lstm_hidden == 32);  // env still beats file
    unsetenv("TREECRF_DECODE");
    unsetenv("TREECRF_LSTM_HIDDEN");
}

TEST_CASE("unknown keys and bad values are rejected") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.apply("no_such_key", "1"), std::invalid_argument);
    CHECK_THROWS_AS(cfg.apply("decode", "sometimes"), std::invalid_argument);
    CHECK_THROWS_AS(cfg.apply("threads", "many"), std::invalid_argument);
    CHECK_THROWS_AS(cfg.apply("dropout", "1.5"), std::invalid_argument);
    CHECK_THROWS_AS(cfg.apply("batch_words", "0"), std::invalid_argument);
    std::string bad = write_temp("bad.conf", "decode mbr\n");
    CHECK_THROWS_AS(resolve_config(bad, {}), std::runtime_error);
    CHECK_THROWS_AS(resolve_config("/nonexistent/path.conf", {}), std::runtime_error);
}

TEST_CASE("echo reports the fully resolved configuration") {
    RunConfig cfg = resolve_config("", {{"decode", "mbr"}, {"threads", "3"}, {"seed", "42"}});
    std::string echo = cfg.echo_json();
    CHECK(echo.find("\"config\"") != std::string::npos);
    CHECK(echo.find("\"decode\":\"mbr\"") != std::string::npos);
    CHECK(echo.find("\"threads\":3") != std::string::npos);
    CHECK(echo.find("\"seed\":42") != std::string::npos);
}

TEST_CASE("mode helpers translate the string settings") {
    RunConfig cfg;
    cfg.decode = "mbr";
    cfg.stage = "one";
    cfg.binarize = "right";
    cfg.preterminals = "keep";
    CHECK(cfg.use_mbr());
    CHECK(cfg.stage_mode() == StageMode::OneStage);
    CHECK(cfg.binarize_direction() == BinarizeDirection::Right);
    CHECK(cfg.preterminal_policy() == PreterminalPolicy::Keep);
    cfg.threads = 5;
    CHECK(cfg.resolved_threads() == 5);
}
