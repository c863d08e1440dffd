#include <doctest.h>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "sqtag/train.hpp"
#include "test_support.hpp"

using namespace sqtag;
using namespace sqtag::testing;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

// Flags that keep a toy training run to a second or two.
std::vector<std::string> small_train(const TempDir& dir, const std::string& name, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{"train",       "--train",  data_path("toy/train.conll"),
                                "--dev",       data_path("toy/dev.conll"),
                                "--hidden",    "6",        "--layers",
                                "1",           "--embedding-dim", "12",
                                "--max-epochs", "3",       "--quiet",
                                "--out",       (dir / name).string()};
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

int shell(const std::string& command) {
  int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("train on the toy corpus writes model, log and manifest") {
    TempDir dir("cli-train");
    auto r = run_cli(small_train(dir, "m.sqtg", {"--features", "word,pos,chunk,case,regex"}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("dev F1") != std::string::npos);
    CHECK(std::filesystem::exists(dir / "m.sqtg"));
    CHECK(slurp((dir / "m.sqtg.log").string()).rfind("epoch\tloss", 0) == 0);

    auto manifest = nlohmann::json::parse(slurp((dir / "m.sqtg.manifest.json").string()));
    CHECK(manifest["command"] == "train");
    CHECK(manifest["seed"] == 1);
    CHECK(manifest["inputs"].contains(data_path("toy/train.conll")));
    CHECK(manifest["resolved"]["features"] == "word,pos,chunk,case,regex");
    CHECK(manifest["resolved"]["regex_rules"].get<int>() > 0);
    CHECK(manifest["config"].get<std::string>().find("hidden=6") != std::string::npos);
  }

  TEST_CASE("same seed gives the same model bytes") {
    TempDir dir("cli-seed");
    REQUIRE(run_cli(small_train(dir, "a.sqtg", {"--seed", "7"})).code == 0);
    REQUIRE(run_cli(small_train(dir, "b.sqtg", {"--seed", "7"})).code == 0);
    REQUIRE(run_cli(small_train(dir, "c.sqtg", {"--seed", "8"})).code == 0);
    CHECK(slurp((dir / "a.sqtg").string()) == slurp((dir / "b.sqtg").string()));
    CHECK(slurp((dir / "a.sqtg").string()) != slurp((dir / "c.sqtg").string()));
  }

  TEST_CASE("tag then eval reproduces the in-process score") {
    TempDir dir("cli-tag");
    REQUIRE(run_cli(small_train(dir, "m.sqtg", {"--features", "word,pos,case"})).code == 0);
    auto tagged = (dir / "tagged.conll").string();
    auto r = run_cli({"tag", "--model", (dir / "m.sqtg").string(), "--output", tagged, data_path("toy/test.conll")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(std::filesystem::exists(tagged + ".manifest.json"));

    auto scored = run_cli({"eval", tagged});
    REQUIRE(scored.code == 0);

    auto model = load_model_file((dir / "m.sqtg").string());
    auto test = read_conll_file(data_path("toy/test.conll"));
    Rng rng(1 ^ 0x5bd1e995ULL);
    auto expected = render(evaluate(model.tagger, model.features, test, rng));
    CHECK(scored.out == expected);

    // Tagging keeps every input column.
    auto first = slurp(tagged).substr(0, slurp(tagged).find('\n'));
    auto source = read_conll_file(data_path("toy/test.conll"));
    std::string expected_prefix;
    for (const auto& c : source[0].tokens[0].columns) expected_prefix += c + " ";
    CHECK(first.rfind(expected_prefix, 0) == 0);
  }

  TEST_CASE("tag handles empty input and unseen tags") {
    TempDir dir("cli-tag-edge");
    REQUIRE(run_cli(small_train(dir, "m.sqtg", {"--features", "word,pos,chunk"})).code == 0);
    write_text(dir / "empty.conll", "");
    auto empty = run_cli({"tag", "--model", (dir / "m.sqtg").string(), (dir / "empty.conll").string()});
    CHECK(empty.code == 0);
    CHECK(empty.out.empty());

    write_text(dir / "odd.conll", "Zyx QQQ B-ZZ\nchạy V B-VP\n");
    auto odd = run_cli({"tag", "--model", (dir / "m.sqtg").string(), (dir / "odd.conll").string()});
    CHECK_MESSAGE(odd.code == 0, odd.err);
    CHECK(odd.out.rfind("Zyx QQQ B-ZZ ", 0) == 0);
  }

  TEST_CASE("a model whose feature width disagrees is rejected") {
    TempDir dir("cli-width");
    REQUIRE(run_cli(small_train(dir, "m.sqtg")).code == 0);
    auto box = load_container_file((dir / "m.sqtg").string());
    std::size_t real = box.tagger.config.input_dim;
    box.tagger.config.input_dim = real + 3;
    Rng rng(1);
    box.tagger = init_params(box.tagger.config, rng);
    save_file(box, (dir / "bad.sqtg").string());
    auto r = run_cli({"tag", "--model", (dir / "bad.sqtg").string(), data_path("toy/test.conll")});
    CHECK(r.code == 1);
    CHECK(r.err.find(std::to_string(real)) != std::string::npos);
    CHECK(r.err.find(std::to_string(real + 3)) != std::string::npos);
  }

  TEST_CASE("input errors name the file") {
    TempDir dir("cli-errors");
    auto missing = (dir / "nowhere.vec").string();
    auto r = run_cli(small_train(dir, "m.sqtg", {"--embedding-mode", "skipgram", "--embeddings", missing}));
    CHECK(r.code == 1);
    CHECK(r.err.find(missing) != std::string::npos);

    write_text(dir / "bad.conll", "a N B-NP O\nb N\n");
    auto bad = run_cli({"train", "--train", (dir / "bad.conll").string(), "--quiet"});
    CHECK(bad.code == 1);
    CHECK(bad.err.find((dir / "bad.conll").string() + ":2") != std::string::npos);

    CHECK(run_cli({"train", "--no-such-flag"}).code == 1);
    CHECK(run_cli({}).code == 1);
    CHECK(run_cli({"train"}).code == 1);
    CHECK(run_cli({"ablate", "--train", data_path("toy/train.conll")}).code == 1);
    CHECK(run_cli({"--help"}).code == 0);
  }

  TEST_CASE("diverging training exits with 2") {
    TempDir dir("cli-nan");
    auto r = run_cli(small_train(dir, "m.sqtg", {"--lr", "1e300"}));
    CHECK(r.code == 2);
    CHECK(r.err.find("NonFiniteLoss") != std::string::npos);
  }

  TEST_CASE("eval and type filters") {
    TempDir dir("cli-eval");
    write_text(dir / "p.txt", "a B-PER B-PER\nb O O\nc B-MISC O\n");
    auto all = run_cli({"eval", (dir / "p.txt").string()});
    CHECK(all.code == 0);
    CHECK(all.out.find("FB1:  66.67") != std::string::npos);
    auto three = run_cli({"eval", "--types", "PER,LOC,ORG", (dir / "p.txt").string()});
    CHECK(three.out.find("FB1: 100.00") != std::string::npos);
    write_text(dir / "same.txt", "a N B-LOC B-LOC\n");
    CHECK(run_cli({"eval", (dir / "same.txt").string()}).out.find("FB1: 100.00") != std::string::npos);
  }

  TEST_CASE("stats") {
    auto r = run_cli({"stats", data_path("toy/train.conll"), data_path("toy/dev.conll")});
    CHECK(r.code == 0);
    CHECK(r.out.find("== total") != std::string::npos);
    CHECK(r.out.find("sentences=65") != std::string::npos);
  }

  TEST_CASE("config file values apply and flags win") {
    TempDir dir("cli-config");
    write_text(dir / "run.toml", "hidden = 5\nmax-epochs = 2\nlayers = 1\nembedding-dim = 10\n");
    std::vector<std::string> base{"train", "--config", (dir / "run.toml").string(), "--train",
                                  data_path("toy/train.conll"), "--quiet"};
    auto a = base;
    a.insert(a.end(), {"--out", (dir / "a.sqtg").string()});
    REQUIRE(run_cli(a).code == 0);
    auto ma = nlohmann::json::parse(slurp((dir / "a.sqtg.manifest.json").string()));
    CHECK(ma["epochs"] == 2);
    CHECK(load_container_file((dir / "a.sqtg").string()).tagger.config.hidden == 5);

    auto b = base;
    b.insert(b.end(), {"--out", (dir / "b.sqtg").string(), "--max-epochs", "1"});
    REQUIRE(run_cli(b).code == 0);
    auto mb = nlohmann::json::parse(slurp((dir / "b.sqtg.manifest.json").string()));
    CHECK(mb["epochs"] == 1);
    CHECK(mb["config"].get<std::string>().find("max-epochs=1") != std::string::npos);
    CHECK(load_container_file((dir / "b.sqtg").string()).tagger.config.hidden == 5);

    write_text(dir / "typo.toml", "hiden = 5\n");
    auto typo = run_cli({"train", "--config", (dir / "typo.toml").string(), "--train", data_path("toy/train.conll")});
    CHECK(typo.code == 1);
    CHECK(typo.err.find("hiden") != std::string::npos);
  }

  TEST_CASE("ablate runs a preset and writes its tables") {
    TempDir dir("cli-ablate");
    auto out_dir = (dir / "abl").string();
    auto r = run_cli({"ablate", "--preset", "table6", "--train", data_path("toy/train.conll"), "--dev",
                  data_path("toy/dev.conll"), "--test", data_path("toy/test.conll"), "--hidden", "4", "--layers",
                  "1", "--embedding-dim", "8", "--max-epochs", "2", "--jobs", "2", "--out-dir", out_dir,
                  "--keep-models"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("Dropout = 0.5") != std::string::npos);
    CHECK(r.out.find("Dropout = 0.0") != std::string::npos);
    CHECK(std::filesystem::exists(out_dir + "/ablation.tsv"));
    CHECK(std::filesystem::exists(out_dir + "/manifest.json"));
    CHECK(std::filesystem::exists(out_dir + "/models/1.sqtg"));
  }

  TEST_CASE("the installed binary reports exit codes") {
    const std::string exe = SQTAG_CLI_PATH;
    CHECK(shell(exe + " selfcheck --seeds 1 --pairs 20 > /dev/null") == 0);
    CHECK(shell(exe + " selfcheck --seeds 1 --pairs 20 --corrupt-gradient > /dev/null") == 3);
    CHECK(shell(exe + " bogus > /dev/null 2>&1") == 1);
    CHECK(shell(exe + " stats " + data_path("toy/test.conll") + " > /dev/null") == 0);
  }
}
