#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cpsearch/binary_io.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out, err;
};

class Workspace {
public:
    Workspace() : dir_(fs::temp_directory_path() / "cps_cli_test") {
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        std::ofstream corpus(path("corpus.jsonl"));
        for (const auto& d : cps::testing::overfit_corpus(12)) {
            corpus << nlohmann::json{{"id", d.id}, {"code", d.code_text}, {"doc", d.doc_text}}.dump() << "\n";
        }
        std::ofstream three(path("three.jsonl"));
        for (const auto& d : cps::testing::overfit_corpus(3)) {
            three << nlohmann::json{{"id", d.id}, {"code", d.code_text}, {"doc", d.doc_text}}.dump() << "\n";
        }
    }
    ~Workspace() { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    Result run(const std::string& args, const std::string& stdin_text = "") const {
        const std::string in = path("stdin.txt"), out = path("stdout.txt"), err = path("stderr.txt");
        std::ofstream(in) << stdin_text;
        const std::string cmd = std::string(CPSEARCH_BIN) + " " + args + " <" + in + " >" + out + " 2>" + err;
        const int status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = cps::read_file(out);
        r.err = cps::read_file(err);
        return r;
    }

    std::string train_flags() const {
        return "--corpus " + path("corpus.jsonl") + " --vocab " + path("vocab.txt") +
               " --d 16 --heads 2 --layers 1 --kc 2 --kt 2 --max-len-code 32 --max-len-query 12"
               " --batch-size 4 --epochs 2";
    }

private:
    fs::path dir_;
};

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

}  // namespace

TEST_CASE("cli end to end") {
    Workspace w;
    const std::string corpus = w.path("corpus.jsonl"), vocab = w.path("vocab.txt");

    REQUIRE(w.run("vocab --corpus " + corpus + " --out " + vocab).code == 0);
    CHECK(w.run("vocab --corpus " + w.path("missing.jsonl") + " --out " + vocab).code == 2);
    const auto zero = w.run("vocab --corpus " + corpus + " --out " + vocab + " --min-count 0");
    CHECK(zero.code == 1);
    CHECK(zero.err.rfind("error:", 0) == 0);

    // Four mode x scoring combinations.
    for (const char* mode : {"ft", "pt"}) {
        for (const char* scoring : {"interaction", "cosine"}) {
            const std::string ckpt = w.path(std::string(mode) + "_" + scoring + ".ckpt");
            const auto r = w.run("train " + w.train_flags() + " --mode " + mode + " --scoring " + scoring +
                                 " --out " + ckpt);
            CHECK(r.code == 0);
            CHECK(r.out.find("epoch=1 loss=") != std::string::npos);
            CHECK(r.out.find("epoch=2 loss=") != std::string::npos);
            CHECK(r.out.find("trainable_parameters=") != std::string::npos);
            CHECK(fs::exists(ckpt));
        }
    }
    CHECK(w.run("train " + w.train_flags() + " --mode pt --kc 0 --out " + w.path("x.ckpt")).code == 1);
    CHECK(w.run("train " + w.train_flags() + " --mode zz --out " + w.path("x.ckpt")).code == 1);
    CHECK(w.run("train " + w.train_flags() + " --epochs nope --out " + w.path("x.ckpt")).code == 1);

    // Reruns are byte-identical.
    const std::string ckpt = w.path("ft_interaction.ckpt");
    REQUIRE(w.run("train " + w.train_flags() + " --mode ft --out " + w.path("again.ckpt")).code == 0);
    CHECK(cps::read_file(ckpt) == cps::read_file(w.path("again.ckpt")));

    SUBCASE("config precedence") {
        std::ofstream(w.path("cfg.json")) << R"({"mode": "ft", "epochs": 5, "tau": 0.2})";
        REQUIRE(w.run("train " + w.train_flags() + " --config " + w.path("cfg.json") + " --out " +
                      w.path("cfg.ckpt")).code == 0);
        // --epochs 2 from the flags wins over the file.
        CHECK(cps::read_file(w.path("cfg.ckpt")) != cps::read_file(ckpt));
        std::ofstream(w.path("bad.json")) << R"({"unknown": 1})";
        CHECK(w.run("train " + w.train_flags() + " --config " + w.path("bad.json") + " --out " + w.path("b.ckpt"))
                  .code == 1);
    }

    SUBCASE("zero epochs") {
        CHECK(w.run("train " + w.train_flags() + " --mode pt --epochs 0 --out " + w.path("init.ckpt")).code == 0);
    }

    SUBCASE("index, search, eval, diagnose") {
        const std::string idx = w.path("three.idx");
        const std::string common = " --checkpoint " + ckpt + " --vocab " + vocab;
        REQUIRE(w.run("index" + common + " --candidates " + w.path("three.jsonl") + " --out " + idx).code == 0);

        const auto s = w.run("search" + common + " --index " + idx + " --query \"get the user\"");
        REQUIRE(s.code == 0);
        REQUIRE(count_lines(s.out) == 3);
        std::istringstream lines(s.out);
        double prev = 1e9;
        for (int rank = 1; rank <= 3; ++rank) {
            std::string line;
            std::getline(lines, line);
            std::istringstream fields(line);
            std::string r, id, score;
            std::getline(fields, r, '\t');
            std::getline(fields, id, '\t');
            std::getline(fields, score, '\t');
            CHECK(r == std::to_string(rank));
            CHECK_FALSE(id.empty());
            CHECK(std::stod(score) <= prev);
            prev = std::stod(score);
        }

        const auto repl = w.run("search" + common + " --index " + idx + " --top-k 2", "get the user\n\nset a file\n");
        CHECK(repl.code == 0);
        CHECK(count_lines(repl.out) == 4);

        CHECK(w.run("eval" + common + " --index " + idx + " --queries " + w.path("three.jsonl") + " --out " +
                    w.path("report.json")).code == 0);
        const auto report = nlohmann::json::parse(cps::read_file(w.path("report.json")));
        CHECK(report.at("num_queries") == 3);
        CHECK(report.at("franks").size() == 3);
        CHECK(report.at("recall").contains("10"));

        // An index built from another checkpoint is rejected.
        const std::string other = " --checkpoint " + w.path("pt_interaction.ckpt") + " --vocab " + vocab;
        CHECK(w.run("search" + other + " --index " + idx + " --query get").code == 2);

        const auto d = w.run("diagnose" + common + " --eval-set " + corpus + " --name ft --csv " + w.path("q.csv") +
                             " --json " + w.path("q.json"));
        CHECK(d.code == 0);
        CHECK(d.out.rfind("model,alignment,uniformity_query,uniformity_code,mrr\nft,", 0) == 0);
        CHECK(cps::read_file(w.path("q.csv")) == d.out);

        std::string corrupt = cps::read_file(idx);
        corrupt[corrupt.size() / 2] ^= 0x04;
        cps::write_file(w.path("bad.idx"), corrupt);
        const auto bad = w.run("search" + common + " --index " + w.path("bad.idx") + " --query get");
        CHECK(bad.code == 2);
        CHECK(bad.err.find("checksum") != std::string::npos);
    }

    SUBCASE("help") {
        for (const char* sub : {"vocab", "train", "index", "search", "eval", "diagnose", "gradcheck"})
            CHECK(w.run(std::string(sub) + " --help").code == 0);
        CHECK(w.run("").code == 1);
    }
}

TEST_CASE("cli gradcheck") {
    Workspace w;
    const auto r = w.run("gradcheck --mode pt --samples 20");
    CHECK(r.code == 0);
    CHECK(r.out.find("max_rel_err=") != std::string::npos);
}
