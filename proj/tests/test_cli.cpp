#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <sys/wait.h>

#include "support.hpp"

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run kc_run(const std::string& args, const kct::fs::path& dir, const std::string& env = "") {
    const auto out = dir / "stdout.txt";
    const auto err = dir / "stderr.txt";
    const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" + std::string(KC_CLI_PATH) + "' " + args + " > '" +
                            out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = kc::read_text(out);
    r.err = kc::read_text(err);
    return r;
}

std::string toy() { return kct::fixture("toy").string(); }

std::string discover_args(const std::string& out) {
    return "--quiet --model-dir '" + toy() + "' discover --dataset '" + toy() + "/facts.jsonl' --split all --tau 0.02 --model-id toy --out " + out;
}

std::set<std::pair<std::string, std::string>> edge_set(const nlohmann::json& j) {
    std::set<std::pair<std::string, std::string>> s;
    for (const auto& e : j.at("edges")) s.insert({e.at("src").get<std::string>(), e.at("dst").get<std::string>()});
    return s;
}

std::vector<std::string> column(const std::string& text, std::size_t col) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string cell;
        for (std::size_t i = 0; i <= col && std::getline(ls, cell, '\t'); ++i) {
        }
        out.push_back(cell);
    }
    return out;
}

}  // namespace

TEST(Cli, OverlapOfACircuitWithItself) {
    const auto dir = kct::scratch_dir("cli_overlap");
    const auto r = kc_run("overlap --a '" + kct::fixture("france_circuit.json").string() + "' --b '" +
                              kct::fixture("france_circuit.json").string() + "'",
                          dir);
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "node_hit=1.000 edge_hit=1.000\n");
}

TEST(Cli, ExitCodes) {
    const auto dir = kct::scratch_dir("cli_exit");
    auto r = kc_run("", dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.err.rfind("error:", 0), 0u) << r.err;
    r = kc_run("no-such-command", dir);
    EXPECT_EQ(r.code, 2);
    r = kc_run("overlap --a x.json", dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.err.rfind("error:", 0), 0u);
    r = kc_run("--model-dir '" + toy() + "' discover --dataset d --tau 0.01 --ablation resample --out c.json", dir);
    EXPECT_EQ(r.code, 2);
    r = kc_run("--model-dir '" + toy() + "' discover --dataset d --tau -1 --out c.json", dir);
    EXPECT_EQ(r.code, 2);
    r = kc_run("overlap --a missing.json --b missing.json", dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("error:", 0), 0u);
    r = kc_run("--quiet --model-dir '" + toy() + "' discover --dataset missing.jsonl --out c.json", dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("error: dataset: cannot open"), std::string::npos) << r.err;
    r = kc_run("--quiet discover --dataset '" + toy() + "/facts.jsonl' --out c.json", dir, "env -u KC_MODEL_DIR");
    EXPECT_EQ(r.code, 2) << r.err;
    EXPECT_NE(r.err.find("KC_MODEL_DIR"), std::string::npos);
}

TEST(Cli, DiscoverMatchesGolden) {
    const auto dir = kct::scratch_dir("cli_golden");
    const auto r = kc_run(discover_args("c.json"), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto got = nlohmann::json::parse(kc::read_text(dir / "c.json"));
    const auto want = nlohmann::json::parse(kc::read_text(kct::fixture("toy/golden_tau0.02.json")));
    EXPECT_EQ(edge_set(got), edge_set(want));
    EXPECT_EQ(got.at("nodes"), want.at("nodes"));
    EXPECT_EQ(got.at("config"), want.at("config"));
    ASSERT_EQ(got.at("edges").size(), want.at("edges").size());
    for (std::size_t i = 0; i < got.at("edges").size(); ++i) {
        EXPECT_NEAR(got["edges"][i]["score"].get<double>(), want["edges"][i]["score"].get<double>(), 1e-4);
    }
    EXPECT_NE(r.out.find("edges_kept=" + std::to_string(want.at("edges").size())), std::string::npos) << r.out;
}

TEST(Cli, RerunsAreByteIdentical) {
    const auto dir = kct::scratch_dir("cli_rerun");
    ASSERT_EQ(kc_run(discover_args("c.json") + " --score-log log.jsonl", dir).code, 0);
    const auto c1 = kc::read_text(dir / "c.json");
    const auto m1 = kc::read_text(dir / "c.json.manifest.json");
    const auto l1 = kc::read_text(dir / "log.jsonl");
    ASSERT_EQ(kc_run(discover_args("c.json") + " --score-log log.jsonl", dir).code, 0);
    EXPECT_EQ(kc::read_text(dir / "c.json"), c1);
    EXPECT_EQ(kc::read_text(dir / "c.json.manifest.json"), m1);
    EXPECT_EQ(kc::read_text(dir / "log.jsonl"), l1);

    const std::string eval = "--quiet --model-dir '" + toy() + "' --seed 3 eval-completeness --circuit c.json --dataset '" + toy() +
                             "/facts.jsonl' --out r.json";
    ASSERT_EQ(kc_run(eval, dir).code, 0);
    const auto r1 = kc::read_text(dir / "r.json");
    ASSERT_EQ(kc_run(eval, dir).code, 0);
    EXPECT_EQ(kc::read_text(dir / "r.json"), r1);
}

TEST(Cli, FullCircuitRunMatchesModel) {
    const auto dir = kct::scratch_dir("cli_full");
    const auto m = kc::load_model_dir(toy());
    kc::save_circuit(kc::Circuit::full(m->graph()), dir / "full.json", "toy");
    for (const std::string prompt : {"The capital of France is", "Hello world", "a b c d e f g"}) {
        const auto base = "--quiet --model-dir '" + toy() + "' run-circuit --topk 10 --prompt '" + prompt + "'";
        const auto a = kc_run(base, dir);
        const auto b = kc_run(base + " --circuit full.json", dir);
        ASSERT_EQ(a.code, 0) << a.err;
        ASSERT_EQ(b.code, 0) << b.err;
        EXPECT_EQ(column(a.out, 1), column(b.out, 1)) << prompt;
        EXPECT_EQ(column(a.out, 1).size(), 10u);
    }
}

TEST(Cli, ConfigFilePrecedence) {
    const auto dir = kct::scratch_dir("cli_config");
    kc::write_text(dir / "kc.toml", "model-dir = \"" + toy() + "\"\n[discover]\ntau = 0.5\nsplit = \"all\"\n");
    const std::string base = "--quiet --config kc.toml discover --dataset '" + toy() + "/facts.jsonl' --out c.json";
    ASSERT_EQ(kc_run(base, dir, "env -u KC_MODEL_DIR").code, 0);
    auto man = nlohmann::json::parse(kc::read_text(dir / "c.json.manifest.json"));
    EXPECT_EQ(man["options"]["tau"], "0.5");
    EXPECT_EQ(man["options"]["split"], "all");
    ASSERT_EQ(kc_run(base + " --tau 0.02", dir).code, 0);
    man = nlohmann::json::parse(kc::read_text(dir / "c.json.manifest.json"));
    EXPECT_EQ(man["options"]["tau"], "0.02");
    EXPECT_EQ(man["options"]["quiet"], true);
    EXPECT_EQ(man["options"]["ablation"], "zero");

    // model directory from the environment
    const auto r = kc_run("--quiet discover --dataset '" + toy() + "/facts.jsonl' --split all --out e.json", dir,
                          "KC_MODEL_DIR='" + toy() + "'");
    EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, LensDotFilterClassify) {
    const auto dir = kct::scratch_dir("cli_misc");
    const std::string md = "--quiet --model-dir '" + toy() + "' ";
    auto r = kc_run(md + "lens --prompt 'The capital of France is' --subject France --target Paris --out t.csv", dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = kc::read_text(dir / "t.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    r = kc_run(md + "lens --prompt 'The capital of France is' --target Paris --out t.csv", dir);
    EXPECT_EQ(r.code, 2);

    r = kc_run("export-dot --circuit '" + kct::fixture("france_circuit.json").string() + "' --out g.dot", dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(kc::read_text(dir / "g.dot").rfind("digraph circuit {", 0), 0u);

    r = kc_run(md + "filter-known --dataset '" + toy() + "/facts.jsonl' --k 1000 --out kept.jsonl", dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(kc::load_dataset((dir / "kept.jsonl").string()).records.size(), 6u);

    r = kc_run(md + "classify-heads --dataset '" + toy() + "/facts.jsonl' --out h.json", dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(kc::read_text(dir / "h.json"))["heads"].size(), 4u);
}

TEST(Cli, DiffAndIcl) {
    const auto dir = kct::scratch_dir("cli_diff");
    const std::string md = "--quiet --model-dir '" + toy() + "' ";
    kc::write_text(dir / "probes.jsonl", "{\"prompt\": \"Hello there\", \"target\": \"friend\"}\n");
    auto r = kc_run(md + "diff --before '" + toy() + "' --after '" + toy() + "' --dataset '" + toy() +
                        "/facts.jsonl' --probes probes.jsonl --tau 0.02 --out d.json",
                    dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto d = nlohmann::json::parse(kc::read_text(dir / "d.json"));
    EXPECT_TRUE(d["added"].empty());
    EXPECT_TRUE(d["removed"].empty());
    EXPECT_EQ(d["unrelated"][0]["before"], d["unrelated"][0]["after"]);

    kc::write_text(dir / "icl.jsonl",
                   "{\"subject\": \"small\", \"relation_id\": \"cmp\", \"template\": \"The comparative form of {subject} is\", "
                   "\"object\": \"smaller\", \"demos\": [{\"prompt\": \"The comparative form of big is\", \"answer\": \"bigger\"}]}\n"
                   "{\"subject\": \"fast\", \"relation_id\": \"cmp\", \"template\": \"The comparative form of {subject} is\", "
                   "\"object\": \"faster\", \"demos\": [{\"prompt\": \"The comparative form of big is\", \"answer\": \"bigger\"}]}\n");
    r = kc_run(md + "--seed 4 icl --dataset icl.jsonl --tau 0.02 --out i.json", dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto i = nlohmann::json::parse(kc::read_text(dir / "i.json"));
    EXPECT_EQ(i["seeds"].size(), 5u);
    EXPECT_EQ(i["no_extra_heads"].get<bool>(), i["extra_heads"].empty());
}

TEST(Cli, HelpDocumentsEveryFlag) {
    const auto dir = kct::scratch_dir("cli_help");
    const std::map<std::string, std::vector<std::string>> flags{
        {"", {"--config", "--model-dir", "--vocab", "--merges", "--threads", "--seed", "--created-at", "--manifest", "--quiet"}},
        {"discover", {"--dataset", "--relation", "--tau", "--ablation", "--split", "--max-prompts", "--icl", "--model-id", "--score-log", "--out"}},
        {"run-circuit", {"--circuit", "--prompt", "--topk", "--out"}},
        {"eval-completeness", {"--circuit", "--dataset", "--relation", "--k", "--random-circuits", "--out"}},
        {"lens", {"--prompt", "--subject", "--target", "--dataset", "--relation", "--index", "--out"}},
        {"classify-heads", {"--dataset", "--relation", "--index", "--circuit", "--span-threshold", "--mix-threshold", "--topk", "--out"}},
        {"diff", {"--before", "--after", "--dataset", "--relation", "--probes", "--tau", "--ablation", "--out"}},
        {"overlap", {"--a", "--b"}},
        {"icl", {"--dataset", "--relation", "--tau", "--ablation", "--random-sets", "--out"}},
        {"export-dot", {"--circuit", "--collapse-mlp-chains", "--min-score", "--out"}},
        {"filter-known", {"--dataset", "--relation", "--k", "--out"}},
    };
    for (const auto& [sub, names] : flags) {
        const auto r = kc_run(sub + " --help", dir);
        ASSERT_EQ(r.code, 0) << sub;
        for (const auto& n : names) EXPECT_NE(r.out.find(n), std::string::npos) << sub << " " << n;
        if (!sub.empty()) EXPECT_NE(kc_run("--help", dir).out.find(sub), std::string::npos);
        // every flag mentioned in the help carries a description
        std::istringstream in(r.out);
        std::string line;
        while (std::getline(in, line)) {
            const auto p = line.find("  --");
            if (p == std::string::npos || line.find("Subcommands") != std::string::npos) continue;
            EXPECT_GT(line.size(), line.find_first_of(' ', p + 2) + 4) << sub << ": " << line;
        }
    }
}
