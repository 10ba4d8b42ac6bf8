// kc: command-line front end for circuit discovery and analysis.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kcircuit/kcircuit.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int k_exit_runtime = 1;
constexpr int k_exit_usage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Global {
    std::string model_dir;
    std::string vocab;
    std::string merges;
    std::size_t threads = 0;
    std::uint64_t seed = 0;
    std::string created_at;
    std::string manifest;
    bool quiet = false;
};

Global G;

void progress(const std::string& msg) {
    if (!G.quiet) std::cerr << msg << "\n";
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string created_at() {
    if (!G.created_at.empty()) return G.created_at;
    if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) {
        const std::time_t t = static_cast<std::time_t>(std::strtoll(e, nullptr, 10));
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        return buf;
    }
    return "";
}

kc::ModelPtr load_model(const std::string& dir) {
    if (dir.empty()) throw UsageError("no model directory: pass --model-dir or set KC_MODEL_DIR");
    kc::WarningSink sink;
    sink.echo = !G.quiet;
    progress("loading model from " + dir);
    return kc::load_model_dir(dir, &sink);
}

kc::Tokenizer load_tokenizer(const std::string& model_dir) {
    std::string v = G.vocab, m = G.merges;
    if (v.empty() && !model_dir.empty()) v = (fs::path(model_dir) / "vocab.json").string();
    if (m.empty() && !model_dir.empty()) m = (fs::path(model_dir) / "merges.txt").string();
    if (v.empty() || m.empty() || !fs::exists(v) || !fs::exists(m)) {
        throw UsageError("no tokenizer: put vocab.json and merges.txt in the model directory or pass --vocab/--merges");
    }
    return kc::Tokenizer::from_files(v, m);
}

std::string model_id(const std::string& dir) {
    auto p = fs::path(dir);
    if (!p.has_filename()) p = p.parent_path();
    return p.filename().string();
}

struct Loaded {
    std::vector<kc::KnowledgeTriplet> records;
    std::vector<kc::TokenizedPrompt> prompts;
    std::string dataset_id;
};

Loaded load_prompts(const kc::Tokenizer& tok, const std::string& path, const std::string& relation, bool icl) {
    const auto ds = kc::load_dataset(path);
    Loaded out;
    out.records = relation.empty() ? ds.records : ds.with_relation(relation);
    if (out.records.empty()) throw kc::Error("dataset " + path + " has no records" + (relation.empty() ? "" : " for relation '" + relation + "'"));
    out.dataset_id = relation.empty() ? ds.id : ds.id + ":" + relation;
    kc::WarningSink sink;
    sink.echo = !G.quiet;
    out.prompts = kc::tokenize_all(tok, out.records, icl, &sink).prompts;
    if (out.prompts.empty()) throw kc::Error("no record of " + path + " could be tokenized");
    return out;
}

kc::TokenizedPrompt prompt_from_flags(const kc::Tokenizer& tok, const std::string& prompt, const std::string& subject,
                                      const std::string& target) {
    if (subject.empty()) throw UsageError("--subject is required with --prompt (it locates the subject span)");
    const auto at = prompt.find(subject);
    if (at == std::string::npos) throw UsageError("--subject '" + subject + "' does not occur in --prompt");
    kc::KnowledgeTriplet t;
    t.subject = subject;
    t.relation_id = "cli";
    t.template_text = prompt;
    t.template_text.replace(at, subject.size(), "{subject}");
    t.object = target;
    return kc::tokenize_align(tok, t);
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t n) {
    std::vector<std::uint64_t> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(base + i);
    return s;
}

// Resolved option values of `app` and its parents (flags > config file > env > defaults).
nlohmann::json resolved_options(const CLI::App* app) {
    nlohmann::json j = nlohmann::json::object();
    for (; app; app = app->get_parent()) {
        for (const CLI::Option* o : app->get_options()) {
            if (o->get_lnames().empty()) continue;
            const auto& name = o->get_lnames().front();
            if (name == "help" || name == "config" || j.contains(name)) continue;
            if (o->get_expected_max() == 0) {
                j[name] = o->count() > 0;
            } else if (o->count() > 0) {
                const auto r = o->reduced_results();
                if (o->get_expected_max() > 1) {
                    j[name] = r;
                } else {
                    j[name] = r.empty() ? "" : r.front();
                }
            } else {
                j[name] = o->get_default_str();
            }
        }
    }
    return j;
}

void write_manifest(const CLI::App* sub, const std::string& out) {
    std::string path = G.manifest;
    if (path.empty() && !out.empty()) path = out + ".manifest.json";
    if (path.empty()) return;
    nlohmann::json j{{"command", sub->get_name()}, {"options", resolved_options(sub)}, {"kc_schema", kc::k_circuit_schema_version}};
    kc::write_text(path, kc::dump_json(j));
}

std::string quoted(const std::string& s) {
    return nlohmann::json(s).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

kc::AblationMode parse_ablation(const std::string& s) { return s == "mean" ? kc::AblationMode::mean : kc::AblationMode::zero; }

std::vector<std::string> hints_of(const std::vector<kc::KnowledgeTriplet>& records, const kc::TokenizedPrompt& p) {
    return records.at(p.source_index).relation_hint_tokens;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kc: knowledge circuit discovery and analysis"};
    app.require_subcommand(1);
    app.fallthrough();
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "TOML file with option values; command-line flags take precedence");
    app.add_option("--model-dir", G.model_dir, "Model directory (config.json, model.safetensors, vocab.json, merges.txt)")
        ->envname("KC_MODEL_DIR");
    app.add_option("--vocab", G.vocab, "Tokenizer vocab.json (default: <model-dir>/vocab.json)");
    app.add_option("--merges", G.merges, "Tokenizer merges.txt (default: <model-dir>/merges.txt)");
    app.add_option("--threads", G.threads, "Worker threads for prompt-level parallelism (0 = all cores)");
    app.add_option("--seed", G.seed, "Seed for splits and random baselines");
    app.add_option("--created-at", G.created_at, "Timestamp stored in circuit files (default: SOURCE_DATE_EPOCH or empty)");
    app.add_option("--manifest", G.manifest, "Where to write the resolved-config manifest (default: <out>.manifest.json)");
    app.add_flag("--quiet", G.quiet, "Suppress progress messages on standard error");

    // discover
    auto* discover = app.add_subcommand("discover", "Find the circuit for a relation by edge ablation");
    std::string d_dataset, d_relation, d_out, d_log, d_split = "val", d_ablation = "zero", d_model_id;
    double d_tau = 0.01;
    std::size_t d_max = 0;
    bool d_icl = false;
    discover->add_option("--dataset", d_dataset, "Dataset JSON-lines file")->required();
    discover->add_option("--relation", d_relation, "Only records with this relation_id");
    discover->add_option("--tau", d_tau, "Pruning threshold; edges scoring below it are removed")->check(CLI::PositiveNumber);
    discover->add_option("--ablation", d_ablation, "Replacement for removed edges")->check(CLI::IsMember({"zero", "mean"}));
    discover->add_option("--split", d_split, "Prompts to use: val half of the seeded split, or all")->check(CLI::IsMember({"val", "all"}));
    discover->add_option("--max-prompts", d_max, "Use at most this many prompts (0 = no limit)");
    discover->add_flag("--icl", d_icl, "Prefix each prompt with its demonstrations");
    discover->add_option("--model-id", d_model_id, "model_id recorded in the circuit file (default: model directory name)");
    discover->add_option("--score-log", d_log, "Write per-edge scores in evaluation order as JSON lines");
    discover->add_option("--out", d_out, "Output circuit JSON")->required();

    // run-circuit
    auto* runc = app.add_subcommand("run-circuit", "Next-token predictions of a circuit run on its own");
    std::string r_circuit, r_prompt, r_out;
    std::size_t r_topk = 10;
    runc->add_option("--circuit", r_circuit, "Circuit JSON (omit to run the full model)");
    runc->add_option("--prompt", r_prompt, "Prompt text")->required();
    runc->add_option("--topk", r_topk, "Number of predictions to print")->check(CLI::PositiveNumber);
    runc->add_option("--out", r_out, "Also write the predictions as JSON");

    // eval-completeness
    auto* evalc = app.add_subcommand("eval-completeness", "Hit@k of full model, circuit and random circuits on both splits");
    std::string e_circuit, e_dataset, e_relation, e_out;
    std::size_t e_k = 10, e_random = 5;
    evalc->add_option("--circuit", e_circuit, "Circuit JSON")->required();
    evalc->add_option("--dataset", e_dataset, "Dataset JSON-lines file")->required();
    evalc->add_option("--relation", e_relation, "Only records with this relation_id");
    evalc->add_option("--k", e_k, "Hit@k cutoff")->check(CLI::PositiveNumber);
    evalc->add_option("--random-circuits", e_random, "Number of size-matched random circuits (seeds seed, seed+1, ...)")
        ->check(CLI::PositiveNumber);
    evalc->add_option("--out", e_out, "Report JSON")->required();

    // lens
    auto* lens = app.add_subcommand("lens", "Per-layer rank and probability of a target token");
    std::string l_prompt, l_subject, l_target, l_out, l_dataset, l_relation;
    std::size_t l_index = 0;
    lens->add_option("--prompt", l_prompt, "Prompt text (with --subject and --target)");
    lens->add_option("--subject", l_subject, "Subject substring of the prompt");
    lens->add_option("--target", l_target, "Target word; its first token is traced");
    lens->add_option("--dataset", l_dataset, "Take the prompt from this dataset instead");
    lens->add_option("--relation", l_relation, "Only records with this relation_id");
    lens->add_option("--index", l_index, "Record index within the (filtered) dataset");
    lens->add_option("--out", l_out, "Trace CSV (layer,position,rank,prob)")->required();

    // classify-heads
    auto* classify = app.add_subcommand("classify-heads", "Attention span mass, vocabulary reading and class of heads");
    std::string c_dataset, c_relation, c_circuit, c_out;
    std::size_t c_index = 0;
    kc::ClassifyThresholds c_th;
    classify->add_option("--dataset", c_dataset, "Dataset JSON-lines file")->required();
    classify->add_option("--relation", c_relation, "Only records with this relation_id");
    classify->add_option("--index", c_index, "Record index used as the probe");
    classify->add_option("--circuit", c_circuit, "Only heads in this circuit (default: all heads)");
    classify->add_option("--span-threshold", c_th.span, "Attention mass for Mover/Relation");
    classify->add_option("--mix-threshold", c_th.mix, "Per-span attention mass for Mixture");
    classify->add_option("--topk", c_th.k, "Vocabulary entries inspected per head")->check(CLI::PositiveNumber);
    classify->add_option("--out", c_out, "Head profiles JSON")->required();

    // diff
    auto* diff = app.add_subcommand("diff", "Compare circuits of a model before and after an edit");
    std::string f_before, f_after, f_dataset, f_relation, f_probes, f_out, f_ablation = "zero";
    double f_tau = 0.01;
    diff->add_option("--before", f_before, "Model directory before editing")->required();
    diff->add_option("--after", f_after, "Model directory after editing")->required();
    diff->add_option("--dataset", f_dataset, "Edited facts (JSON lines); the first is the probe")->required();
    diff->add_option("--relation", f_relation, "Only records with this relation_id");
    diff->add_option("--probes", f_probes, "Unrelated probes, JSON lines of {prompt, target}");
    diff->add_option("--tau", f_tau, "Pruning threshold")->check(CLI::PositiveNumber);
    diff->add_option("--ablation", f_ablation, "Replacement for removed edges")->check(CLI::IsMember({"zero", "mean"}));
    diff->add_option("--out", f_out, "Diff report JSON")->required();

    // overlap
    auto* ovl = app.add_subcommand("overlap", "Node and edge hit rates of circuit(s) B against circuit A");
    std::string o_a;
    std::vector<std::string> o_b;
    ovl->add_option("--a", o_a, "Reference circuit (denominator)")->required();
    ovl->add_option("--b", o_b, "Circuit(s) compared with A")->required();

    // icl
    auto* icl = app.add_subcommand("icl", "Heads added by demonstrations and the effect of ablating them");
    std::string i_dataset, i_relation, i_out, i_ablation = "zero";
    double i_tau = 0.01;
    std::size_t i_random = 5;
    icl->add_option("--dataset", i_dataset, "Dataset JSON-lines file whose records carry demos")->required();
    icl->add_option("--relation", i_relation, "Only records with this relation_id");
    icl->add_option("--tau", i_tau, "Pruning threshold")->check(CLI::PositiveNumber);
    icl->add_option("--ablation", i_ablation, "Replacement for removed edges")->check(CLI::IsMember({"zero", "mean"}));
    icl->add_option("--random-sets", i_random, "Random control head sets (seeds seed, seed+1, ...)")->check(CLI::PositiveNumber);
    icl->add_option("--out", i_out, "Report JSON")->required();

    // export-dot
    auto* dot = app.add_subcommand("export-dot", "Graphviz rendering of a circuit");
    std::string x_circuit, x_out;
    kc::DotOptions x_opt;
    dot->add_option("--circuit", x_circuit, "Circuit JSON")->required();
    dot->add_flag("--collapse-mlp-chains", x_opt.collapse_mlp_chains, "Replace single-in single-out MLPs by dashed edges");
    dot->add_option("--min-score", x_opt.score_threshold_display, "Hide edges whose |score| is below this");
    dot->add_option("--out", x_out, "Output .dot file")->required();

    // filter-known
    auto* filt = app.add_subcommand("filter-known", "Keep facts the model already predicts within top k");
    std::string k_dataset, k_relation, k_out;
    std::size_t k_k = 10;
    filt->add_option("--dataset", k_dataset, "Dataset JSON-lines file")->required();
    filt->add_option("--relation", k_relation, "Only records with this relation_id");
    filt->add_option("--k", k_k, "Rank cutoff")->check(CLI::PositiveNumber);
    filt->add_option("--out", k_out, "Kept records (JSON lines)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return k_exit_usage;
    }

    try {
        if (discover->parsed()) {
            const auto model = load_model(G.model_dir);
            const auto tok = load_tokenizer(G.model_dir);
            auto data = load_prompts(tok, d_dataset, d_relation, d_icl);
            auto batch = data.prompts;
            if (d_split == "val") batch = kc::select(batch, kc::make_splits(batch.size(), G.seed).d_val);
            if (d_max > 0 && batch.size() > d_max) batch.resize(d_max);
            kc::DiscoveryConfig cfg;
            cfg.tau = d_tau;
            cfg.ablation = parse_ablation(d_ablation);
            cfg.threads = G.threads;
            cfg.dataset_id = data.dataset_id;
            cfg.log_scores = true;
            progress("discovering on " + std::to_string(batch.size()) + " prompts, " +
                     std::to_string(model->graph()->edge_count()) + " edges");
            auto r = kc::discover(*model, batch, cfg);
            r.circuit.provenance.created_at = created_at();
            kc::save_circuit(r.circuit, d_out, d_model_id.empty() ? model_id(G.model_dir) : d_model_id);
            if (!d_log.empty()) kc::write_text(d_log, kc::score_log_jsonl(*model->graph(), r.scored));
            write_manifest(discover, d_out);
            progress("wall_seconds=" + fmt("%.2f", r.wall_seconds));
            std::cout << "prompts=" << batch.size() << " edges_kept=" << r.circuit.kept_count()
                      << " total_edges=" << model->graph()->edge_count() << " connected=" << (r.connected ? "yes" : "no")
                      << " evaluated_edges=" << r.evaluated_edges << " forward_passes=" << r.forward_passes << "\n";
        } else if (runc->parsed()) {
            const auto model = load_model(G.model_dir);
            const auto tok = load_tokenizer(G.model_dir);
            const auto tokens = tok.encode(r_prompt);
            if (tokens.empty()) throw UsageError("--prompt is empty");
            kc::ForwardResult res;
            if (r_circuit.empty()) {
                res = kc::run_full(*model, tokens);
            } else {
                const auto c = kc::load_circuit(r_circuit).circuit;
                if (!(c.graph() == *model->graph())) throw kc::Error("circuit graph does not match the model");
                res = kc::run_masked(*model, tokens, c, {{}, true});
            }
            const auto V = model->vocab_size();
            const auto probs = kc::ops::softmax(res.cache.last_logits(), V);
            nlohmann::json out = nlohmann::json::array();
            std::size_t rank = 1;
            for (auto id : kc::ops::top_k(res.cache.last_logits(), V, r_topk)) {
                const auto text = id < tok.vocab_size() ? tok.token_bytes(static_cast<kc::TokenId>(id)) : std::string();
                std::cout << rank << "\t" << id << "\t" << fmt("%.6f", probs[id]) << "\t" << quoted(text) << "\n";
                out.push_back({{"rank", rank}, {"token", id}, {"prob", probs[id]}, {"text", text}});
                ++rank;
            }
            if (!r_out.empty()) kc::write_text(r_out, kc::dump_json(out));
            write_manifest(runc, r_out);
        } else if (evalc->parsed()) {
            const auto model = load_model(G.model_dir);
            const auto tok = load_tokenizer(G.model_dir);
            const auto c = kc::load_circuit(e_circuit).circuit;
            const auto data = load_prompts(tok, e_dataset, e_relation, false);
            const auto sp = kc::make_splits(data.prompts.size(), G.seed);
            const auto rep = kc::completeness(*model, c, kc::select(data.prompts, sp.d_val), kc::select(data.prompts, sp.d_test),
                                              seed_list(G.seed, e_random), data.dataset_id, e_k, G.threads);
            auto j = kc::to_json(rep);
            j["split"] = kc::splits_to_json(sp);
            kc::write_text(e_out, kc::dump_json(j));
            write_manifest(evalc, e_out);
            std::cout << "split\tn\tfull\tcircuit\trandom\n";
            std::cout << "val\t" << sp.d_val.size() << "\t" << fmt("%.4f", rep.val.full) << "\t" << fmt("%.4f", rep.val.circuit)
                      << "\t" << fmt("%.4f", rep.val.random) << "\n";
            std::cout << "test\t" << sp.d_test.size() << "\t" << fmt("%.4f", rep.test.full) << "\t"
                      << fmt("%.4f", rep.test.circuit) << "\t" << fmt("%.4f", rep.test.random) << "\n";
        } else if (lens->parsed()) {
            const auto model = load_model(G.model_dir);
            const auto tok = load_tokenizer(G.model_dir);
            kc::TokenizedPrompt p;
            if (!l_dataset.empty()) {
                const auto data = load_prompts(tok, l_dataset, l_relation, false);
                if (l_index >= data.prompts.size()) throw UsageError("--index out of range");
                p = data.prompts[l_index];
            } else {
                if (l_prompt.empty() || l_target.empty()) throw UsageError("lens needs --dataset or --prompt/--subject/--target");
                p = prompt_from_flags(tok, l_prompt, l_subject, l_target);
            }
            const auto tr = kc::trace_target(*model, p, p.target_first_token);
            kc::write_text(l_out, kc::trace_csv(tr));
            write_manifest(lens, l_out);
            std::cout << "layer\tlast_rank\tlast_prob\tsubject_rank\tsubject_prob\n";
            for (std::size_t l = 0; l < model->config().n_layers; ++l) {
                const auto& a = tr.at(l, kc::LensPosition::last_token);
                const auto& b = tr.at(l, kc::LensPosition::last_subject_token);
                std::cout << l << "\t" << a.rank << "\t" << fmt("%.6f", a.prob) << "\t" << b.rank << "\t" << fmt("%.6f", b.prob)
                          << "\n";
            }
        } else if (classify->parsed()) {
            const auto model = load_model(G.model_dir);
            const auto tok = load_tokenizer(G.model_dir);
            const auto data = load_prompts(tok, c_dataset, c_relation, false);
            if (c_index >= data.prompts.size()) throw UsageError("--index out of range");
            const auto& p = data.prompts[c_index];
            const auto& g = *model->graph();
            std::vector<kc::NodeId> heads;
            if (!c_circuit.empty()) {
                const auto c = kc::load_circuit(c_circuit).circuit;
                if (!(c.graph() == g)) throw kc::Error("circuit graph does not match the model");
                for (auto n : c.node_indices()) {
                    if (g.node(n).is_attn()) heads.push_back(g.node(n));
                }
            } else {
                for (std::size_t l = 0; l < model->config().n_layers; ++l) {
                    for (std::size_t h = 0; h < model->config().n_heads; ++h) heads.push_back(kc::NodeId::attn(l, h));
                }
            }
            const auto run = kc::run_full(*model, p.tokens);
            nlohmann::json out = nlohmann::json::array();
            std::cout << "head\tclass\tsubject\trelation\tother\ttop\n";
            for (const auto& h : heads) {
                const auto prof = kc::head_profile(*model, run.cache, p, h, p.target_first_token, c_th, hints_of(data.records, p), &tok);
                out.push_back(kc::to_json(prof));
                std::cout << kc::node_label(h) << "\t" << kc::head_class_name(prof.cls) << "\t"
                          << fmt("%.3f", prof.span_mass.subject) << "\t" << fmt("%.3f", prof.span_mass.relation) << "\t"
                          << fmt("%.3f", prof.span_mass.other) << "\t"
                          << (prof.top_tokens.empty() ? std::string() : quoted(prof.top_tokens.front().text)) << "\n";
            }
            nlohmann::json j{{"prompt", data.records.at(p.source_index).subject}, {"heads", out}};
            kc::write_text(c_out, kc::dump_json(j));
            write_manifest(classify, c_out);
        } else if (diff->parsed()) {
            const auto before = load_model(f_before);
            const auto after = load_model(f_after);
            const auto tok = load_tokenizer(G.model_dir.empty() ? f_before : G.model_dir);
            const auto data = load_prompts(tok, f_dataset, f_relation, false);
            std::vector<kc::ProbePrompt> probes;
            if (!f_probes.empty()) {
                std::istringstream in(kc::read_text(f_probes));
                std::string line;
                while (std::getline(in, line)) {
                    if (kc::detail::trim(line).empty()) continue;
                    const auto j = nlohmann::json::parse(line);
                    probes.push_back(kc::make_probe(tok, j.at("prompt").get<std::string>(), j.at("target").get<std::string>()));
                }
            }
            kc::DiffConfig cfg;
            cfg.discovery.tau = f_tau;
            cfg.discovery.ablation = parse_ablation(f_ablation);
            cfg.discovery.threads = G.threads;
            cfg.discovery.dataset_id = data.dataset_id;
            const auto rep = kc::circuit_diff(*before, *after, data.prompts, hints_of(data.records, data.prompts.front()), probes,
                                              cfg, &tok);
            kc::write_text(f_out, kc::dump_json(kc::to_json(rep)));
            write_manifest(diff, f_out);
            std::cout << "edges_before=" << rep.before.kept_count() << " edges_after=" << rep.after.kept_count()
                      << " added=" << rep.added.size() << " removed=" << rep.removed.size()
                      << " head_changes=" << rep.head_changes.size() << "\n";
            for (const auto& h : rep.head_changes) {
                std::cout << kc::node_label(h.head) << "\t" << kc::head_class_name(h.before) << " -> "
                          << kc::head_class_name(h.after) << "\n";
            }
            for (const auto& u : rep.unrelated) {
                std::cout << quoted(u.prompt) << "\t" << fmt("%.2f%%", u.before) << " -> " << fmt("%.2f%%", u.after) << "\n";
            }
        } else if (ovl->parsed()) {
            const auto a = kc::load_circuit(o_a).circuit;
            for (const auto& path : o_b) {
                const auto b = kc::load_circuit(path).circuit;
                const auto ov = kc::overlap(a, b);
                if (o_b.size() > 1) std::cout << path << "\t";
                std::cout << "node_hit=" << fmt("%.3f", ov.node_hit) << " edge_hit=" << fmt("%.3f", ov.edge_hit) << "\n";
            }
            write_manifest(ovl, "");
        } else if (icl->parsed()) {
            const auto model = load_model(G.model_dir);
            const auto tok = load_tokenizer(G.model_dir);
            const auto zs = load_prompts(tok, i_dataset, i_relation, false);
            const auto wd = load_prompts(tok, i_dataset, i_relation, true);
            // keep records that aligned in both renderings
            std::set<std::size_t> ok_zs, ok_wd;
            for (const auto& p : zs.prompts) ok_zs.insert(p.source_index);
            for (const auto& p : wd.prompts) ok_wd.insert(p.source_index);
            std::vector<kc::TokenizedPrompt> a, b;
            for (const auto& p : zs.prompts) {
                if (ok_wd.count(p.source_index)) a.push_back(p);
            }
            for (const auto& p : wd.prompts) {
                if (ok_zs.count(p.source_index)) b.push_back(p);
            }
            kc::DiscoveryConfig cfg;
            cfg.tau = i_tau;
            cfg.ablation = parse_ablation(i_ablation);
            cfg.threads = G.threads;
            cfg.dataset_id = zs.dataset_id;
            const auto rep = kc::icl_compare(*model, a, b, cfg, seed_list(G.seed, i_random));
            kc::write_text(i_out, kc::dump_json(kc::to_json(rep)));
            write_manifest(icl, i_out);
            std::cout << "extra_heads=";
            for (std::size_t i = 0; i < rep.extra_heads.size(); ++i) std::cout << (i ? "," : "") << kc::node_label(rep.extra_heads[i]);
            std::cout << (rep.no_extra_heads ? "(none)" : "") << "\n";
            std::cout << "original=" << fmt("%.2f", rep.original) << " ablate_extra=" << fmt("%.2f", rep.ablate_extra)
                      << " ablate_random=" << fmt("%.2f", rep.ablate_random) << "\n";
        } else if (dot->parsed()) {
            const auto c = kc::load_circuit(x_circuit).circuit;
            kc::write_text(x_out, kc::export_dot(c, x_opt));
            write_manifest(dot, x_out);
            std::cout << "nodes=" << c.node_indices().size() << " edges=" << c.kept_count() << "\n";
        } else if (filt->parsed()) {
            const auto model = load_model(G.model_dir);
            const auto tok = load_tokenizer(G.model_dir);
            const auto data = load_prompts(tok, k_dataset, k_relation, false);
            const auto rep = kc::filter_known(*model, data.prompts, data.records, k_k, G.threads);
            std::vector<kc::KnowledgeTriplet> kept;
            for (auto i : rep.kept) kept.push_back(data.records.at(data.prompts[i].source_index));
            kc::save_dataset(kept, k_out);
            write_manifest(filt, k_out);
            std::cout << "relation\tkept\ttotal\n";
            for (const auto& [rel, rr] : rep.by_relation) std::cout << rel << "\t" << rr.kept << "\t" << rr.total << "\n";
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return k_exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return k_exit_runtime;
    }
    return 0;
}
