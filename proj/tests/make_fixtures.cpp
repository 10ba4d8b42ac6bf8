// Regenerates tests/fixtures/toy: a small random model, a GPT-2 tokenizer prefix and the golden circuit.
#include <fstream>
#include <iostream>

#include "support.hpp"

namespace {

constexpr std::size_t k_vocab = 1000;  // 256 byte tokens + the first 744 merges
constexpr double k_golden_tau = 0.02;

void write_tokenizer(const kct::fs::path& dir) {
    const auto src = kct::source_dir() / "data" / "gpt2";
    const auto vocab = nlohmann::json::parse(kc::read_text(src / "vocab.json"));
    nlohmann::json sub = nlohmann::json::object();
    for (const auto& [tok, id] : vocab.items()) {
        if (id.get<std::size_t>() < k_vocab) sub[tok] = id;
    }
    kc::write_text(dir / "vocab.json", sub.dump() + "\n");
    std::ifstream in(src / "merges.txt");
    std::string line, out;
    std::getline(in, line);
    out += line + "\n";
    for (std::size_t i = 0; i < k_vocab - 256 && std::getline(in, line); ++i) out += line + "\n";
    kc::write_text(dir / "merges.txt", out);
}

}  // namespace

int main() {
    const auto dir = kct::fixture("toy");
    write_tokenizer(dir);
    auto c = kct::toy_config(2, 2, 4, k_vocab, 64);
    const auto model = kc::make_model(c, kc::random_weights(c, 2024, 0.4f));
    kc::save_model_dir(*model, dir.string());

    const auto tok = kc::Tokenizer::from_files((dir / "vocab.json").string(), (dir / "merges.txt").string());
    const auto ds = kc::load_dataset((dir / "facts.jsonl").string());
    const auto prompts = kc::tokenize_all(tok, ds.records).prompts;

    const auto steps = kct::naive_discover(*model, prompts, k_golden_tau);
    auto circuit = kc::Circuit::empty(model->graph());
    for (const auto& s : steps) {
        if (s.kept) circuit.keep(s.edge);
        circuit.set_score(s.edge, s.score);
    }
    circuit.provenance.tau = k_golden_tau;
    circuit.provenance.dataset_id = ds.id;
    kc::save_circuit(circuit, dir / "golden_tau0.02.json", "toy");
    std::cout << "prompts=" << prompts.size() << " kept=" << circuit.kept_count() << "/" << model->graph()->edge_count() << "\n";
    return 0;
}
