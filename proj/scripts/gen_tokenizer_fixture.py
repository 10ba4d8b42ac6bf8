"""Reference GPT-2 token ids for fixture sentences, from two independent BPE implementations.

Both tokenizers are built from data/gpt2/{vocab.json,merges.txt}; the script refuses to write
unless they agree. Output: tests/fixtures/tokenizer_gpt2.json
"""
import json
import pathlib

import tiktoken
from tiktoken.load import data_gym_to_mergeable_bpe_ranks
from tokenizers import Tokenizer, decoders, models, pre_tokenizers

ROOT = pathlib.Path(__file__).resolve().parent.parent
VOCAB = ROOT / "data" / "gpt2" / "vocab.json"
MERGES = ROOT / "data" / "gpt2" / "merges.txt"

SENTENCES = [
    "The capital of France is",
    "The official language of France is",
    "The comparative form of small is smaller",
    "Hello, world! It's a beautiful day.",
    "I'm sure they'll say we've done what we'd planned.",
    "  leading spaces and trailing spaces   ",
    "Tabs\tand\nnewlines\n\nmixed  in",
    "Numbers: 12345 and 3.14159, also 1,000,000.",
    "Ünïcödé çharacters: naïve café, Straße, Ærøskøbing",
    "日本語のテキストも扱えます。",
    "Emoji test 🙂🚀 with flags 🇫🇷",
    "Платформа Controller Hub was developed by Intel",
    "The official currency of Malaysia is called",
    "Windows server is developed by",
    "x = f(y) + g[z] * 2; // comment",
    "ALL CAPS SENTENCE WITH PUNCTUATION!!!",
    "mixedCASEidentifiers_and-dashes",
    "Don't won't can't shouldn't O'Neil's",
    "Ελληνικά και العربية and עברית",
    "The mother tongue of Danielle Darrieux is",
]


def hf_tokenizer():
    tok = Tokenizer(models.BPE.from_file(str(VOCAB), str(MERGES)))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    return tok


def tiktoken_encoder():
    ranks = data_gym_to_mergeable_bpe_ranks(vocab_bpe_file=str(MERGES), encoder_json_file=str(VOCAB))
    return tiktoken.Encoding(
        name="gpt2_local",
        pat_str=r"""'(?:[sdmt]|ll|ve|re)| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+""",
        mergeable_ranks=ranks,
        special_tokens={},
    )


def main():
    hf = hf_tokenizer()
    tk = tiktoken_encoder()
    cases = []
    for s in SENTENCES:
        a = hf.encode(s).ids
        b = tk.encode(s)
        if a != b:
            raise SystemExit(f"reference tokenizers disagree on {s!r}: {a} vs {b}")
        cases.append({"text": s, "ids": a})
    out = ROOT / "tests" / "fixtures" / "tokenizer_gpt2.json"
    out.write_text(json.dumps({"cases": cases}, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {len(cases)} cases to {out}")


if __name__ == "__main__":
    main()
