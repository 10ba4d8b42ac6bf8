"""Tiny random Hugging Face checkpoints plus reference logits for cross-checking the C++ forward pass.

Writes tests/fixtures/hf_gpt2/ and tests/fixtures/hf_llama_gqa/, each with config.json,
model.safetensors and expected.json ({"prompts": [[ids]], "logits": [[[...]]]}).
"""
import json
import pathlib

import torch
from transformers import GPT2Config, GPT2LMHeadModel, LlamaConfig, LlamaForCausalLM

ROOT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"
PROMPTS = [[1, 7, 3, 42, 9], [5], [0, 63, 17, 17, 2, 8, 30, 11]]


def jitter(model, seed):
    # init leaves biases and norm gains at 0/1; perturb every parameter so they are exercised
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, p in sorted(model.named_parameters()):
            p.add_(0.1 * torch.randn(p.shape, generator=g))


def dump(model, out):
    out.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out, safe_serialization=True)
    for extra in ("generation_config.json",):
        (out / extra).unlink(missing_ok=True)
    logits = []
    with torch.no_grad():
        for p in PROMPTS:
            logits.append(model(torch.tensor([p])).logits[0].double().tolist())
    (out / "expected.json").write_text(json.dumps({"prompts": PROMPTS, "logits": logits}) + "\n")


def main():
    torch.manual_seed(0)
    gpt2 = GPT2LMHeadModel(GPT2Config(vocab_size=64, n_positions=16, n_embd=16, n_layer=2, n_head=2,
                                      activation_function="gelu_new", resid_pdrop=0.0, embd_pdrop=0.0,
                                      attn_pdrop=0.0, tie_word_embeddings=True)).eval()
    jitter(gpt2, 1)
    dump(gpt2, ROOT / "hf_gpt2")

    torch.manual_seed(0)
    llama = LlamaForCausalLM(LlamaConfig(vocab_size=64, hidden_size=32, intermediate_size=48, num_hidden_layers=2,
                                         num_attention_heads=4, num_key_value_heads=2, max_position_embeddings=16,
                                         rms_norm_eps=1e-6, rope_theta=10000.0, tie_word_embeddings=False,
                                         attention_bias=False, mlp_bias=False)).eval()
    jitter(llama, 2)
    dump(llama, ROOT / "hf_llama_gqa")


if __name__ == "__main__":
    main()
