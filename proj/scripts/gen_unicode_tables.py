#!/usr/bin/env python3
"""Regenerates include/kcircuit/detail/unicode_tables.hpp.

Character classes follow the `regex` module's \\p{L}, \\p{N} and \\s, which is
what the GPT-2 pre-tokenizer pattern is defined against.
"""
import sys

import regex

CLASSES = {"letter": r"\p{L}", "number": r"\p{N}", "space": r"\s"}


def ranges(pattern):
    rx = regex.compile(pattern)
    out, start = [], None
    for cp in range(0x110000 + 1):
        hit = cp < 0x110000 and not (0xD800 <= cp <= 0xDFFF) and rx.fullmatch(chr(cp)) is not None
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    return out


def main(path):
    lines = [
        "// Generated by scripts/gen_unicode_tables.py. Do not edit.",
        "#pragma once",
        "",
        "#include <array>",
        "#include <cstdint>",
        "",
        "namespace kc::detail {",
        "",
        "struct CodepointRange {",
        "    std::uint32_t lo;",
        "    std::uint32_t hi;",
        "};",
        "",
    ]
    for name, pat in CLASSES.items():
        rs = ranges(pat)
        lines.append(f"inline constexpr std::array<CodepointRange, {len(rs)}> k_{name}_ranges{{{{")
        for i in range(0, len(rs), 4):
            chunk = ", ".join(f"{{0x{a:X}, 0x{b:X}}}" for a, b in rs[i:i + 4])
            lines.append(f"    {chunk},")
        lines.append("}};")
        lines.append("")
    lines.append("}  // namespace kc::detail")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "include/kcircuit/detail/unicode_tables.hpp")
