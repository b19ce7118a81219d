#!/usr/bin/env python3
"""Regenerates src/arabic_tables.inc from Python's unicodedata.

Emits compatibility decompositions, combining classes and canonical
composition pairs for the Arabic blocks the normalizer operates on.
"""
import sys
import unicodedata as ud

ARABIC_RANGES = [
    (0x0600, 0x06FF),
    (0x0750, 0x077F),
    (0x0870, 0x089F),
    (0x08A0, 0x08FF),
    (0xFB50, 0xFDFF),
    (0xFE70, 0xFEFF),
]


def arabic_codepoints():
    for lo, hi in ARABIC_RANGES:
        yield from range(lo, hi + 1)


def main(out):
    decomp = []
    seen = set()
    for cp in arabic_codepoints():
        ch = chr(cp)
        d = ud.normalize("NFKD", ch)
        if d != ch:
            decomp.append((cp, [ord(c) for c in d]))
            seen.update(ord(c) for c in d)
        seen.add(cp)

    ccc = sorted((cp, ud.combining(chr(cp))) for cp in seen if ud.combining(chr(cp)))

    compose = []
    for cp in arabic_codepoints():
        d = ud.decomposition(chr(cp))
        if not d or d.startswith("<"):
            continue
        parts = [int(x, 16) for x in d.split()]
        if len(parts) == 2 and ud.normalize("NFC", chr(parts[0]) + chr(parts[1])) == chr(cp):
            compose.append((parts[0], parts[1], cp))

    w = out.write
    w(f"// Generated by scripts/gen_arabic_tables.py (Unicode {ud.unidata_version}). Do not edit.\n\n")
    w("constexpr DecompEntry kDecompositions[] = {\n")
    for cp, parts in decomp:
        body = ", ".join(f"0x{p:04X}" for p in parts)
        w(f"    {{0x{cp:04X}, {len(parts)}, {{{body}}}}},\n")
    w("};\n\n")
    w("constexpr CombiningEntry kCombiningClasses[] = {\n")
    for cp, c in ccc:
        w(f"    {{0x{cp:04X}, {c}}},\n")
    w("};\n\n")
    w("constexpr CompositionEntry kCompositions[] = {\n")
    for a, b, c in sorted(compose):
        w(f"    {{0x{a:04X}, 0x{b:04X}, 0x{c:04X}}},\n")
    w("};\n")
    return max(len(p) for _, p in decomp)


if __name__ == "__main__":
    longest = main(sys.stdout)
    print(f"longest decomposition: {longest}", file=sys.stderr)
