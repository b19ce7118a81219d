#!/usr/bin/env python3
"""Builds tests/data/norm_golden.jsonl with an independent Python model of
the normalization pipeline (NFKC from unicodedata applied to Arabic runs)."""
import json
import random
import sys
import unicodedata as ud

PRESENTATION = [(0xFB50, 0xFDFF), (0xFE70, 0xFEFF)]
ARABIC = [(0x0600, 0x06FF), (0x0750, 0x077F), (0x0870, 0x089F), (0x08A0, 0x08FF)] + PRESENTATION
WHITESPACE = set([0x09, 0x0A, 0x0B, 0x0C, 0x0D, 0x20, 0x85, 0xA0, 0x1680, 0x2028, 0x2029,
                  0x202F, 0x205F, 0x3000, 0x2581] + list(range(0x2000, 0x200B)))
ALEF_VARIANTS = {0x0622, 0x0623, 0x0625, 0x0671}


def in_ranges(cp, ranges):
    return any(lo <= cp <= hi for lo, hi in ranges)


def nfkc_runs(s):
    out, run = [], []
    for ch in s:
        if in_ranges(ord(ch), ARABIC):
            run.append(ch)
        else:
            if run:
                out.append(ud.normalize("NFKC", "".join(run)))
                run = []
            out.append(ch)
    if run:
        out.append(ud.normalize("NFKC", "".join(run)))
    return "".join(out)


def normalize(s, cfg):
    if cfg["unicode_canonicalize"]:
        s = nfkc_runs(s)
        s = "".join(c for c in s if not in_ranges(ord(c), PRESENTATION))
    if cfg["remove_tatweel"]:
        s = s.replace("ـ", "")
    if not cfg["preserve_diacritics"]:
        s = "".join(c for c in s if not 0x064B <= ord(c) <= 0x0652)
    if cfg["unicode_canonicalize"]:
        s = nfkc_runs(s)
    if cfg["fold_alef"]:
        while True:
            t = "".join("ا" if ord(c) in ALEF_VARIANTS else c for c in s)
            if cfg["unicode_canonicalize"]:
                t = nfkc_runs(t)
            if t == s:
                break
            s = t
    if cfg["lowercase_latin"]:
        s = "".join(c.lower() if "A" <= c <= "Z" else c for c in s)
    if cfg["collapse_whitespace"]:
        parts, cur, pending = [], [], False
        for c in s:
            if ord(c) in WHITESPACE:
                pending = True
            else:
                if pending and parts:
                    parts.append(" ")
                pending = False
                parts.append(c)
        s = "".join(parts)
    return s


def alphabet():
    a = [chr(c) for c in range(0x0621, 0x063B)] + [chr(c) for c in range(0x0641, 0x064B)]
    a += [chr(c) for c in range(0x064B, 0x0656)] + ["ٰ", "ـ", "ٴ"]
    a += [chr(c) for c in range(0xFEF5, 0xFEFD)]
    a += [chr(c) for c in (0xFE70, 0xFE71, 0xFE80, 0xFE8D, 0xFB50, 0xFC5E, 0xFDF2, 0xFDFA,
                           0xFD3E, 0xFEFF, 0xFBB2, 0x0675, 0x06C1, 0x06D2, 0x06D5)]
    a += list("abcXYZ09.,") + [" ", " ", "\t", "\n", " ", "▁", "　", "̀"]
    return a


def main():
    rng = random.Random(20240601)
    alpha = alphabet()
    presentation = [chr(c) for lo, hi in PRESENTATION for c in range(lo, hi + 1)]
    keys = ["unicode_canonicalize", "preserve_diacritics", "remove_tatweel",
            "collapse_whitespace", "lowercase_latin", "fold_alef"]
    default = dict(unicode_canonicalize=True, preserve_diacritics=True, remove_tatweel=True,
                   collapse_whitespace=True, lowercase_latin=False, fold_alef=False)
    for i in range(800):
        cfg = dict(default) if i < 400 else {k: rng.random() < 0.5 for k in keys}
        n = rng.randint(0, 24)
        s = "".join(rng.choice(presentation) if rng.random() < 0.08 else rng.choice(alpha)
                    for _ in range(n))
        rec = {"config": cfg, "input": s, "expected": normalize(s, cfg)}
        sys.stdout.write(json.dumps(rec, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
