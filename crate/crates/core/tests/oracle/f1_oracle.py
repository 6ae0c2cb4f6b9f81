#!/usr/bin/env python3
"""Independent brute-force token F1 / exact match oracle.

Generates tests/fixtures/f1_golden.json. Deliberately shares no code with the
Rust implementation: normalization is regex based and token matching is a
quadratic greedy search instead of multiset counting.

Normalization: lowercase, ASCII punctuation -> space, drop the articles
a/an/the, collapse whitespace.
"""
import json
import random
import re
import string
import sys

PUNCT = re.compile("[" + re.escape(string.punctuation) + "]")
ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize(s):
    s = s.lower()
    s = PUNCT.sub(" ", s)
    s = ARTICLES.sub(" ", s)
    return " ".join(s.split())


def brute_f1(pred, gold):
    p = normalize(pred).split()
    g = normalize(gold).split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    used = [False] * len(g)
    common = 0
    for tok in p:
        for i, other in enumerate(g):
            if not used[i] and other == tok:
                used[i] = True
                common += 1
                break
    if common == 0:
        return 0.0
    precision = common / len(p)
    recall = common / len(g)
    return 2 * precision * recall / (precision + recall)


def score(pred, golds):
    f1 = max(brute_f1(pred, g) for g in golds)
    em = 1 if any(normalize(pred) == normalize(g) for g in golds) else 0
    return f1, em


FIXED = [
    ("The Cat!", ["cat"]),
    ("red car", ["car"]),
    ("", [""]),
    ("", ["something"]),
    ("an  apple-tree", ["apple tree"]),
    ("the the the", ["a"]),
    ("New York City", ["new york", "NYC"]),
    ("1,000 people", ["1000 people"]),
    ("ribavirin", ["Ribavirin."]),
    ("dog dog cat", ["dog cat cat"]),
]

WORDS = ["the", "a", "an", "cat", "dog", "red", "car", "blue", "house", "virus",
         "drug", "ribavirin", "contract", "term", "1998", "covid-19", "Paris",
         "movie", "plot", "hero", "game", "o'neil", "state", "U.S.", "mortality"]


def random_phrase(rng):
    n = rng.randint(0, 6)
    parts = []
    for _ in range(n):
        w = rng.choice(WORDS)
        if rng.random() < 0.3:
            w = w.upper() if rng.random() < 0.5 else w.capitalize()
        if rng.random() < 0.2:
            w += rng.choice([",", ".", "!", "?", ";", ")"])
        parts.append(w)
    sep = "  " if rng.random() < 0.1 else " "
    return sep.join(parts)


def main():
    rng = random.Random(20230612)
    cases = [(p, g) for p, g in FIXED]
    while len(cases) < 50:
        golds = [random_phrase(rng) for _ in range(rng.randint(1, 3))]
        if rng.random() < 0.25:
            pred = golds[0]
        else:
            pred = random_phrase(rng)
        cases.append((pred, golds))
    out = []
    for pred, golds in cases:
        f1, em = score(pred, golds)
        out.append({"pred": pred, "golds": golds, "f1": f1, "em": em})
    json.dump(out, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
