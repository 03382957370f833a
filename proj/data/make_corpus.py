#!/usr/bin/env python3
"""Regenerates corpus.txt, the bundled synthetic pretraining corpus.

500 templated sentences over a small closed vocabulary. The corpus mixes
subject-verb-object sentences, locatives, copulars and "meta" sentences so
that every word used by the prompt templates (means, represents, meaning,
representation, sentence, is, of, the quote and colon marks, the period)
occurs with real frequency. Deterministic: running this script rewrites the
identical file.
"""

import random

N = 500
SEED = 20240601

NOUNS = [
    "cat", "dog", "bird", "fish", "tree", "river", "stone", "house", "child",
    "teacher", "book", "song", "road", "cloud", "garden", "letter", "window",
    "door", "friend", "sign", "symbol", "mark", "word", "note", "drawing",
    "picture", "story", "name",
]
VERBS = [
    "sees", "finds", "likes", "follows", "carries", "paints", "reads",
    "sings", "builds", "opens", "closes", "watches", "draws", "holds",
]
ADJS = [
    "small", "big", "red", "blue", "old", "new", "quiet", "bright", "tall",
    "warm", "long", "short",
]
PREPS = ["near", "under", "over", "by", "with", "in"]


def simple(rng):
    s = ["the"]
    if rng.random() < 0.4:
        s.append(rng.choice(ADJS))
    s += [rng.choice(NOUNS), rng.choice(VERBS), "the"]
    if rng.random() < 0.4:
        s.append(rng.choice(ADJS))
    s += [rng.choice(NOUNS), "."]
    return s


def locative(rng):
    return [
        "the", rng.choice(NOUNS), rng.choice(VERBS), "the", rng.choice(NOUNS),
        rng.choice(PREPS), "the", rng.choice(NOUNS), ".",
    ]


def copular(rng):
    if rng.random() < 0.5:
        return ["the", rng.choice(NOUNS), "is", rng.choice(ADJS), "."]
    return [
        "the", rng.choice(NOUNS), "is", "the", rng.choice(NOUNS), "of", "the",
        rng.choice(NOUNS), ".",
    ]


def meta(rng):
    kind = rng.randrange(4)
    inner = simple(rng)[:-1]  # quoted sentence without its period
    if kind == 0:
        return ["the", rng.choice(["sign", "symbol", "mark"]), "means", "the",
                rng.choice(["word", "name", "song"]), "."]
    if kind == 1:
        return (["the", rng.choice(["mark", "drawing", "picture"]),
                 "represents", "the", "sentence", ":", '"'] + inner + ['"', "."])
    if kind == 2:
        return (["the", rng.choice(["note", "letter", "word"]), "is", "the",
                 "meaning", "of", "the", "sentence", ":", '"'] + inner
                + ['"', "."])
    return (["the", rng.choice(["drawing", "picture", "symbol"]), "is", "the",
             "representation", "of", "the", rng.choice(NOUNS), "."])


def main():
    rng = random.Random(SEED)
    makers = [simple] * 11 + [locative] * 3 + [copular] * 3 + [meta] * 3
    lines = [" ".join(rng.choice(makers)(rng)) for _ in range(N)]
    with open("corpus.txt", "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
