#!/usr/bin/env python3
"""Regenerates the bundled synthetic corpus under crates/core/data/synthetic.

Outputs:
  train.txt     20 tagged tweets in TMN layout (IMGID line, token TAB tag)
  sidecar.tsv   top-5 image labels with probabilities per image id
  glove.txt     50 words x 200 dims
  fasttext.txt  50 words x 300 dims (with a fastText header line)
  vocab.txt     1000 subword entries, one per line

Deterministic: rerunning produces byte-identical files.
"""

import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "data" / "synthetic"

ENTITIES = {
    "PER": [["Alice"], ["Bob", "Marley"], ["Taylor", "Swift"], ["Obama"]],
    "LOC": [["Paris"], ["New", "York"], ["Tokyo"], ["Texas"]],
    "ORG": [["NASA"], ["Google"], ["FIFA"], ["Lakers"]],
    "MISC": [["Olympics"], ["Christmas"], ["iPhone"], ["Grammys"]],
}

# slot order: (type, type) pairs filled into templates
TEMPLATES = [
    ["RT", "@", "{PER}", ":", "great", "night", "in", "{LOC}", "!"],
    ["{PER}", "visits", "{LOC}", "with", "{ORG}", "today"],
    ["watching", "the", "{MISC}", "from", "{LOC}", "#", "love"],
    ["{ORG}", "announces", "new", "{MISC}", "deal"],
    ["{PER}", "loves", "the", "{MISC}"],
    ["live", "from", "{LOC}", ":", "{PER}", "and", "{ORG}", "at", "the", "{MISC}"],
]

IMAGE_LABELS = {
    "PER": ["suit", "microphone", "stage", "sunglasses", "jersey"],
    "LOC": ["palace", "skyscraper", "street_sign", "monument", "lakeside"],
    "ORG": ["space_shuttle", "monitor", "soccer_ball", "basketball", "web_site"],
    "MISC": ["christmas_stocking", "cellular_telephone", "torch", "stage", "ballplayer"],
}

FILLER_LABELS = ["window_screen", "book_jacket", "comic_book", "envelope", "menu"]


def tag(tokens, kind):
    return [(t, ("B-" if i == 0 else "I-") + kind) for i, t in enumerate(tokens)]


def sentences(rng):
    out = []
    for n in range(20):
        template = TEMPLATES[n % len(TEMPLATES)]
        kinds = []
        rows = []
        for slot in template:
            if slot.startswith("{"):
                kind = slot[1:-1]
                kinds.append(kind)
                rows.extend(tag(rng.choice(ENTITIES[kind]), kind))
            else:
                rows.append((slot, "O"))
        out.append((f"img{n:03d}", rows, kinds))
    return out


def image_words(rng, kinds):
    pool = [l for k in kinds for l in IMAGE_LABELS[k]] + FILLER_LABELS
    labels = []
    for label in rng.sample(pool, len(pool)):
        if label not in labels:
            labels.append(label)
        if len(labels) == 5:
            break
    weights = sorted((rng.random() for _ in labels), reverse=True)
    scale = rng.uniform(0.6, 0.95) / sum(weights)
    return [(l, round(w * scale, 4)) for l, w in zip(labels, weights)]


def embedding_words(corpus):
    seen = []
    for _, rows, _ in corpus:
        for tok, _ in rows:
            w = tok.lower()
            if w not in seen:
                seen.append(w)
    extras = ["the", "a", "is", "on", "rt", "fans", "city", "team", "show", "music",
              "space", "phone", "holiday", "game", "tonight", "happy", "news", "world"]
    for w in extras:
        if len(seen) >= 50:
            break
        if w not in seen:
            seen.append(w)
    return seen[:50]


def write_embeddings(path, words, dim, rng, header):
    with path.open("w") as f:
        if header:
            f.write(f"{len(words)} {dim}\n")
        for w in words:
            vec = " ".join(f"{rng.gauss(0, 0.4):.5f}" for _ in range(dim))
            f.write(f"{w} {vec}\n")


def vocab(corpus, sidecar):
    entries = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]

    def add(e):
        if e not in entries:
            entries.append(e)

    for c in "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~":
        add(c)
    for c in "0123456789abcdefghijklmnopqrstuvwxyz":
        add(c)
    for c in "0123456789abcdefghijklmnopqrstuvwxyz":
        add("##" + c)
    for suffix in ["s", "es", "ed", "ing", "er", "ers", "ly", "ion", "ness", "ment", "able", "ist", "al", "ic"]:
        add("##" + suffix)
    for _, rows, _ in corpus:
        for tok, _ in rows:
            add(tok.lower())
    for words in sidecar.values():
        for label, _ in words:
            for part in label.split("_"):
                add(part)
    rng = random.Random(7)
    onsets = ["b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br", "st", "tr"]
    vowels = ["a", "e", "i", "o", "u", "ai", "ou"]
    codas = ["", "n", "r", "s", "t", "l", "m", "nd", "st"]
    while len(entries) < 1000:
        syllables = rng.randint(1, 3)
        word = "".join(rng.choice(onsets) + rng.choice(vowels) + rng.choice(codas) for _ in range(syllables))
        add(("##" + word) if rng.random() < 0.2 else word)
    return entries


def main():
    rng = random.Random(2024)
    OUT.mkdir(parents=True, exist_ok=True)
    corpus = sentences(rng)
    sidecar = {img: image_words(rng, kinds) for img, _, kinds in corpus}

    with (OUT / "train.txt").open("w") as f:
        for img, rows, _ in corpus:
            f.write(f"IMGID:{img}\n")
            for tok, t in rows:
                f.write(f"{tok}\t{t}\n")
            f.write("\n")

    with (OUT / "sidecar.tsv").open("w") as f:
        f.write("# image_id\tlabel\tprobability ... (top-5, descending)\n")
        for img, words in sidecar.items():
            cells = "\t".join(f"{l}\t{p}" for l, p in words)
            f.write(f"{img}\t{cells}\n")

    words = embedding_words(corpus)
    write_embeddings(OUT / "glove.txt", words, 200, random.Random(1), header=False)
    write_embeddings(OUT / "fasttext.txt", words, 300, random.Random(2), header=True)

    with (OUT / "vocab.txt").open("w") as f:
        for e in vocab(corpus, sidecar):
            f.write(e + "\n")


if __name__ == "__main__":
    main()
