#!/usr/bin/env python3
"""Writes the checked-in fixture corpus.

Outputs (next to this script):
  dump.jsonl        comment dump with planted noise
  lexicon.json      per-language word lists and the toxic lexicon
  wordmap.tsv       en -> de word mapping used as a stub translator
  langid_train.tsv  language<TAB>text lines for language-id training

Run recount.py afterwards to regenerate expected.json.
"""

import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent

EN = (
    "thanks a lot sounds good to me i agree with you see soon no idea the cat dog house car "
    "is very nice great really think that this game movie love hate play today tomorrow we they "
    "what why how music food friend"
).split()
DE = (
    "danke ein viel klingt gut zu mir ich stimme mit dir sehe bald kein ahnung der katze hund haus "
    "auto ist sehr nett toll wirklich denke dass dieses spiel film liebe hasse spielen heute morgen "
    "wir sie wieso warum wie musik essen freund"
).split()
TOXIC = ["toxicword", "giftwort"]

# Reply text -> number of retained pairs carrying it. Counts are spread far
# enough apart that membership and the size cap do not depend on the split.
FREQUENT = {
    "en": {"thanks a lot": 90, "sounds good to me": 70, "i agree with you": 55, "see you soon": 45, "no idea": 40},
    "de": {"danke": 60, "klingt gut": 45},
}
RARE = {"en": 150, "de": 100}
CHAIN_PAIRS = 4


def sentence(rng, words, lo, hi):
    return " ".join(rng.choice(words) for _ in range(rng.randint(lo, hi)))


def main():
    assert len(EN) == len(DE) == len(set(EN)) == len(set(DE))
    assert not set(EN) & set(DE)
    rng = random.Random(20240517)
    lexicon = {"en": EN, "de": DE}
    lines = []
    next_id = [0]

    def new_id():
        next_id[0] += 1
        return f"c{next_id[0]:05d}"

    def comment(thread, parent, body, score=None):
        cid = new_id()
        rec = {
            "id": cid,
            "parent_id": f"t1_{parent}" if parent else f"t3_{thread}",
            "body": body,
            "score": rng.randint(1, 50) if score is None else score,
            "created_utc": 1500000000 + next_id[0],
            "link_id": f"t3_{thread}",
        }
        lines.append(json.dumps(rec))
        return cid

    thread_no = [0]

    def new_thread():
        thread_no[0] += 1
        return f"th{thread_no[0]:04d}"

    for lang in ["en", "de"]:
        words = lexicon[lang]
        replies = [t for t, c in FREQUENT[lang].items() for _ in range(c)]
        rare = set()
        while len(rare) < RARE[lang]:
            s = sentence(rng, words, 3, 7)
            if s not in FREQUENT[lang]:
                rare.add(s)
        replies += sorted(rare)
        rng.shuffle(replies)
        for i in range(0, len(replies), CHAIN_PAIRS):
            thread = new_thread()
            parent = comment(thread, None, sentence(rng, words, 4, 9))
            for reply in replies[i : i + CHAIN_PAIRS]:
                parent = comment(thread, parent, reply)

    def plant_pair(message, reply, message_score=None, reply_score=None):
        thread = new_thread()
        root = comment(thread, None, message, message_score)
        comment(thread, root, reply, reply_score)

    for _ in range(12):
        plant_pair(sentence(rng, EN, 4, 8), "[deleted]")
    for _ in range(4):
        # A removed comment in the middle: both pairs touching it drop.
        thread = new_thread()
        root = comment(thread, None, sentence(rng, DE, 4, 8))
        mid = comment(thread, root, "[removed] ")
        comment(thread, mid, sentence(rng, DE, 3, 6))
    for _ in range(15):
        plant_pair(sentence(rng, EN, 4, 8), sentence(rng, EN, 3, 6), reply_score=rng.choice([0, -2, -7]))
    for _ in range(8):
        plant_pair(sentence(rng, DE, 4, 8), sentence(rng, DE, 3, 6), message_score=0)
    for _ in range(10):
        plant_pair(sentence(rng, EN, 4, 8), sentence(rng, EN, 2, 4) + " toxicword")
    for _ in range(8):
        plant_pair("giftwort " + sentence(rng, DE, 4, 8), sentence(rng, DE, 3, 6))
    for _ in range(12):
        plant_pair(" ".join(str(rng.randint(0, 999)) for _ in range(3)), str(rng.randint(0, 99)))
    for _ in range(10):
        # Half English, half German: confidence 0.5.
        n = rng.randint(2, 4)
        plant_pair(" ".join(rng.choice(EN) for _ in range(n)), " ".join(rng.choice(DE) for _ in range(n)))
    for _ in range(8):
        thread = new_thread()
        comment(thread, None, sentence(rng, EN, 4, 8))
        comment(thread, "missing" + new_id(), sentence(rng, EN, 3, 6))
    for _ in range(5):
        plant_pair(sentence(rng, DE, 4, 8), "   ")
    lines += [
        "{not json",
        json.dumps({"id": "x1", "body": "no score or thread"}),
        json.dumps({"id": "x2", "parent_id": "t1_x2", "body": "self parent", "score": 3, "link_id": "t3_x"}),
        json.dumps({"id": "", "body": "empty id", "score": 3, "link_id": "t3_x"}),
        "",
        json.dumps([1, 2, 3]),
    ]

    (HERE / "dump.jsonl").write_text("\n".join(lines) + "\n")
    (HERE / "lexicon.json").write_text(json.dumps({"languages": lexicon, "toxic": TOXIC}, indent=1) + "\n")
    (HERE / "wordmap.tsv").write_text("".join(f"{e}\t{d}\n" for e, d in zip(EN, DE)))
    langid = []
    for lang in ["en", "de"]:
        for _ in range(200):
            langid.append(f"{lang}\t{sentence(rng, lexicon[lang], 3, 10)}")
    (HERE / "langid_train.tsv").write_text("\n".join(langid) + "\n")


if __name__ == "__main__":
    main()
