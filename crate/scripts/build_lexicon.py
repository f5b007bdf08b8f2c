#!/usr/bin/env python3
"""Build crates/core/data/affect_lexicon.json.

positive_emotion / negative_emotion come from the VADER sentiment lexicon
(MIT licensed, https://github.com/cjhutto/vaderSentiment): single words whose
mean valence is >= +1.9 or <= -1.9. `affect` is their union plus a short
list of emotion terms without a strong valence. The
function-word categories are hand-written.

usage: build_lexicon.py path/to/vader_lexicon.txt > affect_lexicon.json
"""
import json
import re
import sys

WORD = re.compile(r"^[a-z]+(?:'[a-z]+)?$")
THRESHOLD = 1.9

EXTRA_AFFECT = [
    "anticipation", "anticipate", "emotion", "emotional", "emotions", "feeling",
    "feelings", "mood", "nostalgia", "nostalgic", "longing", "vulnerability",
    "vulnerable", "overwhelmed", "overwhelming", "surprise", "surprised",
    "mixed", "yearning", "wistful", "bittersweet", "cherish", "cherished",
    "shocked", "confusion", "confused", "startled", "stunned",
]

SELF_REFERENCE = ["i", "me", "my", "mine", "myself", "i'm", "i've", "i'd", "i'll"]

EXCLUSIVE = [
    "but", "without", "except", "exclude", "excluded", "excluding", "rather",
    "whether", "although", "though", "unless", "besides", "however", "instead",
    "yet", "or", "either", "neither", "nor", "only", "just", "whereas",
]

MOTION = [
    "go", "goes", "going", "gone", "went", "come", "comes", "coming", "came",
    "walk*", "move*", "moving", "arrive*", "leave", "leaves", "leaving", "left",
    "run", "runs", "running", "ran", "drive*", "drove", "travel*", "journey*",
    "wander*", "enter*", "exit*", "step*", "follow*", "return*", "fly", "flew",
    "flying", "jump*", "climb*", "crawl*", "rush*", "hurry*", "approach*",
    "carry", "carried", "bring", "brought", "pass", "passed", "turn", "turned",
    "rise", "rose", "fall", "fell", "falling", "lost", "embark*", "adventure*",
]


def main(path):
    pos, neg = set(), set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 2:
                continue
            word, mean = parts[0], float(parts[1])
            if not WORD.match(word) or len(word) < 3:
                continue
            if mean >= THRESHOLD:
                pos.add(word)
            elif mean <= -THRESHOLD:
                neg.add(word)
    affect = pos | neg | set(EXTRA_AFFECT)
    lexicon = {
        "affect": sorted(affect),
        "exclusive": sorted(EXCLUSIVE),
        "motion": sorted(MOTION),
        "negative_emotion": sorted(neg),
        "positive_emotion": sorted(pos),
        "self_reference": sorted(SELF_REFERENCE),
    }
    json.dump(lexicon, sys.stdout, indent=1, ensure_ascii=False)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main(sys.argv[1])
