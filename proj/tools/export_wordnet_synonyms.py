#!/usr/bin/env python3
"""Export a token -> synset-id table from WordNet 3.0 index files.

Usage: export_wordnet_synonyms.py <wordnet-dict-dir> <out.tsv>

Only single-word, purely alphabetic lemmas are kept. Each output line is
`token<TAB>id id id ...` where an id is `<pos><offset>` (e.g. a01123148).
The first line carries the format tag.
"""
import collections
import os
import sys


def main():
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 1
    src, out = sys.argv[1], sys.argv[2]
    table = collections.defaultdict(set)
    for pos in ("noun", "verb", "adj", "adv"):
        with open(os.path.join(src, "index." + pos), encoding="latin-1") as fh:
            for line in fh:
                if line.startswith(" "):
                    continue
                parts = line.split()
                lemma, pos_tag = parts[0], parts[1]
                if not lemma.isalpha():
                    continue
                synset_cnt = int(parts[2])
                offsets = parts[-synset_cnt:]
                for off in offsets:
                    table[lemma.lower()].add(pos_tag + off)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("#aim-synonyms-v1\tsource=wordnet-3.0\n")
        for token in sorted(table):
            fh.write(token + "\t" + " ".join(sorted(table[token])) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
