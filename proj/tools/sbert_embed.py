#!/usr/bin/env python3
"""Embed texts with a sentence-transformers model.

Usage: sbert_embed.py TEXTS.json [--model NAME]
Reads a JSON array of strings and prints a JSON array of vectors on stdout.
"""
import argparse
import json
import sys


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("texts")
    ap.add_argument("--model", default="sentence-transformers/all-MiniLM-L6-v2")
    args = ap.parse_args()

    with open(args.texts, encoding="utf-8") as f:
        texts = json.load(f)
    if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
        print("expected a JSON array of strings", file=sys.stderr)
        return 2

    from sentence_transformers import SentenceTransformer

    model = SentenceTransformer(args.model)
    vecs = model.encode(texts, normalize_embeddings=True, show_progress_bar=False)
    json.dump([[float(x) for x in v] for v in vecs], sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
