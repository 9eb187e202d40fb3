#!/usr/bin/env python3
"""Recompute evaluation metrics from a `ted eval` prediction log.

Usage: recompute_metrics.py <prefix>.predictions.tsv
Prints a JSON object with full_dialogue_accuracy, action_accuracy and macro_f1.
"""
import csv
import json
import sys
from collections import Counter, defaultdict


def recompute(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f, delimiter="\t"))
    correct = [r["correct"] == "1" for r in rows]
    by_dialogue = defaultdict(list)
    for r, ok in zip(rows, correct):
        by_dialogue[r["dialogue_id"]].append(ok)
    support = Counter(r["gold"] for r in rows)
    predicted = Counter(r["predicted"] for r in rows)
    hits = Counter(r["gold"] for r, ok in zip(rows, correct) if ok)
    f1s = []
    for label, s in support.items():
        p = hits[label] / predicted[label] if predicted[label] else 0.0
        rec = hits[label] / s
        f1s.append(0.0 if p + rec == 0 else 2 * p * rec / (p + rec))
    return {
        "full_dialogue_accuracy": sum(all(v) for v in by_dialogue.values()) / len(by_dialogue) if by_dialogue else 0.0,
        "action_accuracy": sum(correct) / len(rows) if rows else 0.0,
        "macro_f1": sum(f1s) / len(f1s) if f1s else 0.0,
    }


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    print(json.dumps(recompute(sys.argv[1])))
