#!/usr/bin/env python3
"""Writes the 200-query whole-image baseline fixture and its expected numbers.

The expected values are computed here with plain float arithmetic, without
the engine, so the acceptance run checks the Rust evaluation against an
independent implementation.
"""

import json
import random
import string
import sys
from pathlib import Path

COLOURS = {"black", "blue", "brown", "grey", "green", "orange", "pink", "purple", "red", "white", "yellow"}
CATEGORIES = ["people", "clothing", "bodyparts", "animals", "vehicles", "instruments", "scene", "other"]
WORDS = [
    "a", "the", "two", "man", "woman", "dog", "shirt", "hat", "street", "guitar", "car", "hand",
    "Red", "blue,", "gray", "grey", "green.", "reddish", "red-haired", "white", "crowd", "bike",
]


def whole_image_iou(w, h, box):
    x0, y0, x1, y1 = box
    inter = (min(x1, w) - max(x0, 0)) * (min(y1, h) - max(y0, 0))
    return inter / (w * h + (x1 - x0) * (y1 - y0) - inter)


def tokens(phrase):
    out = []
    for piece in phrase.split():
        piece = piece.strip(string.punctuation).lower()
        if piece:
            out.append(piece)
    return out


def main(out_dir):
    rng = random.Random(20240917)
    rows = []
    sizes = {}
    for i in range(200):
        image_id = f"img{i // 3:03d}"
        if image_id not in sizes:
            sizes[image_id] = rng.randint(50, 640), rng.randint(50, 640)
        w, h = sizes[image_id]
        # mix of large and small boxes so both outcomes occur
        frac = rng.choice([0.3, 0.6, 0.75, 0.9, 1.0])
        bw, bh = max(1, int(w * rng.uniform(frac * 0.5, frac))), max(1, int(h * rng.uniform(frac * 0.5, frac)))
        x0, y0 = rng.randint(0, w - bw), rng.randint(0, h - bh)
        boxes = [(x0, y0, x0 + bw, y0 + bh)]
        if rng.random() < 0.2:
            sx, sy = rng.randint(0, w - 1), rng.randint(0, h - 1)
            boxes.append((sx, sy, rng.randint(sx + 1, w), rng.randint(sy + 1, h)))
        r = rng.random()
        cats = [] if r < 0.05 else rng.sample(CATEGORIES, 2 if r > 0.9 else 1)
        phrase = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 4)))
        rows.append((image_id, w, h, phrase, cats, boxes))

    lines = ["image_id\twidth\theight\tphrase\tcategory\tgt_boxes"]
    correct = 0
    per_cat = {c: 0 for c in CATEGORIES}
    colour = 0
    for image_id, w, h, phrase, cats, boxes in rows:
        gt = (
            min(b[0] for b in boxes), min(b[1] for b in boxes),
            max(b[2] for b in boxes), max(b[3] for b in boxes),
        )
        correct += whole_image_iou(w, h, gt) >= 0.5
        for c in cats or ["other"]:
            per_cat[c] += 1
        colour += any(t in COLOURS for t in tokens(phrase))
        box_text = ";".join(",".join(map(str, b)) for b in boxes)
        lines.append(f"{image_id}\t{w}\t{h}\t{phrase}\t{'|'.join(cats)}\t{box_text}")

    out = Path(out_dir)
    (out / "baseline200.tsv").write_text("\n".join(lines) + "\n")
    expected = {
        "queries": len(rows),
        "correct": correct,
        "accuracy_pct": round(100.0 * correct / len(rows), 2),
        "category_counts": per_cat,
        "colour_subset": colour,
    }
    (out / "baseline200.expected.json").write_text(json.dumps(expected, indent=2) + "\n")
    print(json.dumps(expected))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "crates/cli/tests/fixtures")
