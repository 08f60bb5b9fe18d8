"""Sweep the opt-out threshold for a trained model and tabulate the
coverage / retained-accuracy trade-off.

Raising the threshold makes the model decline more contexts; the kept
suggestions should become more accurate.  Reads a checkpoint and a
labeled-example file produced by `replybank bank extract`:

    python3 scripts/opt_out_sweep.py --model work/model.ckpt \
        --examples work/val.bin --out curve.csv
"""

import argparse

import numpy as np

from replybank import bank as bank_mod
from replybank import classifier as clf


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", required=True)
    parser.add_argument("--examples", required=True)
    parser.add_argument("--points", type=int, default=21)
    parser.add_argument("--out", help="also write the curve as CSV")
    args = parser.parse_args()

    model, extractor = clf.load_model(args.model)
    examples = bank_mod.read_examples(args.examples)
    features = extractor.transform_batch([ex.context_tokens for ex in examples])
    class_ids = np.array([ex.class_id for ex in examples])
    _, tops, max_probs = clf.predict_batch(model, features)
    correct = tops == class_ids

    thresholds = np.linspace(0.0, 1.0, args.points)
    points = clf.opt_out_curve_points(max_probs, correct, thresholds)

    print(f"{len(examples)} examples, overall accuracy {correct.mean():.4f}, "
          f"calibrated threshold {model.opt_out_threshold:.3f}")
    print(f"{'threshold':>10} {'coverage':>10} {'retained':>10}")
    for p in points:
        retained = "-" if p.retained_accuracy is None else f"{p.retained_accuracy:.4f}"
        print(f"{p.threshold:>10.3f} {p.coverage:>10.3f} {retained:>10}")

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("threshold,coverage,retained_accuracy\n")
            for p in points:
                acc = "" if p.retained_accuracy is None else repr(p.retained_accuracy)
                fh.write(f"{p.threshold!r},{p.coverage!r},{acc}\n")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
