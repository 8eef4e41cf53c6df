"""Plain-CIDEr values for a toy corpus, computed with the pycocoevalcap scorer.

The packaged scorer implements the CIDEr-D variant. Two lines are patched
back to plain CIDEr before use: the clipped term min(h, r) * r becomes h * r,
and the Gaussian length penalty is dropped. Everything else (n-gram counting,
document frequencies over reference sets, log(N) reference length, the
averaging and the factor 10) is the packaged code.

usage: python3 cider_plain.py CORPUS.json [--pycocoevalcap DIR] > EXPECTED.json
"""

import argparse
import importlib.util
import json
import pathlib
import sys
import types

CLIPPED = "val[n] += min(vec_hyp[n][ngram], vec_ref[n][ngram]) * vec_ref[n][ngram]"
PENALTY = "val[n] *= np.e**(-(delta**2)/(2*self.sigma**2))"


def load_plain_scorer(root):
    source_path = pathlib.Path(root) / "pycocoevalcap" / "cider" / "cider_scorer.py"
    source = source_path.read_text()
    if CLIPPED not in source or PENALTY not in source:
        sys.exit("unexpected cider_scorer.py layout; refusing to patch")
    source = source.replace(CLIPPED, "val[n] += vec_hyp[n][ngram] * vec_ref[n][ngram]")
    source = source.replace(PENALTY, "pass")
    module = types.ModuleType("cider_scorer_plain")
    exec(compile(source, str(source_path), "exec"), module.__dict__)
    return module.CiderScorer


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("corpus")
    parser.add_argument("--pycocoevalcap", default=None,
                        help="directory containing the pycocoevalcap package")
    args = parser.parse_args()
    root = args.pycocoevalcap
    if root is None:
        spec = importlib.util.find_spec("pycocoevalcap")
        if spec is None:
            sys.exit("pycocoevalcap not found; pass --pycocoevalcap")
        root = pathlib.Path(spec.origin).parent.parent
    CiderScorer = load_plain_scorer(root)

    records = json.load(open(args.corpus))["records"]
    scorer = CiderScorer(n=4, sigma=6.0)
    for record in records:
        # The corpus uses lowercase words separated by single spaces, so
        # whitespace splitting equals the tool's tokenizer here.
        scorer += (record["candidate"], record["references"])
    mean, per_record = scorer.compute_score()
    json.dump({"mean": float(mean), "per_record": [float(s) for s in per_record]},
              sys.stdout, indent=2)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
