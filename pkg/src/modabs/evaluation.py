"""ROUGE-1/2/L, optimal aspect alignment, #AbsAspDiff and multi-seed reports."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

Tokens = Sequence[int] | Sequence[str]
METRICS = ("rouge1", "rouge2", "rougeL", "abs_asp_diff")


def _prf(overlap: int, cand_total: int, ref_total: int) -> tuple[float, float, float]:
    if overlap == 0 or cand_total == 0 or ref_total == 0:
        return 0.0, 0.0, 0.0
    p = overlap / cand_total
    r = overlap / ref_total
    return p, r, 2 * overlap / (cand_total + ref_total)


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Tokens, reference: Tokens, n: int = 1) -> tuple[float, float, float]:
    if n < 1:
        raise ValueError("n must be at least 1")
    c, r = ngrams(list(candidate), n), ngrams(list(reference), n)
    overlap = sum((c & r).values())
    return _prf(overlap, sum(c.values()), sum(r.values()))


def lcs_length(a: Tokens, b: Tokens) -> int:
    a, b = list(a), list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens) -> tuple[float, float, float]:
    return _prf(lcs_length(candidate, reference), len(candidate), len(reference))


# -- alignment -------------------------------------------------------------


@dataclass
class Alignment:
    pairs: list[tuple[int, int]]  # (generated index, reference index)
    scores: list[float]
    unmatched_generated: list[int]
    unmatched_reference: list[int]

    @property
    def total(self) -> float:
        return float(sum(self.scores))


def align_aspects(generated: Sequence[Tokens], reference: Sequence[Tokens]) -> Alignment:
    """Maximum-total ROUGE-L F1 one-to-one matching.

    Empty generated summaries are dropped before matching; the indices in the
    result refer to the original ``generated`` list.
    """
    kept = [i for i, g in enumerate(generated) if len(g)]
    if not kept or not reference:
        return Alignment([], [], kept, list(range(len(reference))))
    score = np.array([[rouge_l(generated[i], r)[2] for r in reference] for i in kept])
    rows, cols = linear_sum_assignment(score, maximize=True)
    pairs = sorted((kept[r], int(c)) for r, c in zip(rows, cols))
    lookup = {g: k for k, g in enumerate(kept)}
    scores = [float(score[lookup[g], c]) for g, c in pairs]
    matched_g = {g for g, _ in pairs}
    matched_r = {c for _, c in pairs}
    return Alignment(
        pairs,
        scores,
        [g for g in kept if g not in matched_g],
        [c for c in range(len(reference)) if c not in matched_r],
    )


def abs_asp_diff(generated: Sequence[Tokens], reference_count: int) -> int:
    if reference_count < 1:
        raise ValueError("reference_count must be at least 1")
    return abs(sum(1 for g in generated if len(g)) - reference_count)


# -- per-sample and corpus reports -----------------------------------------


def score_sample(generated: Sequence[Tokens], reference: Sequence[Tokens],
                 similarity: Callable[[Tokens, Tokens], float] | None = None) -> dict:
    """Aligned ROUGE F1 averaged over reference aspects (unmatched score 0)."""
    al = align_aspects(generated, reference)
    k = len(reference)
    row = {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    for g, r in al.pairs:
        row["rouge1"] += rouge_n(generated[g], reference[r], 1)[2]
        row["rouge2"] += rouge_n(generated[g], reference[r], 2)[2]
        row["rougeL"] += rouge_l(generated[g], reference[r])[2]
    for key in row:
        row[key] /= k
    if similarity is not None:
        row["similarity"] = sum(similarity(generated[g], reference[r]) for g, r in al.pairs) / k
    nonempty = sum(1 for g in generated if len(g))
    row.update(
        abs_asp_diff=abs_asp_diff(generated, k),
        asp_diff=nonempty - k,
        num_generated=nonempty,
        num_reference=k,
        empty_generated=len(generated) - nonempty,
    )
    return row


@dataclass
class EvalReport:
    rows: list[dict]  # one per (seed, sample)
    per_seed: dict[str, dict[str, float]]  # seed -> metric -> mean over samples
    aggregate: dict[str, dict[str, float]]  # metric -> {mean, std} across seed means
    histograms: dict[str, dict[int, int]]  # seed -> signed aspect difference -> count
    empty_generations: dict[str, int] = field(default_factory=dict)
    per_seed_std: dict[str, dict[str, float]] = field(default_factory=dict)  # across samples

    def to_json(self) -> dict:
        return {
            "per_seed": self.per_seed,
            "per_seed_std": self.per_seed_std,
            "aggregate": self.aggregate,
            "histograms": {s: {str(k): v for k, v in sorted(h.items())}
                           for s, h in self.histograms.items()},
            "empty_generations": self.empty_generations,
            "num_samples": len({r["id"] for r in self.rows}),
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(
            json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        fields = ["seed", "id", *[k for k in self.rows[0] if k not in ("seed", "id")]] \
            if self.rows else ["seed", "id"]
        with (out / "per_sample.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows)
        with (out / "aspect_diff_histogram.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "difference", "count"])
            for seed, hist in self.histograms.items():
                for diff, count in sorted(hist.items()):
                    w.writerow([seed, diff, count])


def evaluate(predictions: Mapping[str, Mapping[str, Sequence[Tokens]]],
             references: Mapping[str, Sequence[Tokens]],
             similarity: Callable[[Tokens, Tokens], float] | None = None) -> EvalReport:
    """Score ``predictions[seed][sample_id]`` against ``references[sample_id]``.

    Metrics are averaged over samples within a seed, then mean and std (population)
    are taken across the seed means.
    """
    if not predictions:
        raise ValueError("no predictions supplied")
    ids = list(references)
    rows, per_seed, per_seed_std, hists, empties = [], {}, {}, {}, {}
    for seed, preds in predictions.items():
        missing = set(ids) - set(preds)
        extra = set(preds) - set(ids)
        if missing or extra:
            raise ValueError(
                f"seed {seed}: predictions do not match the test split "
                f"(missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]})"
            )
        seed_rows = []
        for sid in ids:
            row = {"seed": str(seed), "id": sid, **score_sample(preds[sid], references[sid], similarity)}
            seed_rows.append(row)
        rows.extend(seed_rows)
        keys = [k for k in seed_rows[0] if k not in ("seed", "id")] if seed_rows else list(METRICS)
        per_seed[str(seed)] = {k: float(np.mean([r[k] for r in seed_rows])) for k in keys}
        per_seed_std[str(seed)] = {k: float(np.std([r[k] for r in seed_rows])) for k in keys}
        hists[str(seed)] = dict(Counter(r["asp_diff"] for r in seed_rows))
        empties[str(seed)] = int(sum(r["empty_generated"] for r in seed_rows))
    metric_keys = list(next(iter(per_seed.values())))
    aggregate = {
        k: {
            "mean": float(np.mean([m[k] for m in per_seed.values()])),
            "std": float(np.std([m[k] for m in per_seed.values()])),
        }
        for k in metric_keys
    }
    return EvalReport(rows, per_seed, aggregate, hists, empties, per_seed_std)


def comparison_table(systems: Mapping[str, Mapping[str, Mapping[str, float]]],
                     metrics: Sequence[str] = METRICS) -> str:
    """Render ``{system: aggregate}`` as a plain-text table of ``mean (std)``."""
    header = ["system", *metrics]
    lines = ["\t".join(header)]
    for name, agg in systems.items():
        cells = [name]
        for m in metrics:
            if m in agg:
                cells.append(f"{agg[m]['mean']:.4f} ({agg[m]['std']:.4f})")
            else:
                cells.append("-")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
