"""Generates ratings16.csv and its expected tables (ratings16.expected.json).

The expected values are computed here with the standard library and
scipy.stats.friedmanchisquare, independently of the Rust implementation.
Run from this directory: python3 make_fixture.py
"""

import csv
import json
import random
import statistics

from scipy.stats import friedmanchisquare

ITEMS = ["SF", "NC", "VQ", "CC", "PLC", "VAQ", "CT", "AVR", "NP", "VAC", "CD", "OQ"]
DIMS = {
    "NS": ["SF", "NC"],
    "AT": ["VQ", "CC", "PLC", "VAQ"],
    "AE": ["CT", "AVR"],
    "RF": ["NP", "VAC"],
    "EE": ["CD"],
    "OE": ["OQ"],
}
MODELS = ["aipai", "video_ocean", "setting1_flat", "setting2_hier_no_ctx", "setting3_full"]
BASELINES = MODELS[:2]
OURS = MODELS[2:]
PROMPTS = ["P1", "P2", "P3"]
RATERS = [("a%02d" % i, "audience") for i in range(1, 13)] + [("e%02d" % i, "expert") for i in range(1, 5)]
LIFT = {"aipai": 0.1, "video_ocean": -0.2, "setting1_flat": 0.0, "setting2_hier_no_ctx": 0.3, "setting3_full": 0.6}


def generate(rng):
    rows = []
    for rater, cohort in RATERS:
        bias = rng.gauss(0, 0.5)
        for prompt in PROMPTS:
            for model in MODELS:
                items = []
                for _ in ITEMS:
                    v = round(3 + bias + LIFT[model] + rng.gauss(0, 0.9))
                    items.append(min(5, max(1, v)))
                rows.append([rater, cohort, prompt, model] + items)
    return rows


def dim_scores(items):
    by = dict(zip(ITEMS, items))
    return {d: sum(by[i] for i in its) / len(its) for d, its in DIMS.items()}


def main():
    rows = generate(random.Random(20241016))
    with open("ratings16.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["rater_id", "cohort", "prompt", "model"] + ITEMS)
        w.writerows(rows)

    cell = {}
    for r in rows:
        cell[(r[1], r[0], r[2], r[3])] = dim_scores(r[4:])
    cohorts = ["audience", "expert"]
    raters = {c: [r for r, rc in RATERS if rc == c] for c in cohorts}

    prompt_means = []
    for c in cohorts:
        for p in PROMPTS:
            for m in MODELS:
                vals = [cell[(c, r, p, m)] for r in raters[c]]
                prompt_means.append({
                    "cohort": c, "prompt": p, "model": m, "n": len(vals),
                    "means": {d: statistics.fmean(v[d] for v in vals) for d in DIMS},
                })

    subject = {}
    subject_rows = []
    for c in cohorts:
        for r in raters[c]:
            for m in MODELS:
                s = {d: statistics.fmean(cell[(c, r, p, m)][d] for p in PROMPTS) for d in DIMS}
                subject[(c, r, m)] = s
                subject_rows.append({"cohort": c, "rater_id": r, "model": m, "scores": s})

    def summary(vals):
        return {"n": len(vals), "mean": statistics.fmean(vals), "sd": statistics.stdev(vals)}

    cohort_means = []
    for c in cohorts:
        for m in MODELS:
            cohort_means.append({
                "cohort": c, "model": m,
                "dimensions": {d: summary([subject[(c, r, m)][d] for r in raters[c]]) for d in DIMS},
            })
    # Pooled over cohorts: sample statistics of all sixteen raters directly.
    pooled_means = []
    for m in MODELS:
        pooled_means.append({
            "cohort": "pooled", "model": m,
            "dimensions": {
                d: summary([subject[(c, r, m)][d] for c in cohorts for r in raters[c]]) for d in DIMS
            },
        })

    bvo = []
    friedman = []
    for c in cohorts:
        for p in PROMPTS:
            for d in DIMS:
                base = [statistics.fmean(cell[(c, r, p, m)][d] for m in BASELINES) for r in raters[c]]
                ours = [statistics.fmean(cell[(c, r, p, m)][d] for m in OURS) for r in raters[c]]
                om, bm = statistics.fmean(ours), statistics.fmean(base)
                bvo.append({"cohort": c, "prompt": p, "dimension": d,
                            "ours_mean": om, "base_mean": bm, "delta": om - bm})
                # friedmanchisquare takes one sequence per treatment; models
                # in lexicographic order to match the report's column order.
                cols = [[cell[(c, r, p, m)][d] for r in raters[c]] for m in sorted(MODELS)]
                stat = friedmanchisquare(*cols).statistic
                friedman.append({"cohort": c, "prompt": p, "dimension": d,
                                 "chi2": float(stat), "N": len(raters[c])})

    expected = {
        "prompt_means": prompt_means,
        "subject_averages": subject_rows,
        "cohort_means": cohort_means,
        "pooled_means": pooled_means,
        "bvo": bvo,
        "friedman": friedman,
    }
    with open("ratings16.expected.json", "w") as f:
        json.dump(expected, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
