"""Convert a long-format HAMD-17 extract (one row per subject visit) to the wide layout the CLI reads.

Covariates are the baseline score, the first post-baseline change and
site indicators; outcomes are the changes from baseline at the remaining
visits. Subjects with a missing site or non-monotone dropout are removed
and counted. Writes OUT.csv and OUT.schema.json.

    python3 scripts/hamd_to_wide.py hamd_long.csv hamd_wide.csv \
        --id PATIENT --arm TRT --visit VISIT --value CHANGE --baseline BASVAL --site POOLINV \
        --visits 4,5,6,7,8 --treated-label 2
"""

import argparse
import csv
import json
from collections import defaultdict
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("--id", default="PATIENT")
    ap.add_argument("--arm", default="TRT")
    ap.add_argument("--visit", default="VISIT")
    ap.add_argument("--value", default="CHANGE")
    ap.add_argument("--baseline", default="BASVAL")
    ap.add_argument("--site", default="POOLINV")
    ap.add_argument("--visits", default="4,5,6,7,8", help="visit codes in time order; the first is a covariate")
    ap.add_argument("--treated-label", default="2", help="value of the arm column marking the treated group")
    args = ap.parse_args()

    visits = [v.strip() for v in args.visits.split(",")]
    subjects = defaultdict(dict)
    with open(args.src, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            s = subjects[row[args.id]]
            s["arm"] = 1 if row[args.arm].strip() == args.treated_label else 0
            s["baseline"] = row[args.baseline].strip()
            s["site"] = row[args.site].strip()
            val = row[args.value].strip()
            if val not in ("", "."):
                s.setdefault("values", {})[row[args.visit].strip()] = val

    sites = sorted({s["site"] for s in subjects.values() if s["site"] not in ("", ".")})
    site_cols = [f"site_{v}" for v in sites[1:]]
    out_cols = [f"y{k}" for k in range(1, len(visits))]
    kept, no_site, intermittent, no_first = [], 0, 0, 0
    for sid, s in sorted(subjects.items()):
        if s["site"] in ("", "."):
            no_site += 1
            continue
        vals = [s.get("values", {}).get(v) for v in visits]
        if vals[0] is None:
            no_first += 1
            continue
        seen = [v is not None for v in vals[1:]]
        if any(b and not a for a, b in zip(seen, seen[1:])):
            intermittent += 1
            continue
        row = {"id": sid, "arm": s["arm"], "baseline": s["baseline"], "first_change": vals[0]}
        row.update({c: int(s["site"] == v) for c, v in zip(site_cols, sites[1:])})
        row.update({c: ("NA" if v is None else v) for c, v in zip(out_cols, vals[1:])})
        kept.append(row)

    cols = ["id", "arm", "baseline", "first_change", *site_cols, *out_cols]
    with open(args.dst, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(kept)
    schema = {"treatment": "arm", "covariates": ["baseline", "first_change", *site_cols], "outcomes": out_cols,
              "missing": ["NA"]}
    Path(args.dst).with_suffix(".schema.json").write_text(json.dumps(schema, indent=2) + "\n", encoding="utf-8")
    print(f"kept {len(kept)} subjects; removed {no_site} without site, {intermittent} non-monotone, "
          f"{no_first} without the first visit")


if __name__ == "__main__":
    main()
