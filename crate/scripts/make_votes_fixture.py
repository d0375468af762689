"""Writes the synthetic roll-call fixture in fixtures/brexit_schema.

120 members, 16 three-level votes (absent/aye/no), age and leave share as
covariates, constituency vote shares over 13 parties and a party label.
"""
import json
import pathlib

import numpy as np

rng = np.random.default_rng(20190329)
out = pathlib.Path(__file__).resolve().parent.parent / "fixtures" / "brexit_schema"
out.mkdir(parents=True, exist_ok=True)

n, q, p = 120, 16, 13
parties = ["con", "lab", "snp", "ld"]
party = rng.choice(len(parties), size=n, p=[0.45, 0.4, 0.1, 0.05])
# voting blocs: per party a preferred level on each division
bloc = rng.integers(1, 3, size=(len(parties), q))
levels = ["absent", "aye", "no"]

ids = [f"mp{i + 1:03d}" for i in range(n)]
age = np.round(rng.uniform(28, 78, size=n), 1)
leave = np.round(np.clip(rng.beta(5, 5, size=n) + 0.1 * (party == 0), 0.2, 0.75), 4)

with open(out / "responses.csv", "w") as f:
    f.write("id," + ",".join(f"div{d + 1:02d}" for d in range(q)) + "\n")
    for i in range(n):
        row = []
        for d in range(q):
            u = rng.uniform()
            if u < 0.1:
                row.append("absent")
            elif u < 0.85:
                row.append(levels[bloc[party[i], d]])
            else:
                row.append(levels[3 - bloc[party[i], d]])
        f.write(ids[i] + "," + ",".join(row) + "\n")

with open(out / "covariates.csv", "w") as f:
    f.write("id,age,leave_share,party\n")
    for i in range(n):
        f.write(f"{ids[i]},{age[i]},{leave[i]},{parties[party[i]]}\n")

with open(out / "vote_shares.csv", "w") as f:
    f.write("constituency_id," + ",".join(f"share_{k + 1}" for k in range(p)) + "\n")
    for i in range(n):
        w = rng.dirichlet(np.full(p, 0.3))
        w = np.round(w, 6)
        w[np.argmax(w)] += round(1.0 - w.sum(), 6)
        f.write(ids[i] + "," + ",".join(f"{v:.6f}" for v in w) + "\n")

(out / "levels.json").write_text(
    json.dumps(
        {"variables": [{"name": f"div{d + 1:02d}", "levels": levels} for d in range(q)]},
        indent=2,
    )
    + "\n"
)
(out / "manifest.json").write_text(
    json.dumps(
        {
            "responses_path": "responses.csv",
            "covariates_path": "covariates.csv",
            "id_column": "id",
            "smooth_covariates": ["age", "leave_share", "effective_parties"],
            "levels_path": "levels.json",
            "vote_shares_path": "vote_shares.csv",
        },
        indent=2,
    )
    + "\n"
)
