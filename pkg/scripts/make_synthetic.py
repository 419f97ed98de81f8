"""Regenerate data/synthetic.csv, the bundled demo dataset.

Run from the repository root:  python3 scripts/make_synthetic.py
"""

import csv
import io
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from cgpds.synthetic import sample_dataset


def main() -> None:
    ds = sample_dataset(n=40, d=8, q=2, j=2, seed=0, t_span=8.0)
    out = pathlib.Path(__file__).resolve().parents[1] / "data" / "synthetic.csv"
    out.parent.mkdir(exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"y{i+1}" for i in range(ds.Y.shape[1])])
    for i, t in enumerate(ds.times):
        writer.writerow([repr(float(t))] + [repr(float(v)) for v in ds.Y[i]])
    out.write_text(buf.getvalue())
    print(f"wrote {out} ({ds.Y.shape[0]} rows, {ds.Y.shape[1]} columns)")


if __name__ == "__main__":
    main()
