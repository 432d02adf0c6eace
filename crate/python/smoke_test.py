"""Smoke test for the msfem_py extension.

Build it first with `pip install --no-build-isolation -e crates/msfem-py`.
"""

import csv
import io
import math
import tempfile
from pathlib import Path

import msfem_py

CONFIG = """
testcase = 1d
eps = 2^-5
alpha_exponents = 1..3
coarse_exponent = 3
fine_exponent = 10
methods = P1_SUPG, Adv_MsFEM_lin_B, PG_Adv_MsFEM_CR_beta:nonintrusive
timings = false
"""


def main():
    assert "Adv_MsFEM_CR_B" in msfem_py.methods()

    tau, pe = msfem_py.tau_supg(2.0**-6, 1.0, 2.0**-9)
    assert abs(pe - 4.0) < 1e-12 and abs(tau - 0.0058646) < 1e-6

    text = msfem_py.run_csv(CONFIG)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert text.splitlines()[0] == msfem_py.CSV_HEADER
    assert len(rows) == 9
    assert text == msfem_py.run_csv(CONFIG)

    for r in msfem_py.run_rows(CONFIG):
        assert not r["singular"] and math.isfinite(r["err_oble"])
        # stable methods stay accurate over this range
        assert r["err_oble"] < 0.5, r

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "field.txt"
        msfem_py.dump_field(CONFIG, "Adv_MsFEM_lin_B", str(path))
        assert path.read_text().startswith("# x reconstruction p1_part reference")

    try:
        msfem_py.run_csv("testcase = 1d\nmethods = Nope\n")
    except ValueError as e:
        assert "line 2" in str(e)
    else:
        raise AssertionError("bad config accepted")

    print("msfem_py smoke test passed")


if __name__ == "__main__":
    main()
