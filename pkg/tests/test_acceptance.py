"""One verdict line per acceptance criterion, at the tolerances stated there.

The uniformity study dominates the runtime (several minutes).
"""

import numpy as np
import pytest

from conftest import complex_for
from ddr_divdiv import verify

FAMILIES = ("tri", "square", "hex")
# largest member of each family with at most 256 cells
COMPLEX_N = {"tri": 8, "square": 16, "hex": 8}


def _verdict(record, number, title, failures, detail):
    status = "PASS" if not failures else "FAIL"
    record(f"[criterion {number}] {status} {title}: {detail}")
    assert not failures, failures


def _rel_composition(A, B):
    return verify._fro(A @ B) / (verify._fro(A) * verify._fro(B))


@pytest.fixture(scope="module")
def identity_reports():
    return {(f, k): verify.run_identity_suite(complex_for(f, 2, k).mesh, k, "all", seed=0, draws=20,
                                              complex_=complex_for(f, 2, k))
            for f in FAMILIES for k in (3, 4, 5)}


def test_criterion_1_complex_property(acceptance_line):
    worst, failures = 0.0, []
    for f in FAMILIES:
        for k in (3, 4, 5):
            cx, sc = complex_for(f, COMPLEX_N[f], k, serendipity=True)
            for name, r in (("full", _rel_composition(cx.dd, cx.ucsym)),
                            ("serendipity", _rel_composition(sc.sdd, sc.scsym))):
                worst = max(worst, r)
                if not r <= verify.COMPLEX_TOL:
                    failures.append((f, k, name, r))
    _verdict(acceptance_line, 1, "DD o uCsym = 0 and sDD o sCsym = 0", failures,
             f"max relative residual {worst:.2e} (tol 1e-12) over 3 families x k=3,4,5")


def test_criterion_2_exact_identities(identity_reports, acceptance_line):
    worst, count, failures = 0.0, 0, []
    for key, rep in identity_reports.items():
        for c in rep.checks:
            if c.identifier.startswith(("cohomology.", "complex.full", "complex.serendipity")):
                continue
            count += 1
            if c.kind == "residual" and np.isfinite(c.value):
                worst = max(worst, c.value)
            if not c.passed:
                failures.append((key, c.identifier, c.value))
    _verdict(acceptance_line, 2, "exact identities", failures,
             f"{count} checks, max residual {worst:.2e} (tol 1e-10)")


def test_criterion_3_cohomology(identity_reports, acceptance_line):
    failures = []
    for (f, k), rep in identity_reports.items():
        for c in rep.checks:
            if c.identifier.startswith("cohomology.") and not c.passed:
                failures.append((f, k, c.identifier, c.value))
    for f in FAMILIES:
        cx, sc = complex_for(f, 4, 3, serendipity=True)
        full = verify.cohomology(cx.ucsym, cx.dd, cx.norm_weights_v, cx.norm_weights_sigma)
        ser = verify.cohomology(sc.scsym, sc.sdd, sc.norm_weights_v, sc.norm_weights_sigma)
        groups = [tuple(h[g] for g in ("H0", "H1", "H2")) for h in (full, ser)]
        if groups != [(3, 0, 0), (3, 0, 0)]:
            failures.append((f, groups))
    _verdict(acceptance_line, 3, "cohomology", failures,
             "dim ker = 3 (RT1), div-div onto, full and serendipity groups equal")


def test_criterion_4_dof_gains(acceptance_line):
    rep = verify.dof_report(families=FAMILIES, family_n=8)
    rows = {(r["shape"], r["k"]): r for r in rep.metadata["rows"] if "shape" in r}
    failures = [c.identifier for c in rep.failures()]
    for shape, full, red in (("triangle", 48, 40), ("square", 60, 48)):
        r = rows[(shape, 3)]
        if (r["full"], r["serendipity"]) != (full, red):
            failures.append((shape, r["full"], r["serendipity"]))
    gains = [c.value for c in rep.checks]
    _verdict(acceptance_line, 4, "DOF gains", failures,
             f"triangle k3 {verify.format_dof_row(rows[('triangle', 3)])}, square k3 "
             f"{verify.format_dof_row(rows[('square', 3)])}, gains in [{min(gains):.1%}, {max(gains):.1%}]"
             " (bracket [13%, 27%])")


def test_criterion_5_uniformity(acceptance_line):
    failures, worst = [], 0.0
    for f in FAMILIES:
        rep = verify.uniformity_study(f, 3, levels=(16, 32, 64))
        for c in rep.checks:
            worst = max(worst, c.value)
            if not c.passed:
                failures.append((f, c.identifier, c.value, c.detail["values"]))
    _verdict(acceptance_line, 5, "uniform constants", failures,
             f"max variation {worst:.3f} (tol 0.25) over n = 16, 32, 64 on 3 families, k = 3")


def test_criterion_6_consistency_rates(acceptance_line):
    rep = verify.convergence_study("square", 3, levels=(4, 8, 16, 32))
    slopes = ", ".join(f"{c.identifier[5:]} {c.detail['slope']:.2f}" for c in rep.checks)
    _verdict(acceptance_line, 6, "consistency rates", [c.identifier for c in rep.failures()], slopes)
