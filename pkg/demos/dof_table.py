"""Print full versus serendipity DOF counts per reference cell and per family."""

from ddr_divdiv import verify

rep = verify.dof_report(families=("tri", "square", "hex"), family_n=8)
print(f"{'cell':10} {'k':>2} {'full':>5} {'reduced':>8} {'gain':>6}")
for r in rep.metadata["rows"]:
    if "shape" in r:
        print(f"{r['shape']:10} {r['k']:>2} {r['full']:>5} {r['serendipity']:>8} {r['gain']:>6.1%}")
print()
print(f"{'family':10} {'k':>2} {'per-cell gain':>14} {'global gain':>12}")
for r in rep.metadata["rows"]:
    if "family" in r:
        print(f"{r['family']:10} {r['k']:>2} {r['gain_local']:>14.1%} {r['gain_global']:>12.1%}")
