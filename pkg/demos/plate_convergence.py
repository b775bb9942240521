"""Solve the mixed clamped plate on refined squares with full and reduced spaces."""

from ddr_divdiv import verify

for reduced in (False, True):
    rep = verify.plate_study("square", 3, levels=(4, 8, 16), serendipity=reduced)
    print("serendipity" if reduced else "full")
    for r in rep.metadata["rows"]:
        print(f"  h={r['h']:.4f} dofs={r['dofs']:6d} |u-pi u|={r['u_error']:.3e} |sigma-I sigma|={r['sigma_error']:.3e}")
    for line in rep.summary_lines():
        print("  " + line)
