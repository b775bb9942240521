"""Track the discrete Poincare constants as a mesh family is refined.

The constants approach their limits from above, so the coarsest meshes sit
outside the asymptotic range. Pass a family name and the largest n to probe.
"""

import sys

from ddr_divdiv import verify

family = sys.argv[1] if len(sys.argv) > 1 else "square"
top = int(sys.argv[2]) if len(sys.argv) > 2 else 16
levels = [2 ** i for i in range(1, top.bit_length())]
rep = verify.uniformity_study(family, 3, levels=levels)
print(f"{'n':>4} {'C_V':>8} {'C_Sigma':>8} {'inf-sup':>8}")
for row in rep.metadata["rows"]:
    print(f"{row['n']:>4} {row['poincare_V']:8.4f} {row['poincare_Sigma']:8.4f} {row['inf_sup']:8.4f}")
