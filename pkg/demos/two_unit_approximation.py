"""Two maxout units approximating a 1-D function.

Run:  python demos/two_unit_approximation.py
"""
import numpy as np

from maxoutlab.pwlab import build_two_unit_approximator, dc_decompose, interpolate_pwl

# A rectifier is a maxout unit with pieces 0 and x.  Any piecewise-linear
# function is a difference of two convex ones, and each convex one is a
# single maxout unit, so two units plus a (+1, -1) read-out suffice.

f = lambda x: np.sin(3 * x)
print("sin(3x) on [-2, 2]")
print(" pieces   sup error")
for k in (5, 10, 20, 40, 80):
    approx = build_two_unit_approximator(f, -2, 2, k)
    print(f"{k:7d}   {approx.sup_error:.5f}")

# The error shrinks roughly 4x per doubling, the usual h^2 rate of
# piecewise-linear interpolation.

### Looking inside the decomposition
g = interpolate_pwl(f, -2, 2, 9)
h1, h2 = dc_decompose(g)
grid = np.linspace(-2, 2, 7)
print("\n     x      g      h1     h2   h1-h2")
for x, a, b, c in zip(grid, g(grid), h1(grid), h2(grid)):
    print(f"{x:6.2f} {a:6.3f} {b:6.3f} {c:6.3f} {b - c:6.3f}")

# Slopes of a convex function never decrease: check both parts.
for name, h in (("h1", h1), ("h2", h2)):
    print(name, "slopes non-decreasing:", bool(np.all(np.diff(h.slopes) >= -1e-12)))

### Exact cases
for name, target in (("|x|", np.abs), ("relu", lambda x: np.maximum(x, 0))):
    approx = build_two_unit_approximator(target, -1, 1, 2)
    print(f"{name}: 2 pieces, sup error {approx.sup_error:.1e}")
