"""Half-degrees against relative degrees across the three regimes of a 3-DOF example.

When a Christoffel symbol couples a velocity into an output chain, the
ordinary relative degree on the tangent bundle is smaller than twice the
half-degree and the mechanical decoupling fails.
Run with ``python3 demos/04_half_degree_vs_relative_degree.py``.
"""

from miold import Point, full_relative_degree, half_degree, load_system

print(f"{'regime':18} {'nu':8} {'2 nu':8} {'rho':8} solvable")
for regime in load_system("example1").regimes:
    f = load_system("example1", regime)
    S = f.system
    point = Point.for_system(S, f.point_x, f.point_v)
    rep = half_degree(S, point)
    rho = full_relative_degree(S, point).rho
    print(f"{regime:18} {str(rep.nu):8} {str([2 * a for a in rep.nu]):8} {str(rho):8} "
          f"{rep.solvable}")
