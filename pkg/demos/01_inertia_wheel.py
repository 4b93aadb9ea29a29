"""Inertia wheel pendulum: three output choices, three different answers.

Run with ``python3 demos/01_inertia_wheel.py``.
"""

from miold import (
    Point, closed_loop_system, decoupling_certificate, flatness_remark, half_degree, load_system,
    synthesize,
)
from miold.synthesis import SynthesisError

f = load_system("iwp")
point = Point.for_system(f.system, f.point_x, f.point_v)

for key in (None, "combined", "reshaped"):
    S = f.system if key is None else f.system.with_outputs(f.outputs(key))
    print(f"=== outputs: {key or 'x1 (file default)'} -> {[str(h) for h in S.h]}")
    rep = half_degree(S, point)
    print(rep.to_text())
    try:
        law, nf = synthesize(S, rep, point)
    except SynthesisError as exc:
        print(f"no mechanical decoupling: {exc}\n")
        continue
    d = law.to_dict()
    print("phi =", d["phi"])
    print("A =", d["A"], " D =", d["D"], " C =", d["C"])
    print(f"normal form holds: {nf.holds}; unobserved dimension {nf.unobserved_dim}")
    print("flatness:", flatness_remark(law)["statement"])
    cert = decoupling_certificate(S, law, point.x, point.v, **f.certify_options(key))
    ch = cert.channels[0]
    print(f"certificate {'PASS' if cert.passed else 'FAIL'}: own-channel deviation "
          f"{ch.own_deviation:.2e}, superposition {cert.superposition}")
    # the closed loop in the new frame, entry by entry
    closed = closed_loop_system(S, law)
    print("closed-loop e~ =", [str(e) for e in closed.e], "\n")
