"""
A tour of the two curved spaces
===============================

The hyperbolic branch lives on the Poincare ball, the spherical branch
on the unit hypersphere. Both expose exp/log maps so attention can hop
between the manifold and a flat tangent space.
"""

import numpy as np

from catkg import manifolds as M

rng = np.random.default_rng(7)

# --- Poincare ball ---------------------------------------------------
x = np.array([0.3, 0.1])
y = np.array([-0.2, 0.4])

# Mobius addition is the ball's translation; it is NOT commutative,
# but both orders land at the same distance from the origin
xy = M.mobius_add(x, y, 1.0).data
yx = M.mobius_add(y, x, 1.0).data
print("x (+) y =", xy)
print("y (+) x =", yx)
print("|x (+) y| - |y (+) x| =", np.linalg.norm(xy) - np.linalg.norm(yx))

# distances blow up toward the rim: equal Euclidean steps cost more
# the farther out they start
for start in (0.0, 0.5, 0.9, 0.99):
    a = np.array([start, 0.0])
    b = np.array([start + 0.005, 0.0])
    d = float(M.poincare_distance(a, b, 1.0).data)
    print(f"step 0.005 starting at {start:4}: hyperbolic length {d:.4f}")

# exp/log at the origin invert each other
v = np.array([0.7, -0.4])
back = M.log0(M.exp0(v, 1.0), 1.0).data
print("log0(exp0(v)) - v =", np.abs(back - v).max())

# and the origin-distance of exp0(v) is exactly twice the tangent norm
print("d(0, exp0(v)) =", float(M.poincare_distance(
    np.zeros(2), M.exp0(v, 1.0).data, 1.0).data))
print("2 |v|         =", 2 * np.linalg.norm(v))

# --- unit sphere -----------------------------------------------------
mu = M.north_pole(4)
print("\nbase point mu =", mu)

# tangents at mu have a zero last coordinate; exp walks a great circle
t = np.array([0.6, -0.3, 0.2, 0.0])
p = M.sphere_exp_mu(t).data
print("exp_mu(t) =", p, " |.| =", np.linalg.norm(p))
print("log_mu(exp_mu(t)) - t =", np.abs(M.sphere_log_mu(p).data - t).max())

# the log map has no chart at the antipode; the clamp retracts stragglers
south = -mu
clamped = M.sphere_chart_clamp(south).data
print("antipode returns to the chart as", clamped)
print("its log image:", M.sphere_log_mu(clamped).data)
