"""Smoke test for the nlsimp extension module.

Build and install first:  pip install maturin && maturin develop -m crates/py/Cargo.toml --release
"""

import math

import nlsimp

k = nlsimp.Kernel(0.2)
assert k.value(0.25) == 0.0 and k.value(0.1) > 0.0
# (1/2) int A = pi int_0^delta A(r) r dr = 1, midpoint rule in v = r^(2 - 2s)
n = 20000
p = 2.0 - 2.0 * k.s
vmax = k.delta**p
total = 0.0
for i in range(n):
    v = (i + 0.5) * vmax / n
    r = v ** (1.0 / p)
    total += k.value(r) * r * (r / (p * v)) * (vmax / n)
assert abs(math.pi * total - 1.0) < 1e-6, total
print(k)

mesh = nlsimp.Mesh(10, 0.2)
assert mesh.n_triangles == 2 * 14 * 14
assert sum(mesh.interior()) == 200
print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, {mesh.n_free} free")

prob = nlsimp.Problem(8, 0.25)
nt = prob.mesh.n_triangles
rho = [0.4] * nt
j1, u = prob.solve(rho, p=1.0)
j2, _ = prob.solve([2 * r for r in rho], p=1.0)
assert j1 > 0 and abs(j1 / j2 - 2.0) < 1e-8, (j1, j2)
g = prob.gradient(rho, p=2.0)
assert len(g) == nt and all(x <= 0 for x in g)
print(f"problem: J = {j1:.6e}, max |u| = {max(abs(x) for x in u):.3e}")

res = nlsimp.optimize({"n_side": 8, "delta": 0.25, "max_outer_iter": 30})
assert res.history and res.compliance < j1
area = 0.5 / 64
volume = sum(r for r, inside in zip(res.rho, res.mesh.interior()) if inside) * area
assert volume <= 0.4 + 1e-6
print(res, f"interior volume = {volume:.4f}")

local = nlsimp.local_optimize({"n_side": 8, "max_outer_iter": 30})
print(local)

f = nlsimp.mms_rhs(0.5, 0.5, 0.1)
print(f"mms: u(0.5, 0.5) = {nlsimp.mms_u(0.5, 0.5):.6e}, f = {f:.6e}")

try:
    nlsimp.optimize({"p": 3})
except nlsimp.NlsimpError as e:
    assert str(e).startswith("[config]"), e
else:
    raise AssertionError("p = 3 accepted")

print("smoke test passed")
