"""Regenerates the frozen reference values used by ../reference_values.rs, in 50-digit arithmetic.

Run from this directory:  python3 generate.py > reference_values.txt
The Rust test file copies the printed constants verbatim.
"""
import mpmath as mp

mp.mp.dps = 50


def lse_weighted(values, weights):
    return mp.log(mp.fsum(w * mp.exp(v) for v, w in zip(values, weights)))


def g_of_f(C, a, b, eps, f):
    n, m = len(a), len(b)
    return [-eps * lse_weighted([(f[i] - C[i][j]) / eps for i in range(n)], a) for j in range(m)]


def f_of_g(C, a, b, eps, g):
    n, m = len(a), len(b)
    return [-eps * lse_weighted([(g[j] - C[i][j]) / eps for j in range(m)], b) for i in range(n)]


def semi_dual(C, a, b, eps, f):
    g = g_of_f(C, a, b, eps, f)
    return mp.fsum(ai * fi for ai, fi in zip(a, f)) + mp.fsum(bj * gj for bj, gj in zip(b, g))


def solve(C, a, b, eps, iters=4000):
    f = [mp.mpf(0)] * len(a)
    for _ in range(iters):
        g = g_of_f(C, a, b, eps, f)
        f = f_of_g(C, a, b, eps, g)
        shift = mp.fsum(ai * fi for ai, fi in zip(a, f))
        f = [fi - shift for fi in f]
    g = g_of_f(C, a, b, eps, f)
    return f, g


def plan(C, a, b, eps, f, g):
    return [[a[i] * b[j] * mp.exp((f[i] + g[j] - C[i][j]) / eps) for j in range(len(b))] for i in range(len(a))]


def rho_values(C, a, b, eps, f, g):
    P = plan(C, a, b, eps, f, g)
    Rt = mp.matrix(len(a), len(b))
    for i in range(len(a)):
        for j in range(len(b)):
            Rt[i, j] = P[i][j] / mp.sqrt(a[i] * b[j])
    s = mp.svd_r(Rt, compute_uv=False)
    return sorted([s[k] for k in range(len(s))], reverse=True)


def show(name, xs):
    if not isinstance(xs, (list, tuple)):
        xs = [xs]
    print(f"{name} = [{', '.join(mp.nstr(x, 20, min_fixed=0, max_fixed=0) for x in xs)}]")


print("# log-sum-exp")
show("LSE", lse_weighted([mp.mpf("0.3"), mp.mpf("-0.7"), mp.mpf("1.1")], [mp.mpf(1) / 3] * 3))

print("# symmetric 2x2, eps = 1")
C = [[mp.mpf(0), mp.mpf(1)], [mp.mpf(1), mp.mpf(0)]]
a = b = [mp.mpf("0.5")] * 2
g = g_of_f(C, a, b, mp.mpf(1), [0, 0])
show("SYM_G", g)
show("SYM_F", f_of_g(C, a, b, mp.mpf(1), g))

print("# asymmetric 2x2, eps = 0.5")
C = [[mp.mpf(0), mp.mpf(1)], [mp.mpf(2), mp.mpf("0.5")]]
a = [mp.mpf("0.3"), mp.mpf("0.7")]
b = [mp.mpf("0.6"), mp.mpf("0.4")]
eps = mp.mpf("0.5")
f, g = solve(C, a, b, eps)
show("ASYM_F", f)
show("ASYM_G", g)
show("ASYM_Q", semi_dual(C, a, b, eps, f))
show("ASYM_PLAN", [x for row in plan(C, a, b, eps, f, g) for x in row])
show("ASYM_RHO", rho_values(C, a, b, eps, f, g))

print("# 3x3, eps = 1 and eps = 0.1")
C = [[mp.mpf(x) for x in row] for row in [["0", "1", "4"], ["1", "0", "1"], ["4", "1", "0.25"]]]
a = [mp.mpf("0.2"), mp.mpf("0.5"), mp.mpf("0.3")]
b = [mp.mpf("0.4"), mp.mpf("0.35"), mp.mpf("0.25")]
for tag, eps, iters in [("E1", mp.mpf(1), 400), ("E01", mp.mpf("0.1"), 6000)]:
    f, g = solve(C, a, b, eps, iters)
    show(f"TRI_{tag}_F", f)
    show(f"TRI_{tag}_PLAN", [x for row in plan(C, a, b, eps, f, g) for x in row])

print("# semi-dual derivatives on a 2x3 instance at an arbitrary f, eps = 0.7")
C = [[mp.mpf(x) for x in row] for row in [["0.1", "0.9", "2.0"], ["1.3", "0.2", "0.6"]]]
a = [mp.mpf("0.45"), mp.mpf("0.55")]
b = [mp.mpf("0.2"), mp.mpf("0.5"), mp.mpf("0.3")]
eps = mp.mpf("0.7")
f0 = [mp.mpf("0.25"), mp.mpf("-0.4")]
Q = lambda x, y: semi_dual(C, a, b, eps, [x, y])
show("DER_Q", Q(*f0))
show("DER_GRAD", [mp.diff(Q, f0, (1, 0)), mp.diff(Q, f0, (0, 1))])
show("DER_HESS", [mp.diff(Q, f0, (2, 0)), mp.diff(Q, f0, (1, 1)), mp.diff(Q, f0, (1, 1)), mp.diff(Q, f0, (0, 2))])
