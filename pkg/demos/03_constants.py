"""Coercivity constants of the regularized problem.

For a small absorption theta the ellipticity constant C' behaves linearly in
theta; the a-priori bound on ||grad u|| grows like 1/theta.

    python demos/03_constants.py
"""
from cage_homog.constants import constant_report

print(f"{'theta':>8} {'beta1':>10} {'C_prime':>10} {'printed':>10} {'grad bound':>12}")
for theta in (0.5, 0.1, 0.01, 0.001):
    r = constant_report(alpha=1.0, tau=1.0, omega=1.0, theta=theta, diam=2.0 ** 0.5)
    print(f"{theta:8.3g} {r.beta1:10.4g} {r.C_prime:10.4g} {r.C_prime_printed:10.4g} "
          f"{r.apriori_gradient_bound:12.4g}")
