"""Explicit coercivity constants for complex sesquilinear forms.

A form with ``|Im a(v,v)| >= k1 |v|_L^2`` and
``|Re a(v,v)| >= k2 ||v||_H^2 - k3 |v|_L^2`` is coercive with constant
``beta1 = min(k1 k2 / k3, sqrt(mu_-))`` where ``mu_-`` is the smaller
eigenvalue of ``[[k2^2, -k2 k3], [-k2 k3, k3^2 + k1^2]]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional


def _check_positive(**kw) -> None:
    for name, v in kw.items():
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be a positive finite number, got {v!r}")


def form_matrix(k1: float, k2: float, k3: float) -> tuple:
    return ((k2 * k2, -k2 * k3), (-k2 * k3, k3 * k3 + k1 * k1))


def form_matrix_eigenvalues(k1: float, k2: float, k3: float) -> dict:
    """Eigenvalues of the 2x2 form matrix without cancellation.

    ``mu_+ = (T + sqrt(disc)) / 2`` and ``mu_- = D / mu_+`` with trace ``T``,
    determinant ``D = k1^2 k2^2`` and
    ``disc = T^2 - 4D = (k2^2 - k3^2 - k1^2)^2 + 4 k2^2 k3^2``.
    """
    _check_positive(k1=k1, k2=k2, k3=k3)
    T = k1 * k1 + k2 * k2 + k3 * k3
    D = (k1 * k2) ** 2
    disc = (k2 * k2 - k3 * k3 - k1 * k1) ** 2 + 4.0 * (k2 * k3) ** 2
    mu_plus = 0.5 * (T + math.sqrt(disc))
    mu_minus = D / mu_plus
    return {"mu_minus": mu_minus, "mu_plus": mu_plus, "trace": T, "det": D, "disc": disc}


def printed_discriminant(k1: float, k2: float, k3: float) -> float:
    """``((k2-k1)^2 + k1^2)((k2+k1)^2 + k1^2)``; equals the true discriminant only when ``k1 == k3``."""
    return ((k2 - k1) ** 2 + k1 * k1) * ((k2 + k1) ** 2 + k1 * k1)


def coercivity_constant(k1: float, k2: float, k3: float) -> float:
    mu = form_matrix_eigenvalues(k1, k2, k3)["mu_minus"]
    return min(k1 * k2 / k3, math.sqrt(mu))


def closed_form_estimate(alpha: float, tau: float, omega: float, theta: float) -> float:
    """The closed form for the regularized constant, evaluated as written."""
    a, b, t = alpha, omega**2 * tau, omega**2 * theta
    inner = ((a - t) ** 2 + t * t) * ((a + t) ** 2 + t * t)
    rad = a * a + b * b + t * t - math.sqrt(inner)
    return min(alpha * theta / tau, math.sqrt(max(rad, 0.0)) / 2.0)


def regularized_ellipticity_constant(alpha: float, tau: float, omega: float, theta: float) -> dict:
    """Coercivity constant of the theta-regularized Helmholtz form.

    The form-matrix route takes ``k1 = omega^2 theta``, ``k2 = alpha`` and
    ``k3 = omega^2 tau``; it is the value used for checks.  The closed form
    as written is returned next to it.
    """
    _check_positive(alpha=alpha, tau=tau, omega=omega, theta=theta)
    k1, k2, k3 = omega**2 * theta, alpha, omega**2 * tau
    via_matrix = coercivity_constant(k1, k2, k3)
    printed = closed_form_estimate(alpha, tau, omega, theta)
    mu = form_matrix_eigenvalues(k1, k2, k3)
    return {
        "C_prime": via_matrix,
        "C_prime_printed": printed,
        "discrepancy": abs(printed - via_matrix),
        "active_branch": "alpha*theta/tau" if k1 * k2 / k3 <= math.sqrt(mu["mu_minus"]) else "sqrt(mu_minus)",
        "k": (k1, k2, k3),
    }


def apriori_bounds(alpha: float, tau: float, omega: float, theta: float, domain_diameter: float,
                   f_norm: float) -> dict:
    """Bounds ``tau w / (alpha theta) ||f||`` on ``||grad u||`` and times ``diam`` on ``||u||_{H1_0}``."""
    _check_positive(alpha=alpha, tau=tau, omega=omega, theta=theta, domain_diameter=domain_diameter)
    if f_norm < 0:
        raise ValueError("f_norm must be non-negative")
    g = tau * omega / (alpha * theta) * f_norm
    return {"gradient": g, "h1": g * domain_diameter}


@dataclass
class ConstantReport:
    mu_minus: float
    mu_plus: float
    delta_disc: float
    delta_disc_printed: float
    beta1: float
    C_prime: float
    C_prime_printed: float
    C_prime_discrepancy: float
    apriori_gradient_bound: float
    apriori_h1_bound: float
    alpha: float
    tau: float
    omega: float
    theta: float
    diam: float
    f_norm: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def constant_report(alpha: float, tau: float, omega: float, theta: float, diam: float,
                    f_norm: float = 1.0) -> ConstantReport:
    r = regularized_ellipticity_constant(alpha, tau, omega, theta)
    k1, k2, k3 = r["k"]
    mu = form_matrix_eigenvalues(k1, k2, k3)
    b = apriori_bounds(alpha, tau, omega, theta, diam, f_norm)
    return ConstantReport(
        mu_minus=mu["mu_minus"], mu_plus=mu["mu_plus"], delta_disc=mu["disc"],
        delta_disc_printed=printed_discriminant(k1, k2, k3), beta1=coercivity_constant(k1, k2, k3),
        C_prime=r["C_prime"], C_prime_printed=r["C_prime_printed"], C_prime_discrepancy=r["discrepancy"],
        apriori_gradient_bound=b["gradient"], apriori_h1_bound=b["h1"],
        alpha=alpha, tau=tau, omega=omega, theta=theta, diam=diam, f_norm=f_norm,
    )


def regularized_form_value(u, mesh, material_A, eps_field, omega: float) -> complex:
    """``B(u, u) = int A grad u . grad conj(u) - omega^2 int eps |u|^2`` on a mesh."""
    import numpy as np

    g = mesh.grid
    vals, grads = g.evaluate(u)
    _, w = g.quadrature_points()
    stiff = np.sum((grads @ np.asarray(material_A)) * np.conj(grads), axis=-1)
    mass = np.asarray(eps_field)[:, None] * np.abs(vals) ** 2
    return complex(np.sum(w * (stiff - omega**2 * mass)))


def h1_seminorm_sq(u, mesh) -> float:
    return float(mesh.grid.squared_norms(u)["grad"].sum())


def verify_coercivity(k1: float, k2: float, k3: float, H, Lm, P, Q, vectors,
                      sign_re: float = 1.0, sign_im: float = 1.0) -> Optional[dict]:
    """Check ``|v^* (R + i S) v| >= beta1 v^* H v`` for a model form; returns the worst case."""
    import numpy as np

    R = k2 * H - k3 * Lm + P
    S = k1 * Lm + Q
    B = sign_re * R + 1j * sign_im * S
    beta = coercivity_constant(k1, k2, k3)
    lhs = np.abs(np.einsum("ni,ij,nj->n", np.conj(vectors), B, vectors))
    rhs = beta * np.real(np.einsum("ni,ij,nj->n", np.conj(vectors), H, vectors))
    ratio = lhs / rhs
    i = int(np.argmin(ratio))
    return {"min_ratio": float(ratio[i]), "violations": int(np.sum(lhs < rhs * (1 - 1e-12))), "beta1": beta}
