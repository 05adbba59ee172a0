"""Independent symbolic oracle for a scalar, totally hidden state.

Every quantity is computed from the density by exact integration and by
brute-force minimisation over constant estimators; no closed-form
estimator formula from the package is used.  Run directly to print the
frozen values used by the acceptance suite.
"""

from __future__ import annotations

import sympy as sp

x, c, mu = sp.symbols("x c mu", real=True)


def expect(expr, density, support):
    return sp.simplify(sp.integrate(expr * density, (x, *support)))


def scalar_oracle(density, support, rho_min=None, rho_max=None, mu_eval=sp.Rational(1, 2)):
    m = expect(x, density, support)
    var = expect((x - m) ** 2, density, support)
    mse = sp.expand(expect((x - c) ** 2, density, support))
    sev = sp.expand(expect((x - c) ** 4, density, support) - mse**2)

    # The closed-form family is parameterised so that its member at mu minimises
    # mse + (mu/2)*sev; brute-force the minimiser over constants in that scale.
    lagr = sp.expand(mse + mu / 2 * sev)
    c_mu = sp.solve(sp.diff(lagr, c), c)
    assert len(c_mu) == 1
    c_mu = sp.simplify(c_mu[0])
    c_inf = sp.solve(sp.diff(sev, c), c)[0]
    c_0 = sp.simplify(c_mu.subs(mu, 0))

    prod = sp.simplify(mse.subs(c, c_mu) * sev.subs(c, c_mu))
    crit = [r for r in sp.solve(sp.diff(prod, mu), mu) if r.is_real and r >= 0]
    cands = crit + [sp.Integer(0)]
    vals = [sp.simplify(prod.subs(mu, r)) for r in cands]
    lim_inf = sp.limit(prod, mu, sp.oo)
    h = min(vals + [lim_inf], key=lambda v: float(v))
    mu_star = cands[vals.index(h)] if h in vals else sp.oo

    delta = sp.simplify(c_0 - c_inf)
    margin = sp.simplify(delta**2 / var)
    d = 2 * sp.sqrt(margin)
    mse0 = mse.subs(c, c_0)
    sev_inf = sp.simplify(sev.subs(c, c_inf))
    anchor = sp.simplify(mse0 * sev_inf)
    rho_max = var if rho_max is None else rho_max
    rho_min = var if rho_min is None else rho_min
    upper = (rho_max**2 * mse0 + rho_max * sev_inf) * d**2 + rho_max**3 * d**4
    alpha = sp.Rational(1, 4) * rho_min**2 / (1 + 2 * mu_eval * rho_max) ** 2
    lower = (alpha * mse0 + rho_min * mu_eval**2 * alpha * sev_inf) * d**2 \
        + rho_min * mu_eval**2 * alpha**2 * d**4

    # total projection of the curve on the direction x_inf - x_0, weighted by 1/var
    tau = sp.symbols("tau", nonnegative=True)
    proj = sp.integrate(sp.diff(c_mu, mu).subs(mu, tau) * (c_inf - c_0) / var, (tau, 0, sp.oo))

    return {
        "mean": m,
        "var": var,
        "x_inf": c_inf,
        "x_mu_eval": c_mu.subs(mu, mu_eval),
        "delta_x": delta,
        "margin": margin,
        "d": sp.simplify(d),
        "mse0": mse0,
        "sev0": sp.simplify(sev.subs(c, c_0)),
        "sev_inf": sev_inf,
        "anchor": anchor,
        "mu_star": mu_star,
        "h": h,
        "upper": sp.simplify(upper),
        "lower": sp.simplify(lower),
        "projection": sp.simplify(proj),
        "sev_of": sp.lambdify(c, sev),
        "mse_of": sp.lambdify(c, mse),
    }


def exp1_oracle():
    return scalar_oracle(sp.exp(-x), (0, sp.oo))


if __name__ == "__main__":
    for k, v in exp1_oracle().items():
        if not callable(v):
            print(f"{k:>10s} = {v}  ({float(v):.15g})")
