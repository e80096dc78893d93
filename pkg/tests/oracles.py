"""Second, independently typed evaluation of the bound formulas.

Scalar loops with ``math`` only, so that a slip in the vectorised library
code cannot be mirrored here.
"""

import math


def example1(alpha1, x1, K):
    out, acc = [], math.log(abs(x1))
    for k in range(1, K + 1):
        acc += math.log(k) if k > 1 else 0.0
        out.append(acc)
    return out


def poly_alpha(alpha0, tau, i):
    return alpha0 / math.pow(i + 1, tau)


def prop1(mu, sigma, gamma, e0_sq, alpha0, tau, K):
    C = gamma * gamma + sigma * sigma / mu / 2.0
    out, s = [], 0.0
    for i in range(K):
        s += poly_alpha(alpha0, tau, i)
        out.append(e0_sq + s * C)
    return out


def thm1(e_sq, mu, sigma, gamma, alpha, m, rho):
    return e_sq - mu * alpha * rho * e_sq + alpha * sigma * sigma / mu / m + (alpha * gamma) ** 2


def thm2(e0_sq, mu, sigma, gamma, G_big, alpha0, tau, delta, K):
    vr = 1.0 / (1.0 + math.sqrt(G_big) / gamma)
    eta = (gamma * gamma + sigma * sigma / mu) / mu / vr
    holds = mu * vr * alpha0 * math.pow(K, 1 - tau) >= math.log(e0_sq * math.pow(K, tau) / eta / alpha0)
    radius = 2 * eta * alpha0 / delta / math.pow(K, tau)
    prob = 1 - 2 * delta - delta * alpha0 * alpha0 * (sigma * sigma / mu + gamma * gamma) / e0_sq / math.pow(K, 2 * tau - 1)
    return vr, eta, holds, radius, prob


def P0(q, d):
    return math.pow(math.sqrt(2.0) * d, q)


def P1(q, gamma, mu, sigma, alpha0, tau):
    a = math.pow(2 * gamma, q) + math.pow(sigma, 1 + q / 4) / math.pow(math.sqrt(mu), q)
    return a * math.pow(math.sqrt(2 * alpha0 / (1 - tau)), q)


def lemma1(d, gamma, mu, sigma, alpha0, tau, p, L0, L1):
    q1, q2 = 2 * p - 2, 4 * p - 4
    G0 = L0 + L1 * P0(q1, d)
    G1 = L1 * P1(q1, gamma, mu, sigma, alpha0, tau)
    return G0, G1, P0(q2, d), P1(q2, gamma, mu, sigma, alpha0, tau)


def thm3(mu, L0, L1, p, sigma, d, gamma, alpha0, tau, K):
    G0, G1, D0, D1 = lemma1(d, gamma, mu, sigma, alpha0, tau, p, L0, L1)
    C = 2 * gamma * gamma * (L0 * L0 + L1 * L1 * D0 + L1 * L1 * D1) / mu + G0 + G1
    eps = 1 - tau
    rate = 1 - eps * (2 * p - 1)
    rec = 2 - 2 * p * eps
    env = [C / mu / alpha0 / math.pow(k, rate) for k in range(1, K + 1)]
    return C, rec, rate, env


def thm3_recursion(C, mu, alpha0, tau, rec, e_sq, k):
    return e_sq * (1 - mu * alpha0 / math.pow(k + 1, tau)) + C / math.pow(k + 1, rec)


def lemma5(lam, gamma, rho, nu, L, beta0):
    return gamma * gamma * (1 + rho / nu / 2) / lam + nu * L * L + L * L / (2 * lam * (1 - beta0))


def thm5(rho, Delta, gamma, L, nu, lam, alpha0, K):
    a = alpha0 / math.sqrt(K)
    C = lemma5(lam, gamma, rho, nu, L, nu * a)
    xi = 2 + 1 / lam / nu
    s1 = s2 = 0.0
    for _ in range(K):
        s1 += a
        s2 += a * a
    general = 2 * (xi * Delta + 2 * L * L / nu + C * s2) / s1
    simplified = 8 * (rho * Delta + gamma * gamma) / math.sqrt(K) if K >= 2 else None
    return general, simplified, C, xi


def grid_prox(x, lam, eps=1.0, lo=-2.0, hi=2.0):
    """Argmin of y^4/4 + eps y^2/2 + (y - x)^2 / (2 lam), refined 1e-3 -> 1e-5 -> 1e-7."""
    import numpy as np

    phi = lambda y: y**4 / 4 + eps * y**2 / 2 + (y - x) ** 2 / (2 * lam)  # noqa: E731
    center, half = (lo + hi) / 2, (hi - lo) / 2
    for h in (1e-3, 1e-5, 1e-7):
        ys = np.arange(center - half, center + half + h / 2, h)
        center = ys[np.argmin(phi(ys))]
        half = 2 * h
    return center


# -- dual-path driver ---------------------------------------------------


def _rel(a, b):
    a, b = float(a), float(b)
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def dual_path_errors(draws=1000, seed=0):
    """Max relative disagreement per calculator over ``draws`` random parameter sets."""
    import numpy as np

    from clipsgd import theory
    from clipsgd.clipping import StepSchedule

    r = np.random.default_rng(seed)
    u = lambda lo, hi: float(np.exp(r.uniform(np.log(lo), np.log(hi))))  # noqa: E731
    worst = dict.fromkeys(("example1", "prop1", "thm1", "thm2", "lemma1", "thm3", "lemma5", "thm5"), 0.0)
    bump = lambda name, *pairs: worst.__setitem__(name, max([worst[name]] + [_rel(a, b) for a, b in pairs]))  # noqa: E731

    for _ in range(draws):
        a1 = u(1e-3, 10)
        x1 = math.sqrt(3 / a1) * u(1, 100) * (1 if r.random() < 0.5 else -1)
        K = int(r.integers(1, 60))
        bump("example1", *zip(theory.example1_lower_bound(a1, x1, K), example1(a1, x1, K)))

        mu, sigma, gamma, e0 = u(1e-2, 10), u(1e-3, 10), u(1e-2, 10), u(1e-3, 100)
        alpha0, tau = u(1e-3, 2), float(r.uniform(0, 1))
        lib = theory.prop1_bound(mu, sigma, gamma, e0, StepSchedule("polynomial", alpha0, tau), K)
        bump("prop1", *zip(lib, prop1(mu, sigma, gamma, e0, alpha0, tau, K)))

        alpha, m, rho = u(1e-4, 1), int(r.integers(1, 1000)), float(r.uniform(1e-3, 1))
        bump("thm1", (theory.thm1_recursion_rhs(e0, mu, sigma, gamma, alpha, m, rho),
                      thm1(e0, mu, sigma, gamma, alpha, m, rho)))

        G_big, delta, tau2 = u(1e-3, 100), float(r.uniform(0.01, 0.49)), float(r.uniform(0.51, 0.99))
        vr = gamma / (gamma + math.sqrt(G_big))
        a0 = float(r.uniform(0.01, 1)) / (mu * vr)
        K2 = int(r.integers(1, 10**6))
        res = theory.thm2_bounds(e0, mu, sigma, gamma, G_big, a0, tau2, delta, K2)
        ref = thm2(e0, mu, sigma, gamma, G_big, a0, tau2, delta, K2)
        bump("thm2", (res.varrho, ref[0]), (res.eta, ref[1]), (res.radius, ref[3]), (res.probability, ref[4]))
        if res.condition_holds != ref[2]:
            worst["thm2"] = math.inf

        p = int(r.integers(2, 6))
        d0, L0, L1 = u(1e-2, 3), u(1e-2, 100), u(1e-2, 100)
        mb = theory.lemma1_constants(d0, gamma, mu, sigma, alpha0, tau2, p, L0, L1)
        bump("lemma1", *zip((mb.G0, mb.G1, mb.D0, mb.D1), lemma1(d0, gamma, mu, sigma, alpha0, tau2, p, L0, L1)))

        t3 = theory.thm3_bound(mu, L0, L1, p, sigma, d0, gamma, alpha0, tau2, K)
        C, rec, rate, env = thm3(mu, L0, L1, p, sigma, d0, gamma, alpha0, tau2, K)
        k = int(r.integers(0, 10**5))
        bump("thm3", (t3.C, C), (t3.recursion_exponent, rec), (t3.rate_exponent, rate), *zip(t3.envelope, env),
             (t3.recursion_rhs(e0, k), thm3_recursion(C, mu, alpha0, tau2, rec, e0, k)))

        rho_w, L = u(1e-2, 10), u(1e-2, 10)
        g5, lam = 2 * L * u(1, 10), 1 / (2 * rho_w) / u(1, 10)
        nu, K5 = u(1e-2, 10), int(r.integers(1, 2000))
        a05 = float(r.uniform(0.01, 0.99)) * math.sqrt(K5) / nu
        beta0 = nu * a05 / math.sqrt(K5)
        bump("lemma5", (theory.lemma5_constant(lam, g5, rho_w, nu, L, beta0), lemma5(lam, g5, rho_w, nu, L, beta0)))
        Delta = u(1e-3, 100)
        t5 = theory.thm5_bound(rho_w, Delta, g5, L, nu, lam, a05, K5)
        ref5 = thm5(rho_w, Delta, g5, L, nu, lam, a05, K5)
        pairs = [(t5.general, ref5[0]), (t5.C, ref5[2]), (t5.xi, ref5[3])]
        if K5 >= 2:
            pairs.append((t5.simplified, ref5[1]))
        elif t5.simplified is not None:
            worst["thm5"] = math.inf
        bump("thm5", *pairs)
    return worst
