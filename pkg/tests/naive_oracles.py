"""
Slow, loop-based reimplementations of the estimators, written from the
defining sums rather than from the library code, used as test oracles on
small samples.
"""
import math

import numpy as np

INF = float("inf")

# (t, z) -> (sign, uses P(Z=1|X)); cells not using it are weighted by 1 - q
LDTE_CELLS = {
    (1, 1): (1.0, True),
    (1, 0): (-1.0, False),
    (0, 1): (1.0, True),
    (0, 0): (-1.0, False),
}


def sorted_positions(q, delta):
    """ positions ordered by q with uncensored first among ties, stable """
    return sorted(range(len(q)), key=lambda i: (q[i], -delta[i]))


def redistribute_to_the_right(q, delta):
    """
    KM weights by the redistribution-to-the-right construction: every point
    starts with mass 1/m, a censored point hands its mass in equal parts to
    all points after it in the ordering.  Returns {position: weight}.
    """
    order = sorted_positions(q, delta)
    m = len(order)
    mass = [1.0 / m] * m

    for rank, pos in enumerate(order):
        if delta[pos] == 0:
            later = m - rank - 1
            if later:
                share = mass[rank] / later
                for nxt in range(rank + 1, m):
                    mass[nxt] += share
            mass[rank] = 0.0

    return {pos: mass[rank] for rank, pos in enumerate(order)}


def below(xi, xg, columns):
    return all(xi[col] <= xg[j] for j, col in enumerate(columns))


def arm_rows(d, key):
    """ dataset rows of the arm t, or of the (t, z) cell """
    if len(key) == 1:
        return [i for i in range(d.n) if d.t[i] == key[0]]
    return [i for i in range(d.n) if d.t[i] == key[0] and d.z[i] == key[1]]


def arm_weights(d, rows):
    q = [float(d.q[i]) for i in rows]
    delta = [int(d.delta[i]) for i in rows]
    local = redistribute_to_the_right(q, delta)
    return {rows[pos]: w for pos, w in local.items()}


def terms_of(d, kind, p):
    """ (key, sign, inverse weight per row, recentering sign) of a process """
    if kind == "ldte":
        out = []
        for key, (sign, uses_q) in LDTE_CELLS.items():
            inv = [1.0 / p[i] if uses_q else 1.0 / (1.0 - p[i]) for i in range(d.n)]
            out.append((key, sign, inv, uses_q))
        return out

    return [
        ((1,), 1.0, [1.0 / p[i] for i in range(d.n)], True),
        ((0,), -1.0, [1.0 / (1.0 - p[i]) for i in range(d.n)], False),
    ]


def response(d, i, kind, inv, treated, y, xg, columns, tau=INF, ate=0.0):
    """ the integrand of one observation at one grid point """
    if not below(d.x[i], xg, columns):
        return 0.0
    q = float(d.q[i])
    if kind in ("dte", "ldte"):
        return inv if q <= y else 0.0
    value = q * inv if q <= tau else 0.0
    if kind == "hom":
        value -= ate if treated else -ate
    return value


def naive_ate(d, p, tau=INF):
    total = 0.0
    for key, sign, inv, _ in terms_of(d, "cate", p):
        rows = arm_rows(d, key)
        weights = arm_weights(d, rows)
        for i in rows:
            q = float(d.q[i])
            if q <= tau:
                total += sign * len(rows) / d.n * weights[i] * q * inv[i]
    return total


def naive_process(d, p, grid, kind, tau=INF):
    """ the process at every grid point by direct double summation """
    ate = naive_ate(d, p, tau) if kind == "hom" else 0.0
    values = []

    for y, xg in zip(grid.y, grid.x):
        total = 0.0
        for key, sign, inv, treated in terms_of(d, kind, p):
            rows = arm_rows(d, key)
            weights = arm_weights(d, rows)
            m = len(rows)
            for i in rows:
                phi = response(
                    d, i, kind, inv[i], treated, y, xg, grid.columns, tau, ate
                )
                total += sign * m / d.n * weights[i] * phi
        values.append(total)

    return np.array(values)


# -----------------------------------------------------------------------------
# influence functions
# -----------------------------------------------------------------------------


def _at_risk(d, rows, w, risk_set):
    n = d.n
    mass = len(rows) / n if risk_set == "arm" else 1.0
    return mass - sum(1 for j in rows if d.q[j] <= w) / n


def naive_gamma0(d, rows, y_bar, risk_set="arm", form="exp"):
    n = d.n
    if form == "exp":
        total = 0.0
        for j in rows:
            if d.delta[j] == 0 and d.q[j] < y_bar:
                risk = _at_risk(d, rows, d.q[j], risk_set)
                if risk > 0.5 / n:
                    total += (1.0 / n) / risk
        return math.exp(total)

    product = 1.0
    for v in sorted({float(d.q[j]) for j in rows if d.delta[j] == 0}):
        if v >= y_bar:
            break
        risk = _at_risk(d, rows, v, risk_set)
        if risk > 0.5 / n:
            count = sum(1 for j in rows if d.delta[j] == 0 and d.q[j] == v)
            product *= 1.0 + (count / n) / risk
    return product


def naive_eta(d, p, grid, kind, tau=INF, risk_set="arm", form="exp"):
    """ the (n, grid size) eta matrix by triple loops """
    n = d.n
    ate = naive_ate(d, p, tau) if kind == "hom" else 0.0
    out = np.zeros((n, grid.size))

    for key, sign, inv, treated in terms_of(d, kind, p):
        rows = arm_rows(d, key)
        g0 = {j: naive_gamma0(d, rows, d.q[j], risk_set, form) for j in rows}
        risk = {j: _at_risk(d, rows, d.q[j], risk_set) for j in rows}

        for g, (y, xg) in enumerate(zip(grid.y, grid.x)):
            xi = {
                j: response(d, j, kind, inv[j], treated, y, xg, grid.columns, tau, ate)
                for j in rows
            }

            # tail[j]: (1/n) sum over uncensored k with Q_k > Q_j of xi_k g0_k
            tail = {
                j: sum(
                    xi[k] * g0[k] for k in rows if d.delta[k] == 1 and d.q[k] > d.q[j]
                )
                / n
                for j in rows
            }

            for i in rows:
                q_i = float(d.q[i])
                eta = xi[i] * g0[i] * d.delta[i]

                if d.delta[i] == 0 and risk[i] > 0.5 / n:
                    eta += tail[i] / risk[i]

                for j in rows:
                    if d.delta[j] == 0 and d.q[j] < q_i and risk[j] > 0.5 / n:
                        eta -= (1.0 / n) / risk[j] ** 2 * tail[j]

                out[i, g] += sign * eta

    return out


def _basis_row(x, lower, span, exponents):
    scaled = [(x[j] - lower[j]) / span[j] for j in range(len(x))]
    return np.array(
        [math.prod(s ** e for s, e in zip(scaled, lam)) for lam in exponents]
    )


def naive_alpha(d, p, grid, kind, exponents, tau=INF):
    """
    alpha(X_i; y, x) for every row and grid point: the derivative of each
    term's inverse weight times its KM series regression at X_i.
    """
    n = d.n
    basis = _scaled_basis(d, exponents)
    size = len(exponents)
    gram = np.zeros((size, size))
    for r in basis:
        gram += np.outer(r, r) / n

    out = np.zeros((n, grid.size))
    for key, sign, inv, uses_p in terms_of(d, kind, p):
        rows = arm_rows(d, key)
        weights = arm_weights(d, rows)
        m = len(rows)

        for g, y in enumerate(grid.y):
            moment = np.zeros(size)
            for j in rows:
                q = float(d.q[j])
                if kind in ("dte", "ldte"):
                    r_j = inv[j] if q <= y else 0.0
                else:
                    r_j = q * inv[j] if q <= tau else 0.0
                moment += m / n * weights[j] * r_j * basis[j]
            coef = np.linalg.solve(gram, moment)

            for i in range(n):
                fitted = float(basis[i] @ coef)
                if kind in ("dte", "ldte"):
                    fitted = min(max(fitted, 0.0), 1.0)
                if uses_p:
                    out[i, g] += sign * (-1.0 / p[i]) * fitted
                else:
                    out[i, g] += sign * (1.0 / (1.0 - p[i])) * fitted

    for i in range(n):
        for g, xg in enumerate(grid.x):
            if not below(d.x[i], xg, grid.columns):
                out[i, g] = 0.0

    return out


def naive_gamma1(d, rows, xi, g0, y_bar, risk_set="arm"):
    """ gamma1 at y_bar; `xi` and `g0` map dataset rows to values """
    n = d.n
    risk = _at_risk(d, rows, y_bar, risk_set)
    if risk <= 0.5 / n:
        return 0.0

    total = 0.0
    for k in rows:
        if d.delta[k] == 1 and d.q[k] > y_bar:
            total += xi[k] * g0[k]
    return total / n / risk


def naive_gamma2(d, rows, xi, g0, y_bar, risk_set="arm"):
    """ gamma2 at y_bar, one 1/n jump per censored observation """
    n = d.n
    total = 0.0

    for j in rows:
        if d.delta[j] != 0 or d.q[j] >= y_bar:
            continue
        risk = _at_risk(d, rows, d.q[j], risk_set)
        if risk <= 0.5 / n:
            continue
        inner = 0.0
        for k in rows:
            if d.delta[k] == 1 and d.q[k] > d.q[j]:
                inner += xi[k] * g0[k]
        total += (1.0 / n) / risk ** 2 * inner / n

    return total


def _scaled_basis(d, exponents):
    n, k = d.n, d.k
    lower = [float(min(d.x[:, j])) for j in range(k)]
    span = []
    for j in range(k):
        width = float(max(d.x[:, j])) - lower[j]
        span.append(width if width > 0 else 1.0)
    return [_basis_row(d.x[i], lower, span, exponents) for i in range(n)]


def naive_logit_correction(d, p, grid, kind, exponents, tau=INF):
    """
    R(X_i)' Info^-1 s(y, x) for every row and grid point: Info is the logit
    information (1/n) sum p(1 - p) R R' and s the derivative of the process
    in the logit coefficients, summed term by term with the homogeneity
    recentering held fixed.
    """
    n = d.n
    basis = _scaled_basis(d, exponents)
    size = len(exponents)

    info = np.zeros((size, size))
    for i in range(n):
        info += p[i] * (1.0 - p[i]) * np.outer(basis[i], basis[i]) / n

    out = np.zeros((n, grid.size))
    for g, (y, xg) in enumerate(zip(grid.y, grid.x)):
        slope = np.zeros(size)

        for key, sign, inv, uses_p in terms_of(d, kind, p):
            rows = arm_rows(d, key)
            weights = arm_weights(d, rows)
            m = len(rows)
            side = 1.0 if uses_p else 0.0
            for j in rows:
                phi = response(d, j, kind, inv[j], uses_p, y, xg, grid.columns, tau)
                slope -= sign * m / n * weights[j] * phi * (side - p[j]) * basis[j]

        coef = np.linalg.solve(info, slope)
        for i in range(n):
            out[i, g] = float(basis[i] @ coef)

    return out


def naive_covariate_mass(d, grid):
    """ sum over arms of (m/n) sum W 1{X <= x} at every grid point """
    out = np.zeros(grid.size)
    for key in ((1,), (0,)):
        rows = arm_rows(d, key)
        weights = arm_weights(d, rows)
        for g, xg in enumerate(grid.x):
            for i in rows:
                if below(d.x[i], xg, grid.columns):
                    out[g] += len(rows) / d.n * weights[i]
    return out
