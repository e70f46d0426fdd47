"""Spatial averages and the constants entering the limit theorems.

G_R(t) is the integral of u(t,x) - E u(t,x) over a ball or box of size R.
Its limiting variance is k * int_0^t eta(s)^2 ds * R^{2d-beta}, where k is
the kernel double integral over the unit region and eta(s) is the
(spatially constant) mean of sigma(u(s, .)).
"""

from dataclasses import dataclass, field

import numpy as np

from .engine import DegenerateSigmaError


@dataclass(frozen=True)
class Region:
    """Ball {|x-c| <= R} or box {max|x_i - c_i| <= R}."""
    kind: str  # "ball" | "box"
    radius: float
    center: tuple = None

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise ValueError("region kind must be ball or box, got %r"
                             % (self.kind,))
        if self.radius <= 0:
            raise ValueError("region size must be positive, got %r"
                             % (self.radius,))

    def resolved_center(self, d):
        if self.center is None:
            return np.zeros(d)
        c = np.asarray(self.center, dtype=np.float64)
        if c.shape != (d,):
            raise ValueError("center %r has wrong dimension" % (self.center,))
        return c

    def mask(self, lattice):
        """Boolean grid of cell centers inside the region."""
        c = self.resolved_center(lattice.d)
        grids = lattice.center_grids()
        if self.kind == "ball":
            dist2 = sum((g - ci) ** 2 for g, ci in zip(grids, c))
            return dist2 <= self.radius ** 2
        inside = None
        for g, ci in zip(grids, c):
            cond = np.abs(g - ci) <= self.radius
            inside = cond if inside is None else (inside & cond)
        return np.broadcast_to(inside, lattice.shape)

    def volume(self, d):
        if self.kind == "box":
            return (2.0 * self.radius) ** d
        from scipy.special import gamma
        return np.pi ** (d / 2.0) / gamma(d / 2.0 + 1.0) * self.radius ** d


def region_average(field_in, region, mean_field_in):
    """h^d * sum over in-region cells of (field - mean field)."""
    lat = field_in.lattice
    m = region.mask(lat)
    if not m.any():
        raise ValueError("region contains no cell centers (R=%g < h/2=%g?)"
                         % (region.radius, lat.h / 2.0))
    diff = field_in.values[m] - mean_field_in.values[m]
    return float(lat.cell_volume * diff.sum())


def _uniform_in_region(region, d, n, rng):
    c = region.resolved_center(d)
    if region.kind == "box":
        return c + region.radius * (2.0 * rng.random((n, d)) - 1.0)
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    radii = region.radius * rng.random(n) ** (1.0 / d)
    return c + dirs * radii[:, None]


def k_beta(region_unit, spec, method="auto", n_pairs=1_000_000, rng=None):
    """Kernel double integral over the unit region, with standard error.

    Closed form in d=1 (ball and box coincide with [-1,1]):
    2^{3-beta} / ((1-beta)(2-beta)). Otherwise uniform-pair Monte Carlo.
    """
    if spec.beta >= spec.d:
        raise ValueError("k diverges for beta >= d")
    if method == "auto":
        method = "closed-form" if spec.d == 1 else "monte-carlo"
    if method == "closed-form":
        if spec.d != 1:
            raise ValueError("closed form only available in d=1")
        b = spec.beta
        base = 2.0 ** (3.0 - b) / ((1.0 - b) * (2.0 - b))
        return base * region_unit.radius ** (2 - b), 0.0
    if method != "monte-carlo":
        raise ValueError("unknown method %r" % (method,))
    if rng is None:
        rng = np.random.default_rng(0xC0FFEE)
    x = _uniform_in_region(region_unit, spec.d, n_pairs, rng)
    y = _uniform_in_region(region_unit, spec.d, n_pairs, rng)
    v = np.linalg.norm(x - y, axis=1) ** (-spec.beta)
    vol = region_unit.volume(spec.d)
    return (float(vol * vol * v.mean()),
            float(vol * vol * v.std(ddof=1) / np.sqrt(n_pairs)))


@dataclass
class LimitConstants:
    """k constant plus the tabulated eta(s) = E sigma(u(s, .)) curve."""
    k_beta: float
    t_grid: np.ndarray
    eta: np.ndarray
    eta_se: np.ndarray = None

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=np.float64)
        self.eta = np.asarray(self.eta, dtype=np.float64)
        if self.eta_se is None:
            self.eta_se = np.zeros_like(self.eta)
        if self.k_beta <= 0:
            raise ValueError("k constant must be positive")
        if self.t_grid.shape != self.eta.shape:
            raise ValueError("t grid and eta curve must align")
        if not np.all(np.isfinite(self.eta)):
            raise ValueError("eta curve must be finite")
        if np.any(np.diff(self.t_grid) <= 0):
            raise ValueError("t grid must be strictly increasing")

    @classmethod
    def for_linear(cls, k_value, t_grid):
        """Exact constants for sigma(x)=x with constant-one start: eta = 1."""
        t_grid = np.asarray(t_grid, dtype=np.float64)
        return cls(k_beta=k_value, t_grid=t_grid, eta=np.ones_like(t_grid))

    def eta_sq_integral(self, t):
        """Trapezoidal integral of eta^2 over [0, t]; t must be on the grid."""
        tg = self.t_grid
        if t < tg[0] - 1e-12 or t > tg[-1] + 1e-12:
            raise ValueError("t=%r outside tabulated range [%g, %g]"
                             % (t, tg[0], tg[-1]))
        if tg[0] > 1e-12:
            raise ValueError("eta table must start at t=0")
        idx = int(np.argmin(np.abs(tg - t)))
        if abs(tg[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError("t=%r is not a tabulated time" % (t,))
        trapezoid = getattr(np, "trapezoid", np.trapz)
        return float(trapezoid(self.eta[: idx + 1] ** 2, tg[: idx + 1]))


def estimate_eta(fields_by_time, sigma, lattice, collar):
    """eta(s) from stored fields: mean of sigma(u(s,x)) over an interior
    window and over replicas; stderr from replica-level means.

    fields_by_time: {time: array of shape (n_replicas, *grid)}.
    """
    grids = lattice.center_grids()
    window = None
    for g in grids:
        cond = np.abs(g) <= lattice.L - collar
        window = cond if window is None else (window & cond)
    window = np.broadcast_to(window, lattice.shape)
    if not window.any():
        raise ValueError("interior window is empty; collar %g too wide"
                         % (collar,))
    times = sorted(fields_by_time)
    eta, se = [], []
    for t in times:
        stack = np.asarray(fields_by_time[t])
        if stack.shape[0] < 100:
            raise ValueError("need >= 100 replicas for eta, got %d"
                             % stack.shape[0])
        per_rep = sigma(stack)[:, window].mean(axis=1)
        eta.append(per_rep.mean())
        se.append(per_rep.std(ddof=1) / np.sqrt(len(per_rep)))
    return np.array(times), np.array(eta), np.array(se)


def predicted_sigma(t, R, constants, d, beta):
    """Predicted Var G_R(t): k * int_0^t eta^2 * R^{2d - beta}."""
    if t == 0:
        return 0.0
    integral = constants.eta_sq_integral(t)
    if integral * constants.k_beta < 1e-14:
        raise DegenerateSigmaError(
            "degenerate sigma(1)=0 regime; no CLT normalization exists")
    return constants.k_beta * integral * R ** (2.0 * d - beta)


def limit_covariance(times, constants):
    """C_ij = k * int_0^{min(t_i, t_j)} eta^2; PSD by min-kernel structure."""
    times = list(times)
    ints = {t: constants.eta_sq_integral(t) for t in times}
    m = len(times)
    C = np.empty((m, m))
    for i, ti in enumerate(times):
        for j, tj in enumerate(times):
            C[i, j] = constants.k_beta * ints[min(ti, tj)]
    return C


def constants_rows(spec, region_kind="ball", methods=("closed-form", "monte-carlo")):
    """CSV-ready rows (name, d, beta, region_kind, value, stderr, method)."""
    from .noise import RieszSpec  # noqa: F401  (type documented, not enforced)
    rows = []
    unit = Region(kind=region_kind, radius=1.0)
    for method in methods:
        if method == "closed-form" and spec.d != 1:
            continue
        val, se = k_beta(unit, spec, method=method)
        rows.append(("k_beta", spec.d, spec.beta, region_kind, val, se, method))
    return rows
