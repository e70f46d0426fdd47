"""Time stepping for the stochastic heat equation in mild form.

One step is the exponential-Euler update u <- S_dt[u + sigma(u) * dW],
where S_t is the periodic heat semigroup applied spectrally and dW is one
step-integrated noise slice (variance proportional to dt).
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .noise import Lattice, SpatialField, sample_slice
from .streams import stream_for


class InstabilityError(Exception):
    """Non-finite field values during time stepping."""


class DegenerateSigmaError(Exception):
    """sigma(1) = 0: the constant solution is exact and no CLT scaling exists."""


_SIGMA_KINDS = ("linear", "affine", "sine-affine", "clipped-linear")


@dataclass(frozen=True)
class NonlinearitySpec:
    """Lipschitz nonlinearity sigma acting cellwise on the field.

    kinds: linear sigma(x)=x; affine(a,b) sigma(x)=a*x+b;
    sine-affine(a,b,c) sigma(x)=a*sin(x)+b*x+c; clipped-linear sigma(x)=max(x,0).
    """
    kind: str
    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    lipschitz_bound: float = None

    def __post_init__(self):
        if self.kind not in _SIGMA_KINDS:
            raise ValueError("unknown sigma kind %r (choose from %s)"
                             % (self.kind, ", ".join(_SIGMA_KINDS)))
        if self.lipschitz_bound is None:
            object.__setattr__(self, "lipschitz_bound", self._default_lipschitz())
        self._check_lipschitz()

    def _default_lipschitz(self):
        if self.kind == "linear" or self.kind == "clipped-linear":
            return 1.0
        if self.kind == "affine":
            return abs(self.a)
        return abs(self.a) + abs(self.b)

    def _check_lipschitz(self):
        # numerical audit of the declared constant on a 1e4-point grid
        x = np.linspace(-10.0, 10.0, 10_000)
        y = self(x)
        slopes = np.abs(np.diff(y) / np.diff(x))
        if slopes.max() > self.lipschitz_bound * (1.0 + 1e-6):
            raise ValueError(
                "declared Lipschitz bound %g violated: observed slope %g"
                % (self.lipschitz_bound, slopes.max()))

    def __call__(self, v):
        if self.kind == "linear":
            return np.asarray(v, dtype=np.float64)
        if self.kind == "affine":
            return self.a * np.asarray(v) + self.b
        if self.kind == "sine-affine":
            v = np.asarray(v)
            return self.a * np.sin(v) + self.b * v + self.c
        return np.maximum(np.asarray(v), 0.0)

    @property
    def sigma_at_one(self):
        return float(self(np.float64(1.0)))

    @property
    def degenerate_at_one(self):
        return abs(self.sigma_at_one) < 1e-14


@dataclass(frozen=True)
class InitialCondition:
    """Either a positive constant or a tabulated bounded function."""
    kind: str  # "constant" | "bounded-function"
    value: float = 1.0
    table: np.ndarray = None
    lower: float = None
    upper: float = None

    def __post_init__(self):
        if self.kind == "constant":
            object.__setattr__(self, "lower", self.value)
            object.__setattr__(self, "upper", self.value)
        elif self.kind == "bounded-function":
            if self.table is None or self.lower is None or self.upper is None:
                raise ValueError("bounded-function initial condition needs "
                                 "a table and declared bounds")
            t = np.asarray(self.table, dtype=np.float64)
            if t.min() < self.lower or t.max() > self.upper:
                raise ValueError(
                    "initial condition violates declared bounds [%g, %g]: "
                    "range [%g, %g]" % (self.lower, self.upper,
                                        t.min(), t.max()))
            object.__setattr__(self, "table", t)
        else:
            raise ValueError("unknown initial-condition kind %r" % (self.kind,))

    def field_on(self, lattice):
        if self.kind == "constant":
            return SpatialField(lattice, np.full(lattice.shape, self.value))
        if self.table.shape != lattice.shape:
            raise ValueError("tabulated initial condition shape %s does not "
                             "match lattice %s" % (self.table.shape,
                                                   lattice.shape))
        return SpatialField(lattice, self.table.copy())


@dataclass
class FieldState:
    field: SpatialField
    step_index: int
    dt: float

    @property
    def time(self):
        return self.step_index * self.dt


@dataclass
class Trajectory:
    replica_id: int
    record_times: list
    region_averages: dict = field(default_factory=dict)  # (time, region_id) -> float
    fields_at_times: dict = field(default_factory=dict)  # time -> SpatialField


def _heat_multiplier(lattice, tau):
    freqs = [2.0 * np.pi * np.fft.fftfreq(lattice.n, d=lattice.h)
             for _ in range(lattice.d - 1)]
    freqs.append(2.0 * np.pi * np.fft.rfftfreq(lattice.n, d=lattice.h))
    grids = np.meshgrid(*freqs, indexing="ij", sparse=True)
    xi2 = sum(g ** 2 for g in grids)
    return np.exp(-0.5 * xi2 * tau)


def heat_semigroup(field_in, tau):
    """Periodic convolution with the heat kernel p_tau, done spectrally."""
    if tau < 0:
        raise ValueError("tau must be nonnegative, got %r" % (tau,))
    if tau == 0:
        return SpatialField(field_in.lattice, field_in.values.copy())
    lat = field_in.lattice
    mult = _heat_multiplier(lat, tau)
    axes = tuple(range(lat.d))
    out = np.fft.irfftn(np.fft.rfftn(field_in.values, axes=axes) * mult,
                        s=lat.shape, axes=axes)
    return SpatialField(lat, out)


def nonlinearity_eval(spec, v):
    return float(spec(np.float64(v)))


def step(state, slice_field, sigma, dt, _mult=None):
    """One exponential-Euler step; raises on blow-up."""
    lat = state.field.lattice
    if _mult is None:
        _mult = _heat_multiplier(lat, dt)
    u = state.field.values
    kicked = u + sigma(u) * slice_field.values
    axes = tuple(range(lat.d))
    out = np.fft.irfftn(np.fft.rfftn(kicked, axes=axes) * _mult,
                        s=lat.shape, axes=axes)
    if not np.all(np.isfinite(out)):
        raise InstabilityError(
            "blow-up/instability at step %d (t=%g); reduce dt or amplitude"
            % (state.step_index + 1, (state.step_index + 1) * dt))
    new = SpatialField.__new__(SpatialField)
    new.lattice = lat
    new.values = out
    return FieldState(field=new, step_index=state.step_index + 1, dt=dt)


def snap_to_grid(t, dt, what="time"):
    """Step index of t on the dt grid; error if t is off-grid."""
    k = round(t / dt)
    if abs(t - k * dt) > 1e-6 * max(dt, abs(t)):
        raise ValueError("%s %r is not a multiple of dt=%r" % (what, t, dt))
    return int(k)


def check_margin(lattice, regions, T):
    """Torus must leave a 6*sqrt(T) collar outside every region."""
    collar = 6.0 * np.sqrt(T)
    for reg in regions:
        center = reg.resolved_center(lattice.d)
        reach = float(np.max(np.abs(center)) + reg.radius)
        if lattice.L < reach - 1e-12 + collar:
            raise ValueError(
                "L=%g < region reach + 6*sqrt(T) = %g + %g = %g"
                % (lattice.L, reach, collar, reach + collar))


def mean_field(init, t, lattice):
    """Deterministic heat flow of the initial condition: E u(t, .)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return heat_semigroup(init.field_on(lattice), t)


def simulate(noise_cov, sigma, init, T, dt, record_times, regions, seed,
             replica_id, store_fields=False, mean_fields=None):
    """Run one replica from 0 to T and record region averages.

    Each step draws a fresh slice from the stream keyed by
    (seed, replica_id, step_index). mean_fields maps record time to the
    precomputed deterministic mean (heat flow of the initial condition);
    it is computed here when absent.
    """
    # local import: observables depends on noise only, no cycle at call time
    from .observables import region_average

    lat = noise_cov.lattice
    check_margin(lat, regions, T)
    n_steps = snap_to_grid(T, dt, "horizon T")
    record_steps = {}
    for t in record_times:
        k = snap_to_grid(t, dt, "record time")
        if k > n_steps:
            raise ValueError("record time %r exceeds horizon %r" % (t, T))
        record_steps[k] = t
    if mean_fields is None:
        mean_fields = {t: mean_field(init, t, lat) for t in record_times}

    traj = Trajectory(replica_id=replica_id, record_times=sorted(record_times))
    state = FieldState(field=init.field_on(lat), step_index=0, dt=dt)
    mult = _heat_multiplier(lat, dt)

    def record(state):
        t = record_steps[state.step_index]
        for rid, reg in enumerate(regions):
            traj.region_averages[(t, rid)] = region_average(
                state.field, reg, mean_fields[t])
        if store_fields:
            traj.fields_at_times[t] = state.field

    if 0 in record_steps:
        record(state)
    for k in range(n_steps):
        stream = stream_for(seed, replica_id, k)
        sl = sample_slice(noise_cov, dt, stream)
        try:
            state = step(state, sl, sigma, dt, _mult=mult)
        except InstabilityError as exc:
            raise InstabilityError("replica %d: %s" % (replica_id, exc)) from exc
        if state.step_index in record_steps:
            record(state)
    return traj


# --- flat binary field snapshots -------------------------------------------

_MAGIC = b"RSHE1"


def write_snapshot(path, field_in, time):
    """magic 'RSHE1', then d, n (int64 LE), h, time (float64 LE), then
    n^d float64 cell values in row-major order."""
    lat = field_in.lattice
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqdd", lat.d, lat.n, lat.h, time))
        fh.write(field_in.values.astype("<f8").tobytes(order="C"))


def read_snapshot(path):
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _MAGIC:
            raise ValueError("bad snapshot magic %r in %s" % (magic, path))
        d, n, h, time = struct.unpack("<qqdd", fh.read(32))
        lat = Lattice(d=d, n=n, L=n * h / 2.0)
        vals = np.frombuffer(fh.read(8 * n ** d), dtype="<f8").reshape((n,) * d)
    return SpatialField(lat, vals.copy()), time
