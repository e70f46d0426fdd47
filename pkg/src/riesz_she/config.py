"""Experiment configuration: flat key = value text with [section] headers.

Top-level keys describe the experiment; [lattice], [sigma] and [init]
sections describe the discretization, the nonlinearity and the initial
condition. Lists are comma separated. Defaults: dt = h^2/4 (diffusive
stability margin), record_times = [T], ball regions at the origin.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .engine import InitialCondition, NonlinearitySpec
from .noise import Lattice, RieszSpec
from .observables import Region

KINDS = ("noise-validate", "variance-limit", "clt", "fclt", "tightness",
         "decay", "lemma31", "constants")


class ConfigError(Exception):
    pass


def _parse_sections(text):
    sections = {"": {}}
    current = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected key = value, got %r"
                              % (lineno, raw.strip()))
        key, val = line.split("=", 1)
        sections[current][key.strip()] = val.strip()
    return sections


def _get(sec, key, conv, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError("missing required key %r" % (key,))
        return default
    try:
        return conv(sec[key])
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError("key %r: cannot parse %r (%s)"
                          % (key, sec[key], exc))


def _float_list(s):
    return [float(v) for v in s.split(",") if v.strip() != ""]


def _int_list(s):
    return [int(v) for v in s.split(",") if v.strip() != ""]


def _bool(s):
    low = s.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError("not a boolean: %r" % (s,))


@dataclass
class ExperimentConfig:
    kind: str
    spec: RieszSpec
    lattice: Lattice
    sigma: NonlinearitySpec
    init: InitialCondition
    T: float
    dt: float
    record_times: list
    R_list: list
    region_kind: str
    n_replicas: int
    seed: int
    store_fields: bool = False
    lags: list = None
    y_list: list = None
    p_moment: int = 2
    init_params: dict = field(default_factory=dict)

    @property
    def regions(self):
        return [Region(kind=self.region_kind, radius=R) for R in self.R_list]

    def canonical_text(self):
        lines = [
            "kind = %s" % self.kind,
            "d = %d" % self.spec.d,
            "beta = %.17g" % self.spec.beta,
            "T = %.17g" % self.T,
            "dt = %.17g" % self.dt,
            "record_times = %s" % ", ".join("%.17g" % t
                                            for t in self.record_times),
            "R_list = %s" % ", ".join("%.17g" % r for r in self.R_list),
            "region_kind = %s" % self.region_kind,
            "n_replicas = %d" % self.n_replicas,
            "seed = %d" % self.seed,
            "store_fields = %s" % ("true" if self.store_fields else "false"),
            "p_moment = %d" % self.p_moment,
        ]
        if self.lags is not None:
            lines.append("lags = %s" % ", ".join(str(v) for v in self.lags))
        if self.y_list is not None:
            lines.append("y_list = %s" % ", ".join("%.17g" % v
                                                   for v in self.y_list))
        lines += ["", "[lattice]",
                  "n = %d" % self.lattice.n,
                  "L = %.17g" % self.lattice.L]
        lines += ["", "[sigma]", "kind = %s" % self.sigma.kind]
        if self.sigma.kind in ("affine", "sine-affine"):
            lines += ["a = %.17g" % self.sigma.a, "b = %.17g" % self.sigma.b]
        if self.sigma.kind == "sine-affine":
            lines.append("c = %.17g" % self.sigma.c)
        lines += ["", "[init]"]
        if self.init.kind == "constant":
            lines += ["kind = constant", "value = %.17g" % self.init.value]
        else:
            lines += ["kind = cosine",
                      "offset = %.17g" % self.init_params["offset"],
                      "amplitude = %.17g" % self.init_params["amplitude"],
                      "cycles = %d" % self.init_params.get("cycles", 1)]
        return "\n".join(lines) + "\n"

    def config_hash(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def _build_init(sec, lattice):
    kind = sec.get("kind", "constant")
    if kind == "constant":
        value = _get(sec, "value", float, default=1.0)
        return InitialCondition(kind="constant", value=value), {}
    if kind == "cosine":
        offset = _get(sec, "offset", float, required=True)
        amplitude = _get(sec, "amplitude", float, required=True)
        cycles = _get(sec, "cycles", int, default=1)
        grids = lattice.center_grids()
        table = offset + amplitude * np.cos(
            cycles * np.pi * grids[0] / lattice.L)
        table = np.broadcast_to(table, lattice.shape).copy()
        lower, upper = offset - abs(amplitude), offset + abs(amplitude)
        return (InitialCondition(kind="bounded-function", table=table,
                                 lower=lower, upper=upper),
                {"offset": offset, "amplitude": amplitude, "cycles": cycles})
    raise ConfigError("unknown init kind %r (constant or cosine)" % (kind,))


def parse_config(text):
    sections = _parse_sections(text)
    top = sections[""]
    lat_sec = sections.get("lattice", {})
    sig_sec = sections.get("sigma", {})
    init_sec = sections.get("init", {})

    kind = _get(top, "kind", str, required=True)
    if kind not in KINDS:
        raise ConfigError("unknown experiment kind %r (choose from %s)"
                          % (kind, ", ".join(KINDS)))
    d = _get(top, "d", int, required=True)
    beta = _get(top, "beta", float, required=True)
    if not (0 < beta < min(d, 2)):
        raise ConfigError("beta must be < min(d,2)=%g; got beta=%g"
                          % (min(d, 2), beta))
    spec = RieszSpec(d=d, beta=beta)

    n = _get(lat_sec, "n", int, required=True)
    L = _get(lat_sec, "L", float, required=True)
    try:
        lattice = Lattice(d=d, n=n, L=L)
    except ValueError as exc:
        raise ConfigError(str(exc))

    sig_kind = sig_sec.get("kind", "linear")
    try:
        sigma = NonlinearitySpec(
            kind=sig_kind,
            a=_get(sig_sec, "a", float, default=1.0),
            b=_get(sig_sec, "b", float, default=0.0),
            c=_get(sig_sec, "c", float, default=0.0))
    except ValueError as exc:
        raise ConfigError(str(exc))

    try:
        init, init_params = _build_init(init_sec, lattice)
    except ValueError as exc:
        raise ConfigError(str(exc))

    T = _get(top, "T", float, default=0.0)
    if T < 0:
        raise ConfigError("T must be nonnegative, got %g" % T)
    dt_default = lattice.h ** 2 / 4.0
    if T > 0:
        # snap the default down so T is a whole number of steps
        dt_default = T / int(np.ceil(T / dt_default - 1e-9))
    dt = _get(top, "dt", float, default=dt_default)
    if dt <= 0:
        raise ConfigError("dt must be positive, got %g" % dt)
    record_times = _get(top, "record_times", _float_list,
                        default=[T] if T > 0 else [])
    R_list = _get(top, "R_list", _float_list, default=[])
    region_kind = _get(top, "region_kind", str, default="ball")
    if region_kind not in ("ball", "box"):
        raise ConfigError("region_kind must be ball or box, got %r"
                          % (region_kind,))
    n_replicas = _get(top, "n_replicas", int, default=100)
    seed = _get(top, "seed", int, default=0)
    store_fields = _get(top, "store_fields", _bool, default=False)
    lags = _get(top, "lags", _int_list, default=None)
    y_list = _get(top, "y_list", _float_list, default=None)
    p_moment = _get(top, "p_moment", int, default=2)

    cfg = ExperimentConfig(
        kind=kind, spec=spec, lattice=lattice, sigma=sigma, init=init,
        T=T, dt=dt, record_times=record_times, R_list=R_list,
        region_kind=region_kind, n_replicas=n_replicas, seed=seed,
        store_fields=store_fields, lags=lags, y_list=y_list,
        p_moment=p_moment, init_params=init_params)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    needs_sim = cfg.kind in ("variance-limit", "clt", "fclt", "tightness",
                             "decay")
    if needs_sim:
        if cfg.T <= 0:
            raise ConfigError("T must be positive for kind %r" % (cfg.kind,))
        if not cfg.R_list:
            raise ConfigError("R_list is required for kind %r" % (cfg.kind,))
        # time grid
        n_steps = cfg.T / cfg.dt
        if abs(n_steps - round(n_steps)) > 1e-6:
            raise ConfigError("T=%g is not a multiple of dt=%g (T/dt=%g)"
                              % (cfg.T, cfg.dt, n_steps))
        for t in cfg.record_times:
            k = t / cfg.dt
            if abs(k - round(k)) > 1e-6:
                raise ConfigError(
                    "record time %g is not a multiple of dt=%g" % (t, cfg.dt))
            if t > cfg.T + 1e-12:
                raise ConfigError("record time %g exceeds T=%g" % (t, cfg.T))
        # torus margin
        r_max = max(cfg.R_list)
        margin = r_max + 6.0 * np.sqrt(cfg.T)
        if cfg.lattice.L < margin - 1e-12:
            raise ConfigError("L=%g < R_max+6*sqrt(T)=%g"
                              % (cfg.lattice.L, margin))
    if cfg.kind == "fclt" and len(cfg.record_times) < 2:
        raise ConfigError("fclt needs at least two record times")
    if cfg.kind == "tightness" and len(cfg.record_times) < 5:
        raise ConfigError("tightness needs a base time plus >= 4 gap times")
    if cfg.kind == "lemma31" and not cfg.y_list:
        raise ConfigError("lemma31 needs y_list")
    if cfg.kind == "noise-validate" and cfg.dt <= 0:
        raise ConfigError("noise-validate needs a positive dt")
    if cfg.n_replicas < 1:
        raise ConfigError("n_replicas must be >= 1, got %d" % cfg.n_replicas)


def load_config(path):
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc))
    return parse_config(text)
