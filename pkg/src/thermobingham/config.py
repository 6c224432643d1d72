"""Run configuration: ``key = value`` files, presets and validation.

A file may start from a preset (``preset = experiment1``) and override any
key afterwards.  Lines are ``key = value``; ``#`` starts a comment.
"""
from dataclasses import dataclass, replace

import numpy as np

from .assembly import PhysicalParams
from .huber import RegularizationParams
from .mesh import build_cross_grid
from .postprocess import DEFAULT_REPORT_Q
from .stepper import YIELD_COUPLINGS, TimeGrid


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(ConfigError):
    pass


# default resolution of the presets: h = 0.0023
DEFAULT_MESH = 90


@dataclass(frozen=True)
class RunConfig:
    mesh_nx: int
    mesh_ny: int
    physical: PhysicalParams
    reg: RegularizationParams = RegularizationParams()
    dt_constant: float = 0.1
    Tf: float = 0.12
    theta0_mode: str = "elliptic"
    theta0_value: float = 0.0
    snapshot_every: int = 0
    output_dir: str = "run"
    report_q: float = DEFAULT_REPORT_Q
    sample_times: tuple = (0.015, 0.030, 0.060, 0.12)
    yield_coupling: str = "physical"
    convection: bool = True

    def validate(self):
        if self.mesh_nx < 1 or self.mesh_ny < 1:
            raise ValidationError("mesh counts must be at least 1")
        try:
            self.physical.validate()
        except ValueError as err:
            raise ValidationError(str(err)) from err
        if not self.reg.gamma > 0:
            raise ValidationError("gamma must be positive")
        if not self.dt_constant > 0:
            raise ValidationError("dt_constant must be positive")
        if not self.Tf > 0:
            raise ValidationError("Tf must be positive")
        if self.theta0_mode not in ("elliptic", "constant"):
            raise ValidationError(f"theta0 must be 'elliptic' or 'constant(value)', got {self.theta0_mode!r}")
        if self.theta0_mode == "elliptic" and self.physical.beta <= 0:
            raise ValidationError("elliptic theta0 needs beta > 0")
        if self.theta0_mode == "constant" and not 0.0 <= self.theta0_value <= 1.0:
            raise ValidationError("constant theta0 must lie in [0, 1]")
        if self.snapshot_every < 0:
            raise ValidationError("snapshot_every must be >= 0 (0 selects the default cadence)")
        if not 1.0 < self.report_q <= 2.0:
            raise ValidationError("report_q must lie in (1, 2]")
        if self.yield_coupling not in YIELD_COUPLINGS:
            raise ValidationError(f"yield_coupling must be one of {', '.join(YIELD_COUPLINGS)}")
        return self

    def mesh(self):
        return build_cross_grid(self.mesh_nx, self.mesh_ny)

    def time_grid(self, mesh=None):
        mesh = self.mesh() if mesh is None else mesh
        return TimeGrid.from_mesh(mesh, self.dt_constant, self.Tf)

    def with_overrides(self, **kw):
        """Copy with top-level fields or physical parameters replaced."""
        phys = {k: kw.pop(k) for k in list(kw) if k in PHYSICAL_KEYS}
        cfg = self
        try:
            if phys:
                cfg = replace(cfg, physical=replace(cfg.physical, **phys))
            if "gamma" in kw:
                cfg = replace(cfg, reg=RegularizationParams(kw.pop("gamma")))
        except ValueError as err:
            raise ValidationError(str(err)) from err
        if "mesh_n" in kw:
            n = int(kw.pop("mesh_n"))
            cfg = replace(cfg, mesh_nx=n, mesh_ny=n)
        return replace(cfg, **kw).validate()


PHYSICAL_KEYS = ("mu0", "delta_mu", "g0", "delta_g", "kappa", "Cp", "alpha", "beta")

PRESETS = {
    "experiment1": dict(
        mu0=1.0, delta_mu=0.5, g0=10.0, delta_g=8.0, alpha=100.0, beta=15.0, kappa=10.0, Cp=1.0,
        gamma=1e3, dt_constant=0.1, Tf=0.12, theta0="elliptic",
    ),
    "experiment2": dict(
        mu0=1.5, delta_mu=-0.5, g0=18.0, delta_g=-8.0, alpha=0.0, beta=15.0, kappa=10.0, Cp=1.5,
        gamma=1e3, dt_constant=0.1, Tf=0.12, theta0="constant(0.0125)",
    ),
    # g0 is deliberately absent: the sweep needs it from the user
    "alpha_sweep": dict(
        mu0=1.0, delta_mu=0.5, delta_g=8.0, alpha=1.0, beta=1.0, kappa=10.0, Cp=1.0,
        gamma=1e3, dt_constant=0.1, Tf=0.12, theta0="elliptic",
    ),
}

_FLOAT_KEYS = set(PHYSICAL_KEYS) | {"gamma", "dt_constant", "Tf", "report_q"}
_INT_KEYS = {"mesh_nx", "mesh_ny", "mesh_n", "snapshot_every"}
_KEYS = _FLOAT_KEYS | _INT_KEYS | {
    "preset", "theta0", "output_dir", "sample_times", "yield_coupling", "convection",
}


def _convert(key, raw, line):
    try:
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key == "sample_times":
            return tuple(float(s) for s in raw.split(",") if s.strip())
        if key == "convection":
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
    except ValueError:
        raise ParseError(f"bad value {raw!r} for {key}", line) from None
    return raw


def _parse_theta0(raw, line):
    raw = raw.strip()
    if raw == "elliptic":
        return "elliptic", 0.0
    if raw.startswith("constant(") and raw.endswith(")"):
        try:
            return "constant", float(raw[len("constant("):-1])
        except ValueError:
            pass
    raise ParseError(f"theta0 must be 'elliptic' or 'constant(value)', got {raw!r}", line)


def _read_pairs(text):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"expected 'key = value', got {body!r}", lineno)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _KEYS:
            raise ParseError(f"unknown key {key!r}", lineno)
        if not raw:
            raise ParseError(f"missing value for {key}", lineno)
        pairs.append((key, raw, lineno))
    return pairs


def build_config(values):
    """Assemble and validate a :class:`RunConfig` from a flat key -> value dict."""
    values = dict(values)
    missing = [k for k in PHYSICAL_KEYS if k not in values]
    if missing:
        raise ValidationError(f"missing physical parameter(s): {', '.join(missing)}")
    try:
        phys = PhysicalParams(**{k: values.pop(k) for k in PHYSICAL_KEYS})
        reg = RegularizationParams(values.pop("gamma", 1e3))
    except ValueError as err:
        raise ValidationError(str(err)) from err
    n = values.pop("mesh_n", DEFAULT_MESH)
    mode, th_val = values.pop("theta0", ("elliptic", 0.0))
    cfg = RunConfig(
        mesh_nx=values.pop("mesh_nx", n),
        mesh_ny=values.pop("mesh_ny", n),
        physical=phys,
        reg=reg,
        theta0_mode=mode,
        theta0_value=th_val,
        **values,
    )
    return cfg.validate()


def preset_values(name):
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    vals = dict(PRESETS[name])
    vals["theta0"] = _parse_theta0(vals["theta0"], None)
    return vals


def parse_config(text):
    """Parse configuration text into a validated :class:`RunConfig`."""
    values = {}
    for key, raw, lineno in _read_pairs(text):
        if key == "preset":
            if values:
                raise ParseError("preset must come before other keys", lineno)
            try:
                values.update(preset_values(raw))
            except ValidationError as err:
                raise ParseError(str(err), lineno) from None
            continue
        if key == "theta0":
            values[key] = _parse_theta0(raw, lineno)
        else:
            values[key] = _convert(key, raw, lineno)
    return build_config(values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def preset(name, **overrides):
    """Validated preset with optional overrides (e.g. ``mesh_n=24``)."""
    vals = preset_values(name)
    vals.update(overrides)
    return build_config(vals)


def echo(cfg):
    """Every resolved value as config text; derived quantities as comments."""
    p = cfg.physical
    th = "elliptic" if cfg.theta0_mode == "elliptic" else f"constant({cfg.theta0_value!r})"
    lines = [
        f"mesh_nx = {cfg.mesh_nx}",
        f"mesh_ny = {cfg.mesh_ny}",
    ]
    lines += [f"{k} = {getattr(p, k)!r}" for k in PHYSICAL_KEYS]
    lines += [
        f"gamma = {cfg.reg.gamma!r}",
        f"dt_constant = {cfg.dt_constant!r}",
        f"Tf = {cfg.Tf!r}",
        f"theta0 = {th}",
        f"snapshot_every = {cfg.snapshot_every}",
        f"output_dir = {cfg.output_dir}",
        f"report_q = {cfg.report_q!r}",
        "sample_times = " + ",".join(repr(float(t)) for t in cfg.sample_times),
        f"yield_coupling = {cfg.yield_coupling}",
        f"convection = {'true' if cfg.convection else 'false'}",
    ]
    mesh = cfg.mesh()
    tg = cfg.time_grid(mesh)
    lines += [
        f"# derived: h = {mesh.h!r}",
        f"# derived: dt = {tg.dt!r}",
        f"# derived: n_steps = {tg.n_steps}",
    ]
    return "\n".join(lines) + "\n"


def snapshot_indices(cfg, times):
    """Record indices to snapshot, given the record times of a run.

    ``snapshot_every > 0`` takes every such record plus the last one;
    otherwise ten records nearest to ``Tf * (0, 1/16, 1/8, 1/4, 3/8, 1/2, 5/8,
    3/4, 7/8, 1)``, which include the instants ``Tf/8, Tf/4, Tf/2, Tf``.
    """
    times = np.asarray(times, dtype=float)
    last = len(times) - 1
    if cfg.snapshot_every > 0:
        idx = set(range(0, len(times), cfg.snapshot_every))
        idx.add(last)
        return sorted(idx)
    fractions = (0.0, 1 / 16, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0)
    t_end = times[-1]
    return sorted({int(np.argmin(np.abs(times - f * t_end))) for f in fractions})
