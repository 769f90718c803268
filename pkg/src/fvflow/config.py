"""Case configuration: dataclass plus INI serialization.

A config file fully determines a run given its mesh.  Parsing is strict:
unknown sections or keys raise ConfigError naming the offender, tolerances
and step sizes must be positive, and every boundary entry must parse into
one of the known condition types.  The [boundary] section uses keys of the
form <patch>.u / <patch>.p, e.g.

    [boundary]
    lid.u = fixed_value 1 0 0
    lid.p = zero_gradient
"""

import configparser
from dataclasses import dataclass, field
from io import StringIO


class ConfigError(Exception):
    pass


@dataclass
class BoundarySpec:
    """Textual boundary condition for one patch: tagged tuples.

    u: (fixed_value, vx, vy, vz) | (no_slip,) | (sine_inlet, u0, freq)
       | (mass_flow, rate, rho) | (zero_gradient,) | (empty,)
    p: (fixed_value, value) | (zero_gradient,) | (empty,)
    """

    u: tuple
    p: tuple


@dataclass
class SampleLine:
    name: str
    p0: tuple
    p1: tuple
    n: int


@dataclass
class CaseConfig:
    # physics
    nu: float = 1e-6  # kinematic viscosity, m^2/s
    rho: float = 1000.0  # density, kg/m^3 (only mass-flow inlets use it)
    # scheme
    convection: str = "upwind"  # upwind | linear
    nonorth_correction: bool = True
    limiter: float = 1.0  # scales the explicit non-orthogonal term
    # solvers; the pressure residual left by cg is the continuity error of
    # the corrected fluxes, so cg_tol stays well below the 1e-8 budget, and
    # inner tolerances sit >= two decades under outer_tol or the outer
    # residuals plateau before reaching it
    cg_tol: float = 1e-10
    bicgstab_tol: float = 1e-8
    max_iters: int = 2000
    # coupling
    algorithm: str = "simple"  # simple | piso
    alpha_u: float = 0.7
    alpha_p: float = 0.3
    n_correctors: int = 2
    n_nonorth_correctors: int = 0
    dt: float = 1e-3
    end_time: float = 1.0
    outer_tol: float = 1e-5
    max_outer: int = 2000
    pressure_ref_cell: int = 0
    pressure_ref_value: float = 0.0
    # io
    write_interval: int = 0  # snapshots every N steps/iterations; 0 = final only
    samples: list = field(default_factory=list)
    # boundary
    boundary: dict = field(default_factory=dict)  # patch name -> BoundarySpec


# key -> (section, parse, format); single source of truth for the INI layout
def _bool(s):
    s = s.strip().lower()
    if s in ("on", "true", "yes", "1"):
        return True
    if s in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_SCHEMA = {
    "nu": ("physics", float),
    "rho": ("physics", float),
    "convection": ("scheme", str),
    "nonorth_correction": ("scheme", _bool),
    "limiter": ("scheme", float),
    "cg_tol": ("solvers", float),
    "bicgstab_tol": ("solvers", float),
    "max_iters": ("solvers", int),
    "algorithm": ("coupling", str),
    "alpha_u": ("coupling", float),
    "alpha_p": ("coupling", float),
    "n_correctors": ("coupling", int),
    "n_nonorth_correctors": ("coupling", int),
    "dt": ("coupling", float),
    "end_time": ("coupling", float),
    "outer_tol": ("coupling", float),
    "max_outer": ("coupling", int),
    "pressure_ref_cell": ("coupling", int),
    "pressure_ref_value": ("coupling", float),
    "write_interval": ("io", int),
}

POSITIVE_KEYS = (
    "nu", "rho", "cg_tol", "bicgstab_tol", "max_iters", "dt", "end_time",
    "outer_tol",
)

_U_ARITY = {"fixed_value": 3, "no_slip": 0, "sine_inlet": 2, "mass_flow": 2,
            "zero_gradient": 0, "empty": 0}
_P_ARITY = {"fixed_value": 1, "zero_gradient": 0, "empty": 0}


def _parse_bc(text, arity, where):
    parts = text.split()
    if not parts or parts[0] not in arity:
        raise ConfigError(f"{where}: unknown condition {text!r}")
    kind, args = parts[0], parts[1:]
    if len(args) != arity[kind]:
        raise ConfigError(
            f"{where}: {kind} takes {arity[kind]} numbers, got {len(args)}"
        )
    try:
        vals = tuple(float(a) for a in args)
    except ValueError:
        raise ConfigError(f"{where}: non-numeric argument in {text!r}") from None
    if kind == "fixed_value" and arity is _U_ARITY:
        return (kind, vals)
    return (kind, *vals)


def validate_config(cfg: CaseConfig):
    for key in POSITIVE_KEYS:
        if getattr(cfg, key) <= 0:
            raise ConfigError(f"{key} must be positive")
    if cfg.convection not in ("upwind", "linear"):
        raise ConfigError(f"convection must be upwind or linear, got {cfg.convection!r}")
    if cfg.algorithm not in ("simple", "piso"):
        raise ConfigError(f"algorithm must be simple or piso, got {cfg.algorithm!r}")
    if not 0.0 < cfg.alpha_u <= 1.0 or not 0.0 < cfg.alpha_p <= 1.0:
        raise ConfigError("relaxation factors must lie in (0, 1]")
    if cfg.n_correctors < 1:
        raise ConfigError("n_correctors must be at least 1")
    # max_outer 0 is a legitimate request to write the initial state only
    if cfg.n_nonorth_correctors < 0 or cfg.write_interval < 0 or cfg.max_outer < 0:
        raise ConfigError("counts must be non-negative")
    if not 0.0 <= cfg.limiter <= 1.0:
        raise ConfigError("limiter must lie in [0, 1]")


def parse_config(text: str) -> CaseConfig:
    cp = configparser.ConfigParser(interpolation=None)
    # patch names live in option keys (patch.u) and must keep their case
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    cfg = CaseConfig()
    known_sections = {s for s, _ in _SCHEMA.values()} | {"boundary"}
    for section in cp.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown section [{section}]")
    for key, (section, conv) in _SCHEMA.items():
        if cp.has_option(section, key):
            raw = cp.get(section, key)
            try:
                setattr(cfg, key, conv(raw))
            except ValueError:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
    # reject unknown keys per section
    for section in cp.sections():
        if section == "boundary":
            continue
        for key in cp.options(section):
            if key.startswith("sample_") and section == "io":
                continue
            if key not in _SCHEMA or _SCHEMA[key][0] != section:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    if cp.has_section("io"):
        for key in cp.options("io"):
            if not key.startswith("sample_"):
                continue
            parts = cp.get("io", key).split()
            if len(parts) != 7:
                raise ConfigError(f"[io] {key}: expected 'x0 y0 z0 x1 y1 z1 n'")
            try:
                nums = [float(p) for p in parts[:6]]
                npts = int(parts[6])
            except ValueError:
                raise ConfigError(f"[io] {key}: non-numeric entry") from None
            if npts < 2:
                raise ConfigError(f"[io] {key}: need at least 2 sample points")
            cfg.samples.append(
                SampleLine(key[len("sample_"):], tuple(nums[:3]), tuple(nums[3:]), npts)
            )
    if cp.has_section("boundary"):
        for key in cp.options("boundary"):
            if "." not in key:
                raise ConfigError(f"[boundary] {key}: expected <patch>.u or <patch>.p")
            patch, fieldname = key.rsplit(".", 1)
            spec = cfg.boundary.setdefault(
                patch, BoundarySpec(u=("no_slip",), p=("zero_gradient",))
            )
            where = f"[boundary] {key}"
            if fieldname == "u":
                spec.u = _parse_bc(cp.get("boundary", key), _U_ARITY, where)
            elif fieldname == "p":
                spec.p = _parse_bc(cp.get("boundary", key), _P_ARITY, where)
            else:
                raise ConfigError(f"{where}: field must be u or p")
    validate_config(cfg)
    return cfg


def _format_bc(spec_tuple):
    kind, *rest = spec_tuple
    flat = []
    for r in rest:
        flat.extend(r) if isinstance(r, tuple) else flat.append(r)
    return " ".join([kind] + [f"{v:g}" for v in flat])


def format_config(cfg: CaseConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for key, (section, conv) in _SCHEMA.items():
        if not cp.has_section(section):
            cp.add_section(section)
        val = getattr(cfg, key)
        if conv is _bool:
            val = "on" if val else "off"
        elif conv is float:
            val = f"{val:.17g}"
        cp.set(section, key, str(val))
    for s in cfg.samples:
        cp.set("io", f"sample_{s.name}",
               " ".join(f"{v:g}" for v in (*s.p0, *s.p1)) + f" {s.n}")
    if cfg.boundary:
        cp.add_section("boundary")
        for patch in sorted(cfg.boundary):
            cp.set("boundary", f"{patch}.u", _format_bc(cfg.boundary[patch].u))
            cp.set("boundary", f"{patch}.p", _format_bc(cfg.boundary[patch].p))
    out = StringIO()
    cp.write(out)
    return out.getvalue()


def read_config(path) -> CaseConfig:
    with open(path) as f:
        return parse_config(f.read())


def write_config(cfg: CaseConfig, path):
    with open(path, "w") as f:
        f.write(format_config(cfg))
