"""
Sectioned ``key = value`` run configuration.

Example::

    [run]
    mode = square-convergence
    out = results

    [mesh]
    coarse_n = 16
    fine_n = 128

    [pase]
    nev = 12

Unknown sections or keys, missing required keys and malformed values raise
:class:`~pase.errors.ConfigError` naming the offending key.  A key given
twice keeps its last value and leaves a record in ``RunConfig.warnings``.
In ``adaptive-lshape`` mode ``pase.nev`` defaults to 1.
"""
import configparser
from dataclasses import dataclass, field
from typing import List, Optional

from .errors import ConfigError

__all__ = ["RunConfig", "parse_config", "MODES", "SCHEMA"]

MODES = ("square-convergence", "precond-compare", "batch", "adaptive-lshape", "algebraic")


def _int_list(text):
    return [int(t) for t in text.replace(",", " ").split()]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean: %r" % text)


def _str(text):
    return text.strip()


# section -> key -> (attribute, converter, default)
SCHEMA = {
    "run": {
        "mode": ("mode", _str, None),
        "seed": ("seed", int, 0),
        "out": ("out", _str, "pase-out"),
        "threads": ("threads", int, None),
    },
    "mesh": {
        "coarse_n": ("coarse_n", int, 16),
        "fine_n": ("fine_n", _int_list, [128]),
        "problem": ("problem", _str, "laplace"),
    },
    "pase": {
        "nev": ("nev", int, 12),
        "tol": ("tol", float, 1e-8),
        "max_outer": ("max_outer", int, 30),
        "precond": ("precond", _str, "none"),
        "cg_max_iters": ("cg_max_iters", int, 40),
        "cg_rel_tol": ("cg_rel_tol", float, 1e-12),
        "guards": ("guards", int, None),
    },
    "batch": {
        "sizes": ("batch_sizes", _int_list, None),
        "oversample": ("oversample", int, None),
        "shift_sign": ("shift_sign", int, 1),
        "workers": ("workers", int, 1),
        "compare": ("compare_unbatched", _bool, False),
    },
    "adaptive": {
        "n0": ("n0", int, 16),
        "rounds": ("rounds", int, 12),
        "fraction": ("fraction", float, 0.4),
        "oracle": ("oracle", _bool, True),
        "indicators": ("dump_indicators", _bool, False),
    },
    "algebraic": {
        "A": ("matrix_A", _str, None),
        "B": ("matrix_B", _str, None),
        "prolongation": ("prolongation", _str, None),
        "coarse_A": ("coarse_A", _str, None),
        "coarse_B": ("coarse_B", _str, None),
    },
}


@dataclass
class RunConfig:
    mode: str = ""
    seed: int = 0
    out: str = "pase-out"
    threads: Optional[int] = None
    coarse_n: int = 16
    fine_n: List[int] = field(default_factory=lambda: [128])
    problem: str = "laplace"
    nev: int = 12
    tol: float = 1e-8
    max_outer: int = 30
    precond: str = "none"
    cg_max_iters: int = 40
    cg_rel_tol: float = 1e-12
    guards: Optional[int] = None
    batch_sizes: Optional[List[int]] = None
    oversample: Optional[int] = None
    shift_sign: int = 1
    workers: int = 1
    compare_unbatched: bool = False
    n0: int = 16
    rounds: int = 12
    fraction: float = 0.4
    oracle: bool = True
    dump_indicators: bool = False
    matrix_A: Optional[str] = None
    matrix_B: Optional[str] = None
    prolongation: Optional[str] = None
    coarse_A: Optional[str] = None
    coarse_B: Optional[str] = None
    warnings: List[str] = field(default_factory=list)

    def validate(self):
        """Check cross-field constraints; raises ConfigError naming the key."""
        if not self.mode:
            raise ConfigError("run.mode", "missing required key")
        if self.mode not in MODES:
            raise ConfigError("run.mode", "unknown mode %r (expected one of %s)" % (self.mode, ", ".join(MODES)))
        if not 0 < self.tol < 1:
            raise ConfigError("pase.tol", "must lie in (0, 1)")
        if self.nev < 1:
            raise ConfigError("pase.nev", "must be >= 1")
        if self.max_outer < 1:
            raise ConfigError("pase.max_outer", "must be >= 1")
        if self.precond not in ("none", "A", "B", "B-A"):
            raise ConfigError("pase.precond", "must be one of none, A, B, B-A")
        if self.cg_max_iters < 1:
            raise ConfigError("pase.cg_max_iters", "must be >= 1")
        if not self.cg_rel_tol > 0:
            raise ConfigError("pase.cg_rel_tol", "must be positive")
        if self.problem not in ("laplace", "variable"):
            raise ConfigError("mesh.problem", "must be laplace or variable")
        if self.coarse_n < 1 or not self.fine_n:
            raise ConfigError("mesh.coarse_n", "mesh sizes must be positive")
        for n in self.fine_n:
            ratio = n // self.coarse_n
            if ratio < 1 or ratio * self.coarse_n != n or ratio & (ratio - 1):
                raise ConfigError("mesh.fine_n", "%d is not coarse_n times a power of two" % n)
        if self.threads is not None and self.threads < 1:
            raise ConfigError("run.threads", "must be >= 1")
        if self.mode == "batch":
            if not self.batch_sizes:
                raise ConfigError("batch.sizes", "missing required key for batch mode")
            if sum(self.batch_sizes) != self.nev or min(self.batch_sizes) < 1:
                raise ConfigError("batch.sizes", "sizes must be >= 1 and sum to nev=%d" % self.nev)
            if self.shift_sign not in (1, -1):
                raise ConfigError("batch.shift_sign", "must be 1 or -1")
            if self.oversample is not None and self.oversample < 1:
                raise ConfigError("batch.oversample", "must be >= 1")
        if self.mode == "adaptive-lshape":
            if not 0 < self.fraction <= 1:
                raise ConfigError("adaptive.fraction", "must lie in (0, 1]")
            if self.rounds < 0 or self.n0 < 1:
                raise ConfigError("adaptive.rounds", "rounds must be >= 0 and n0 >= 1")
        if self.mode == "algebraic":
            for key, val in (("A", self.matrix_A), ("B", self.matrix_B), ("prolongation", self.prolongation)):
                if not val:
                    raise ConfigError("algebraic." + key, "missing required key for algebraic mode")
            if (self.coarse_A is None) != (self.coarse_B is None):
                raise ConfigError("algebraic.coarse_A", "coarse_A and coarse_B must be given together")
        return self


class _Recording(dict):
    # option dict that remembers keys assigned twice while parsing
    duplicates: list

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.duplicates = []

    def __setitem__(self, key, value):
        if isinstance(value, list) and isinstance(self.get(key), list):
            self.duplicates.append(key)
        super().__setitem__(key, value)


def parse_config(text, overrides=None):
    """Parse configuration text into a validated :class:`RunConfig`.

    Parameters
    ----------
    text : str
    overrides : dict, optional
        ``"section.key" -> value`` strings applied after parsing (command
        line flags).

    Raises
    ------
    ConfigError
    """
    cp = configparser.ConfigParser(strict=False, interpolation=None, dict_type=_Recording,
                                   default_section="__defaults__", inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("<text>", "key outside of any [section] on line %d" % exc.lineno) from exc
    except configparser.Error as exc:
        raise ConfigError("<text>", str(exc).splitlines()[0]) from exc

    cfg = RunConfig()
    for name, opts in cp._sections.items():
        for key in opts.duplicates:
            cfg.warnings.append("duplicate key %s.%s: last value wins" % (name, key))
    raw = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        for key, value in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError("%s.%s" % (section, key), "unknown key")
            raw["%s.%s" % (section, key)] = value
    raw.update(overrides or {})
    for dotted, value in raw.items():
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(dotted, "unknown key")
        attr, conv, _ = SCHEMA[section][key]
        try:
            setattr(cfg, attr, conv(value) if isinstance(value, str) else value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(dotted, "bad value %r (%s)" % (value, exc)) from exc
    if cfg.mode == "adaptive-lshape" and "pase.nev" not in raw:
        # the adaptive loop targets the first eigenpair unless told otherwise
        cfg.nev = 1
    return cfg.validate()
