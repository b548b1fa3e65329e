"""Plain ``key = value`` run configuration.

One setting per line; ``#`` starts a comment; blank lines are ignored.  Only
``map`` and ``ell`` are required.  Example::

    map = logistic
    params = 4.0
    ell = 2
    seed = 7
    stages = analyze, induce, returnmap, tower, corr, clt
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, InvalidMap
from .maps import FAMILIES, N_PARAMS, canonical_family

STAGES = ("analyze", "induce", "returnmap", "tower", "corr", "clt")
DEPENDS = {"tower": ("returnmap",)}
SEED_LIMIT = 2 ** 64


@dataclass(frozen=True)
class RunConfig:
    """Validated run settings.

    ``params`` empty with ``fibonacci = true`` asks for the Fibonacci
    parameter of the family inside ``fib_bracket``.
    """

    family: str
    ell: float
    params: tuple[float, ...] = ()
    fibonacci: bool = False
    fib_bracket: tuple[float, float] = (1.8, 2.0)
    fib_k: int = 12
    N: int = 10_000
    gamma: str = "equalizing"
    n_max_induce: int = 1000
    n_max_return: int = 2000
    samples_induce: int = 4096
    samples_return: int = 16_384
    epsilon: float | None = None
    P_max: int = 10_000
    seed: int = 0
    out: str = "towerdyn-out"
    stages: tuple[str, ...] = STAGES
    density_samples: int = 10_000_000
    corr_samples: int = 10_000_000
    corr_n_max: int = 20
    phi: str = "abs:0.3"
    psi: str = "abs:0.3"
    clt_phi: str = "x"
    clt_block: int = 10_000
    clt_trials: int = 10_000
    holder_pairs: int = 10_000
    source: str = field(default="", compare=False)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def enabled(self, stage: str) -> bool:
        return stage in self.stages


_COUNTS = ("fib_k", "N", "n_max_induce", "n_max_return", "samples_induce", "samples_return",
           "P_max", "density_samples", "corr_samples", "corr_n_max", "clt_block",
           "clt_trials", "holder_pairs")
_KEYS = {f.name for f in fields(RunConfig)} - {"family", "source"} | {"map"}


def _floats(text: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from exc


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse configuration text.

    Raises:
        ConfigError: unknown or repeated keys, malformed values, a missing
            ``map`` or ``ell``, or stages without their dependencies.
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: repeated key {key!r}")
        raw[key] = value
    for req in ("map", "ell"):
        if req not in raw:
            raise ConfigError(f"{source}: missing required key {req!r}")
    try:
        family = canonical_family(raw.pop("map"))
    except InvalidMap as exc:
        raise ConfigError(f"{source}: unknown map family; known: {sorted(FAMILIES)}") from exc
    kw: dict = {"family": family, "source": source}
    for key, value in raw.items():
        if key == "params":
            kw[key] = _floats(value, key)
        elif key == "fib_bracket":
            br = _floats(value, key)
            if len(br) != 2 or not br[0] < br[1]:
                raise ConfigError(f"{key}: expected two increasing numbers")
            kw[key] = br
        elif key == "fibonacci":
            kw[key] = _bool(value, key)
        elif key == "stages":
            st = tuple(s.strip() for s in value.split(",") if s.strip())
            bad = [s for s in st if s not in STAGES]
            if bad:
                raise ConfigError(f"stages: unknown {bad}; known {list(STAGES)}")
            kw[key] = tuple(s for s in STAGES if s in st)
        elif key in _COUNTS or key == "seed":
            try:
                kw[key] = int(value)
            except ValueError as exc:
                raise ConfigError(f"{key}: expected an integer, got {value!r}") from exc
        elif key in ("ell", "epsilon"):
            nums = _floats(value, key)
            if len(nums) != 1:
                raise ConfigError(f"{key}: expected one number, got {value!r}")
            kw[key] = nums[0]
        else:
            kw[key] = value
    cfg = RunConfig(**kw)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if not 1.0 < cfg.ell < float("inf"):
        raise ConfigError("ell must lie in (1, inf)")
    for key in _COUNTS:
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key} must be >= 1")
    if not 0 <= cfg.seed < SEED_LIMIT:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if cfg.epsilon is not None and not cfg.epsilon > 0:
        raise ConfigError("epsilon must be positive")
    if cfg.gamma != "equalizing":
        raise ConfigError("gamma: only the equalizing strategy can be configured")
    if cfg.fibonacci:
        if cfg.params:
            raise ConfigError("fibonacci = true takes its parameter from the search; drop params")
    elif len(cfg.params) != N_PARAMS[cfg.family]:
        raise ConfigError(f"map {cfg.family} takes {N_PARAMS[cfg.family]} parameter(s)")
    for stage, needs in DEPENDS.items():
        if cfg.enabled(stage) and not all(cfg.enabled(n) for n in needs):
            raise ConfigError(f"stage {stage} requires {', '.join(needs)}")


def load_config(path: str | os.PathLike, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Read a config file; ``OUTPUT_DIR`` and then ``out`` override its output directory."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    cfg = parse_config(text, str(p))
    over = {}
    if os.environ.get("OUTPUT_DIR"):
        over["out"] = os.environ["OUTPUT_DIR"]
    if out is not None:
        over["out"] = out
    if seed is not None:
        if not 0 <= seed < SEED_LIMIT:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        over["seed"] = int(seed)
    return replace(cfg, **over) if over else cfg
