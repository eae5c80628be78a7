"""Run configuration: one flat key=value file drives every command."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from . import rng
from .errors import ConfigError, ParameterError


@dataclass(frozen=True)
class RunConfig:
    """All tunables of an experiment.

    ``eta``/``T`` may be given directly or left unset, in which case
    they resolve to ``eta_mult / L_bar`` and ``T_mult * N`` against the
    generated instance.  Unset seeds derive deterministically from the
    master seed.
    """

    # instance
    N: int = 40
    d: int = 8
    m: int = 10
    rows: int = 80
    regularizer: str = "elastic_net"
    lambda1: float = 0.1
    lambda2: float = 0.1
    x_scale: float = 0.1
    # algorithm
    eta: float | None = None
    eta_mult: float = 0.1
    T: int | None = None
    T_mult: float = 2.0
    S: int = 200
    # quantization
    bits: int = 11
    kappa: float = 0.97
    C_a: float = 50.0
    C_b: float = 300.0
    C_c: float = 50.0
    C_d: float = 400.0
    unquantized: bool = False
    # seeds and output
    seed_master: int = 1
    seed_instance: int | None = None
    seed_ell: int | None = None
    seed_dither: int | None = None
    out_dir: str = "out"
    force: bool = False

    def resolved_seeds(self) -> dict:
        master = self.seed_master
        return {
            "seed_master": master,
            "seed_instance": (self.seed_instance if self.seed_instance
                              is not None else rng.derive_key(master, "instance")),
            "seed_ell": (self.seed_ell if self.seed_ell is not None
                         else rng.derive_key(master, "ell")),
            "seed_dither": (self.seed_dither if self.seed_dither is not None
                            else rng.derive_key(master, "dither-seed")),
        }

    def resolved_eta(self, L_bar: float) -> float:
        return self.eta if self.eta is not None else self.eta_mult / L_bar

    def resolved_T(self) -> int:
        return self.T if self.T is not None else int(round(self.T_mult * self.N))


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}


def _convert(name: str, text: str, kind):
    if kind is bool:
        try:
            return _BOOL_WORDS[text.lower()]
        except KeyError:
            raise ConfigError(f"bad boolean for {name}: {text!r}") from None
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


_FIELD_KIND = {
    "N": int, "d": int, "m": int, "rows": int, "regularizer": str,
    "lambda1": float, "lambda2": float, "x_scale": float,
    "eta": float, "eta_mult": float, "T": int, "T_mult": float, "S": int,
    "bits": int, "kappa": float, "C_a": float, "C_b": float, "C_c": float,
    "C_d": float, "unquantized": bool,
    "seed_master": int, "seed_instance": int, "seed_ell": int,
    "seed_dither": int, "out_dir": str, "force": bool,
}


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``key = value`` lines; '#' starts a comment.

    Unknown keys raise :class:`ConfigError` carrying the offending
    line, which the CLI maps to exit code 2.
    """
    cfg = base or RunConfig()
    updates = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            raise ConfigError(f"malformed line: {raw!r}", line=raw)
        if key not in _FIELD_KIND:
            raise ConfigError(f"unknown key: {raw!r}", line=raw)
        updates[key] = _convert(key, value, _FIELD_KIND[key])
    return replace(cfg, **updates)


def parse_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


_NON_IDENTITY = {"out_dir", "force"}  # do not affect results


def config_lines(cfg: RunConfig) -> str:
    """Canonical serialization of the run identity.

    Sorted keys; unset fields and fields that cannot change the
    numbers (output path, force flag) are skipped, so the hash pins
    exactly what reproduces a run.
    """
    out = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        if f.name in _NON_IDENTITY:
            continue
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        out.append(f"{f.name} = {value}")
    return "\n".join(out) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(config_lines(cfg).encode("utf-8")).hexdigest()[:16]


def validate_quantization(cfg: RunConfig) -> None:
    if cfg.unquantized:
        return
    if cfg.bits < 2:
        raise ParameterError(f"bits = {cfg.bits} < 2")
    if not 0.0 < cfg.kappa < 1.0:
        raise ParameterError(f"kappa = {cfg.kappa} outside (0, 1)")
    for name in ("C_a", "C_b", "C_c", "C_d"):
        if getattr(cfg, name) <= 0:
            raise ParameterError(f"{name} = {getattr(cfg, name)} <= 0")


def validate_step(cfg: RunConfig, eta: float, L_bar: float) -> None:
    if cfg.force:
        return
    if not 0.0 < eta * 4.0 * L_bar < 1.0:
        raise ParameterError(
            f"eta*4*L_bar = {eta * 4.0 * L_bar:.6g} >= 1 "
            "(pass --force to run anyway)")
