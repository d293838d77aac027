"""Flat ``key = value`` experiment configuration.

Resolution order is command-line flag, then config file, then built-in
default. Unknown keys are rejected.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

from .clutter import SpectrumParams
from .losses import LossConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def parse_int_list(text: str) -> tuple[int, ...]:
    """``"1,2,5-7"`` -> (1, 2, 5, 6, 7)."""
    out: list[int] = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _opt_int(text: str) -> int | None:
    return None if str(text).lower() in ("", "none") else int(text)


def _opt_str(text: str) -> str | None:
    return None if str(text).lower() in ("", "none") else str(text)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_sp = SpectrumParams()
_tc = TrainConfig()

# key -> (default, parser)
SCHEMA: dict[str, tuple[Any, Callable[[str], Any]]] = {
    # training
    "mode": ("wlssgan", str),
    "epochs": (_tc.epochs, int),
    "iterations": (None, _opt_int),
    "batch_size": (_tc.batch_size, int),
    "lr": (_tc.lr, float),
    "beta1": (_tc.betas[0], float),
    "beta2": (_tc.betas[1], float),
    "alpha": (0.7, float),
    "beta": (0.3, float),
    "lmul": ((1, 2, 3, 4, 5, 6, 7), parse_int_list),
    "adversarial": ("non_saturating", str),
    "nlab": (_tc.n_lab, int),
    "seed": (0, int),
    "steady_window_frac": (_tc.steady_window_frac, float),
    "eval_every": (_tc.eval_every, int),
    "precision": (_tc.precision, str),
    "checkpoint_every": (0, int),
    # data
    "data": (None, _opt_str),
    "per_class": (1000, int),
    "train_frac": (0.7, float),
    "bragg_offset": (_sp.bragg_offset, float),
    "peak_width": (_sp.peak_width, float),
    "amp_jitter": (_sp.amp_jitter, float),
    "doppler_jitter": (_sp.doppler_jitter, float),
    "noise_floor": (_sp.noise_floor, float),
    # outputs / execution
    "out": ("out", str),
    "workers": (1, int),
    "seeds": (1, int),
    "checkpoint": (None, _opt_str),
    "n_synth": (2100, int),
    "k": (5, int),
    "threshold": (0.95, float),
    "plots": (True, _bool),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = SCHEMA[key][1](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def load_config(path) -> dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), str(p))


def resolve(file_values: dict[str, Any] | None = None, flag_values: dict[str, Any] | None = None) -> dict[str, Any]:
    """Defaults, overridden by file values, overridden by non-None flags."""
    cfg = {k: default for k, (default, _) in SCHEMA.items()}
    for layer in (file_values or {}, flag_values or {}):
        for k, v in layer.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key {k!r}")
            if v is not None:
                cfg[k] = SCHEMA[k][1](v) if isinstance(v, str) else v
    return cfg


def spectrum_params(cfg: dict[str, Any]) -> SpectrumParams:
    p = SpectrumParams(
        bragg_offset=cfg["bragg_offset"],
        peak_width=cfg["peak_width"],
        amp_jitter=cfg["amp_jitter"],
        doppler_jitter=cfg["doppler_jitter"],
        noise_floor=cfg["noise_floor"],
    )
    p.validate()
    return p


def loss_config(cfg: dict[str, Any]) -> LossConfig:
    return LossConfig(alpha=cfg["alpha"], beta=cfg["beta"], l_mul=tuple(cfg["lmul"]), adversarial=cfg["adversarial"])


def train_config(cfg: dict[str, Any], checkpoint_dir: str | None = None) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        betas=(cfg["beta1"], cfg["beta2"]),
        loss=loss_config(cfg),
        n_lab=cfg["nlab"],
        seed=cfg["seed"],
        steady_window_frac=cfg["steady_window_frac"],
        eval_every=cfg["eval_every"],
        precision=cfg["precision"],
        iterations=cfg["iterations"],
        checkpoint_every=cfg["checkpoint_every"],
        checkpoint_dir=checkpoint_dir,
    )
