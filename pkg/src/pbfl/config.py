"""Experiment configuration: a strict JSON schema with field-path errors.

``load_config`` reads a JSON object, fills documented defaults, rejects
unknown keys, and validates every range constraint before anything runs.
Error messages always name the offending field by its dotted path
(``defense.theta``, ``dataset.path``) so a bad config is a one-line fix.

``normalize`` maps a raw dict onto the canonical fully-populated dict and
``serialize`` maps a validated :class:`ExperimentConfig` back onto the same
canonical form, so ``serialize(config_from_dict(x)) == normalize(x)`` holds
for every valid input.
"""

import json
from dataclasses import dataclass

from . import fhe
from .attacks import ATTACK_KINDS, KNOWLEDGE_MODES, AttackSpec
from .defense import DefenseConfig

LEARNERS = ("logreg", "mlp")
PIPELINES = ("encrypted", "mirror")
DATASET_KINDS = ("csv", "synthetic")


def _require(cond, path, detail):
    if not cond:
        raise ValueError(f"{path}: {detail}")


def _as_int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValueError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _as_float(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_str(value, path, choices=None):
    if not isinstance(value, str):
        raise ValueError(f"{path}: expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ValueError(f"{path}: must be one of {sorted(choices)}, got {value!r}")
    return value


def _as_bool(value, path):
    if not isinstance(value, bool):
        raise ValueError(f"{path}: expected true or false, got {value!r}")
    return value


def _reject_unknown(raw, known, path):
    for key in raw:
        if key not in known:
            where = f"{path}.{key}" if path else key
            raise ValueError(f"{where}: unknown key")


def _normalize_dataset(raw):
    if not isinstance(raw, dict):
        raise ValueError(f"dataset: expected an object, got {raw!r}")
    kind = _as_str(raw.get("kind", "synthetic"), "dataset.kind", DATASET_KINDS)
    out = {"kind": kind}
    common = {"kind", "test_fraction", "feature_scale"}
    if kind == "csv":
        _reject_unknown(raw, common | {"path"}, "dataset")
        if "path" not in raw:
            raise ValueError("dataset.path: required for kind 'csv'")
        out["path"] = _as_str(raw["path"], "dataset.path")
    else:
        _reject_unknown(
            raw, common | {"examples", "features", "classes", "separation"}, "dataset"
        )
        out["examples"] = _as_int(raw.get("examples", 600), "dataset.examples", 2)
        out["features"] = _as_int(raw.get("features", 16), "dataset.features", 1)
        out["classes"] = _as_int(raw.get("classes", 4), "dataset.classes", 2)
        out["separation"] = _as_float(
            raw.get("separation", 2.0), "dataset.separation"
        )
        _require(out["separation"] > 0, "dataset.separation", "must be positive")
    out["test_fraction"] = _as_float(
        raw.get("test_fraction", 0.2), "dataset.test_fraction"
    )
    _require(
        0.0 < out["test_fraction"] < 1.0,
        "dataset.test_fraction",
        f"must lie in (0, 1), got {out['test_fraction']}",
    )
    out["feature_scale"] = _as_float(
        raw.get("feature_scale", 1.0), "dataset.feature_scale"
    )
    _require(out["feature_scale"] > 0, "dataset.feature_scale", "must be positive")
    return out


def _normalize_attack(raw):
    if not isinstance(raw, dict):
        raise ValueError(f"attack: expected an object, got {raw!r}")
    _reject_unknown(raw, {"kind", "attack_ratio", "magnitude", "knowledge"}, "attack")
    out = {
        "kind": _as_str(raw.get("kind", "none"), "attack.kind", ATTACK_KINDS),
        "attack_ratio": _as_float(raw.get("attack_ratio", 0.0), "attack.attack_ratio"),
        "magnitude": _as_float(raw.get("magnitude", 1.0), "attack.magnitude"),
        "knowledge": _as_str(
            raw.get("knowledge", "omniscient"), "attack.knowledge", KNOWLEDGE_MODES
        ),
    }
    _require(
        0.0 <= out["attack_ratio"] < 1.0,
        "attack.attack_ratio",
        f"must lie in [0, 1), got {out['attack_ratio']}",
    )
    _require(
        out["magnitude"] >= 0,
        "attack.magnitude",
        f"must be non-negative, got {out['magnitude']}",
    )
    return out


def _normalize_defense(raw, rounds):
    if not isinstance(raw, dict):
        raise ValueError(f"defense: expected an object, got {raw!r}")
    _reject_unknown(
        raw,
        {
            "enabled",
            "alpha_credit",
            "theta",
            "delta",
            "gamma1",
            "gamma2",
            "t_warmup",
            "t_total",
        },
        "defense",
    )
    out = {
        "enabled": _as_bool(raw.get("enabled", True), "defense.enabled"),
        "alpha_credit": _as_float(raw.get("alpha_credit", 0.9), "defense.alpha_credit"),
        "theta": _as_float(raw.get("theta", 0.05), "defense.theta"),
        "delta": raw.get("delta", None),
        "gamma1": _as_float(raw.get("gamma1", 0.7), "defense.gamma1"),
        "gamma2": _as_float(raw.get("gamma2", 1.3), "defense.gamma2"),
        "t_warmup": _as_int(raw.get("t_warmup", min(5, max(rounds - 1, 0))), "defense.t_warmup", 0),
        "t_total": _as_int(raw.get("t_total", max(rounds, 2)), "defense.t_total", 1),
    }
    _require(
        0.7 <= out["alpha_credit"] <= 0.95,
        "defense.alpha_credit",
        f"must lie in [0.7, 0.95], got {out['alpha_credit']}",
    )
    _require(
        0.0 <= out["theta"] < 1.0,
        "defense.theta",
        f"must lie in [0, 1), got {out['theta']}",
    )
    if out["delta"] is not None:
        out["delta"] = _as_float(out["delta"], "defense.delta")
        _require(out["delta"] > 0, "defense.delta", "must be positive (or null for 1/(2n))")
    _require(
        0.0 <= out["gamma1"] <= 1.0,
        "defense.gamma1",
        f"must lie in [0, 1], got {out['gamma1']}",
    )
    _require(out["gamma2"] > 1.0, "defense.gamma2", f"must exceed 1, got {out['gamma2']}")
    _require(
        out["t_warmup"] < out["t_total"],
        "defense.t_warmup",
        f"must precede t_total ({out['t_warmup']} >= {out['t_total']})",
    )
    return out


_TOP_KEYS = (
    "preset",
    "seed",
    "out",
    "clients",
    "rounds",
    "alpha_dirichlet",
    "eta",
    "eta_decay",
    "batch_size",
    "learner",
    "hidden",
    "init_scale",
    "pipeline",
    "workers",
    "dataset",
    "attack",
    "defense",
)


def normalize(raw):
    """Validate a raw config dict and return the canonical filled-in form."""
    if not isinstance(raw, dict):
        raise ValueError(f"config root: expected a JSON object, got {raw!r}")
    _reject_unknown(raw, set(_TOP_KEYS), "")
    out = {}
    out["preset"] = _as_str(
        raw.get("preset", "desk-128bit"), "preset", tuple(fhe.PRESETS)
    )
    out["seed"] = _as_int(raw.get("seed", 0), "seed", 0)
    out["out"] = None if raw.get("out") is None else _as_str(raw["out"], "out")
    out["clients"] = _as_int(raw.get("clients", 10), "clients", 2)
    out["rounds"] = _as_int(raw.get("rounds", 30), "rounds", 1)
    out["alpha_dirichlet"] = _as_float(
        raw.get("alpha_dirichlet", 0.5), "alpha_dirichlet"
    )
    _require(out["alpha_dirichlet"] > 0, "alpha_dirichlet", "must be positive")
    out["eta"] = _as_float(raw.get("eta", 0.1), "eta")
    _require(out["eta"] > 0, "eta", "must be positive")
    out["eta_decay"] = _as_float(raw.get("eta_decay", 0.0), "eta_decay")
    _require(out["eta_decay"] >= 0, "eta_decay", "must be non-negative")
    out["batch_size"] = _as_int(raw.get("batch_size", 32), "batch_size", 1)
    out["learner"] = _as_str(raw.get("learner", "logreg"), "learner", LEARNERS)
    out["hidden"] = _as_int(raw.get("hidden", 32), "hidden", 1)
    out["init_scale"] = _as_float(raw.get("init_scale", 0.01), "init_scale")
    _require(out["init_scale"] >= 0, "init_scale", "must be non-negative")
    out["pipeline"] = _as_str(raw.get("pipeline", "encrypted"), "pipeline", PIPELINES)
    out["workers"] = _as_int(raw.get("workers", 4), "workers", 1)
    out["dataset"] = _normalize_dataset(raw.get("dataset", {}))
    out["attack"] = _normalize_attack(raw.get("attack", {}))
    out["defense"] = _normalize_defense(raw.get("defense", {}), out["rounds"])
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description; fields mirror the JSON schema."""

    preset: str
    seed: int
    out: str | None
    clients: int
    rounds: int
    alpha_dirichlet: float
    eta: float
    eta_decay: float
    batch_size: int
    learner: str
    hidden: int
    init_scale: float
    pipeline: str
    workers: int
    dataset: dict
    attack: AttackSpec
    defense: DefenseConfig
    defense_enabled: bool

    def attack_or_none(self):
        return None if self.attack.kind == "none" else self.attack


def config_from_dict(raw):
    """Normalize ``raw`` and build the typed :class:`ExperimentConfig`."""
    norm = normalize(raw)
    attack = AttackSpec(
        kind=norm["attack"]["kind"],
        attack_ratio=norm["attack"]["attack_ratio"],
        magnitude=norm["attack"]["magnitude"],
        knowledge=norm["attack"]["knowledge"],
    )
    d = norm["defense"]
    defense = DefenseConfig(
        alpha_credit=d["alpha_credit"],
        theta=d["theta"],
        delta=d["delta"],
        gamma1=d["gamma1"],
        gamma2=d["gamma2"],
        t_warmup=d["t_warmup"],
        t_total=d["t_total"],
    )
    return ExperimentConfig(
        preset=norm["preset"],
        seed=norm["seed"],
        out=norm["out"],
        clients=norm["clients"],
        rounds=norm["rounds"],
        alpha_dirichlet=norm["alpha_dirichlet"],
        eta=norm["eta"],
        eta_decay=norm["eta_decay"],
        batch_size=norm["batch_size"],
        learner=norm["learner"],
        hidden=norm["hidden"],
        init_scale=norm["init_scale"],
        pipeline=norm["pipeline"],
        workers=norm["workers"],
        dataset=norm["dataset"],
        attack=attack,
        defense=defense,
        defense_enabled=d["enabled"],
    )


def load_config(path):
    """Read, validate, and type a JSON experiment config from ``path``."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ValueError(f"config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)


def serialize(cfg):
    """Map a validated config back onto the canonical dict form."""
    return {
        "preset": cfg.preset,
        "seed": cfg.seed,
        "out": cfg.out,
        "clients": cfg.clients,
        "rounds": cfg.rounds,
        "alpha_dirichlet": cfg.alpha_dirichlet,
        "eta": cfg.eta,
        "eta_decay": cfg.eta_decay,
        "batch_size": cfg.batch_size,
        "learner": cfg.learner,
        "hidden": cfg.hidden,
        "init_scale": cfg.init_scale,
        "pipeline": cfg.pipeline,
        "workers": cfg.workers,
        "dataset": dict(cfg.dataset),
        "attack": {
            "kind": cfg.attack.kind,
            "attack_ratio": cfg.attack.attack_ratio,
            "magnitude": cfg.attack.magnitude,
            "knowledge": cfg.attack.knowledge,
        },
        "defense": {
            "enabled": cfg.defense_enabled,
            "alpha_credit": cfg.defense.alpha_credit,
            "theta": cfg.defense.theta,
            "delta": cfg.defense.delta,
            "gamma1": cfg.defense.gamma1,
            "gamma2": cfg.defense.gamma2,
            "t_warmup": cfg.defense.t_warmup,
            "t_total": cfg.defense.t_total,
        },
    }
