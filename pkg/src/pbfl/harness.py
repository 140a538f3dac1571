"""Experiment orchestration: run a configured experiment, emit artifacts.

Artifacts land in the config's output directory:

config.json     the normalized config actually used
metrics.jsonl   one line per round, written line-buffered as rounds finish
rounds.jsonl    the full round reports including the defense internals
metrics.csv     scalar per-round table for plotting
model.bin       final weight vector (little-endian f64, length-prefixed)
summary.json    end-of-run totals, traffic accounting, and weight flags

Identical (config, seed) pairs produce byte-identical metrics except for
the wall-clock fields (every key starting with ``wall_``).
"""

import json
import logging
import os
import struct
import time

import numpy as np

from . import fhe
from .config import serialize
from .data import prepare_dataset
from .flsim import FederatedRun
from .learners import make_learner

log = logging.getLogger("pbfl.harness")

CSV_COLUMNS = ("round", "accuracy", "loss", "eta", "messages", "bytes", "wall_seconds")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def metrics_record(report) -> dict:
    """Flatten a round report into the stable metrics schema."""
    return {
        "round": report.round,
        "accuracy": report.accuracy,
        "loss": report.loss,
        "eta": report.eta,
        "checksum": report.checksum,
        "weights": report.weights,
        "traffic": dict(report.traffic),
        "wall_seconds": report.wall_seconds,
    }


def emit_metrics(records, out_dir):
    """Write a stream of metric records as line-buffered JSONL plus a CSV.

    ``records`` may be any iterable, including a generator fed by a live
    run; each record is flushed to ``metrics.jsonl`` as soon as it is
    produced. The CSV is written once the stream ends (header-only for an
    empty run). Returns the two paths.
    """
    jsonl_path = os.path.join(out_dir, "metrics.jsonl")
    csv_path = os.path.join(out_dir, "metrics.csv")
    rows = []
    try:
        with open(jsonl_path, "w", encoding="utf-8", buffering=1) as fh:
            for rec in records:
                fh.write(_dump(rec) + "\n")
                rows.append(rec)
    except OSError as exc:
        raise RuntimeError(f"writing {jsonl_path}: {exc}") from exc
    try:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for rec in rows:
                fh.write(
                    ",".join(
                        repr(v) if isinstance(v, float) else str(v)
                        for v in (
                            rec["round"],
                            rec["accuracy"],
                            rec["loss"],
                            rec["eta"],
                            rec["traffic"]["messages"],
                            rec["traffic"]["bytes"],
                            rec["wall_seconds"],
                        )
                    )
                    + "\n"
                )
    except OSError as exc:
        raise RuntimeError(f"writing {csv_path}: {exc}") from exc
    return jsonl_path, csv_path


def save_checkpoint(path, weights):
    """Length-prefixed little-endian float64 dump of a weight vector."""
    vec = np.asarray(weights, dtype=np.float64)
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", vec.size))
            fh.write(vec.astype("<f8").tobytes())
    except OSError as exc:
        raise RuntimeError(f"writing {path}: {exc}") from exc


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise RuntimeError(f"reading {path}: {exc}") from exc
    if len(blob) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (count,) = struct.unpack("<Q", blob[:8])
    body = blob[8:]
    if len(body) != 8 * count:
        raise ValueError(
            f"{path}: expected {8 * count} payload bytes, found {len(body)}"
        )
    return np.frombuffer(body, dtype="<f8").copy()


def _protocol_accounting(transport) -> dict:
    """Per-protocol message/byte/invocation totals from a transport log."""
    if transport is None:
        return {}
    out = {}
    protocols_seen = sorted({r.protocol for r in transport.records})
    for proto in protocols_seen:
        out[proto] = {
            "messages": transport.message_count(proto),
            "bytes": transport.byte_count(proto),
            "invocations": len(transport.invocation_ids(proto)),
        }
    return out


def _weight_split(final_weights: dict, attackers: list) -> tuple[float, float]:
    att = [v for k, v in final_weights.items() if int(k) in attackers]
    ben = [v for k, v in final_weights.items() if int(k) not in attackers]
    mean_att = float(np.mean(att)) if att else 0.0
    mean_ben = float(np.mean(ben)) if ben else 0.0
    return mean_att, mean_ben


def run_experiment(cfg) -> int:
    """Execute one configured experiment; return a process exit status.

    Any failure after the output directory exists still leaves the partial
    artifacts (and a summary naming the error) behind, and returns 1.
    """
    out_dir = cfg.out or os.path.join("runs", f"seed-{cfg.seed}")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(serialize(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")

    started = time.perf_counter()
    error = None
    run = None
    rounds_path = os.path.join(out_dir, "rounds.jsonl")

    def round_stream():
        nonlocal error, run
        try:
            bundle = prepare_dataset(
                cfg.dataset, cfg.clients, cfg.alpha_dirichlet, cfg.seed
            )
            learner = make_learner(
                cfg.learner,
                bundle.features,
                bundle.classes,
                hidden=cfg.hidden,
                init_scale=cfg.init_scale,
            )
            params = fhe.setup(cfg.preset) if cfg.pipeline == "encrypted" else None
            run = FederatedRun(
                bundle,
                learner,
                rounds=cfg.rounds,
                seed=cfg.seed,
                attack_spec=cfg.attack_or_none(),
                defense_cfg=cfg.defense,
                defense_enabled=cfg.defense_enabled,
                pipeline=cfg.pipeline,
                params=params,
                eta=cfg.eta,
                eta_decay=cfg.eta_decay,
                batch_size=cfg.batch_size,
                workers=cfg.workers,
            )
            with open(rounds_path, "w", encoding="utf-8", buffering=1) as rfh:
                for t in range(1, cfg.rounds + 1):
                    rep = run.run_round(t)
                    rfh.write(_dump(rep.to_dict()) + "\n")
                    log.info(
                        "round %d/%d accuracy=%.4f loss=%.4f",
                        t,
                        cfg.rounds,
                        rep.accuracy,
                        rep.loss,
                    )
                    yield metrics_record(rep)
        except Exception as exc:  # noqa: BLE001 - harness boundary
            error = exc
            log.exception("experiment failed")

    emit_metrics(round_stream(), out_dir)

    summary = {
        "status": "failed" if error else "ok",
        "error": None if error is None else f"{type(error).__name__}: {error}",
        "seed": cfg.seed,
        "pipeline": cfg.pipeline,
        "rounds_requested": cfg.rounds,
        "rounds_completed": 0 if run is None else len(run.reports),
        "wall_seconds_total": time.perf_counter() - started,
    }
    if run is not None and run.reports:
        last = run.reports[-1]
        transport = None if run.federation is None else run.federation.transport
        mean_att, mean_ben = _weight_split(last.weights, run.attackers)
        has_attackers = bool(run.attackers)
        summary.update(
            {
                "final_accuracy": last.accuracy,
                "final_loss": last.loss,
                "attackers": list(run.attackers),
                "attacker_mean_final_weight": mean_att if has_attackers else None,
                "benign_mean_final_weight": mean_ben,
                "attackers_below_benign": mean_att < mean_ben if has_attackers else None,
                "traffic": {
                    "messages": sum(r.traffic["messages"] for r in run.reports),
                    "bytes": sum(r.traffic["bytes"] for r in run.reports),
                },
                "protocols": _protocol_accounting(transport),
            }
        )
        save_checkpoint(os.path.join(out_dir, "model.bin"), run.model.weights)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 1 if error else 0
