"""Artifact persistence: domain streams on disk, results JSON, metric CSVs.

Determinism contract: `results.json` depends only on the config and seeds —
wall-clock goes to a `timing.json` sidecar so two identical runs produce
bitwise-identical results files.  All JSON is dumped with sorted keys and a
trailing newline; matrices serialize unset entries as null.

File layouts
------------
stream directory (``gen-data``):
    meta.json                 schema, dataset facts, per-domain sizes
    d01_train_x.npy ...       one .npy per array, domains numbered from 1

results directory (``run``):
    results.json              schema dilkit-results-v1 (see `results_payload`)
    timing.json               wall-clock per seed + total (nondeterministic)
    metrics.csv               header: method,seed,domain,avg_acc,forgetting,forward_transfer
                              (forgetting empty for domain 1; forward_transfer
                              only on each seed's final-domain row)
    omega.csv                 header: method,seed,domain,past_domain,alpha,beta,gamma
    embeddings.csv (optional) header: seed,domain,label,e1..e<k>
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os

import numpy as np

from .. import __version__
from ..datagen import DomainStream, FormatError, LabeledSet
from ..metrics import AccuracyMatrix, avg_acc, forgetting, forward_transfer
from ..trainer import SequenceResult

RESULTS_SCHEMA = "dilkit-results-v1"
STREAM_SCHEMA = "dilkit-stream-v1"
METRICS_HEADER = ("method", "seed", "domain", "avg_acc", "forgetting",
                  "forward_transfer")
OMEGA_HEADER = ("method", "seed", "domain", "past_domain",
                "alpha", "beta", "gamma")


def dump_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2,
                      allow_nan=False) + "\n"


def write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


# ---------------------------------------------------------------------------
# domain streams

def stream_fingerprint(stream: DomainStream) -> str:
    """sha256 over every array's bytes, in domain order."""
    digest = hashlib.sha256()
    for train, test in stream.domains:
        for part in (train, test):
            digest.update(np.ascontiguousarray(part.x).tobytes())
            digest.update(np.ascontiguousarray(part.y).tobytes())
    return digest.hexdigest()


def save_stream(stream: DomainStream, dir_path: str) -> None:
    os.makedirs(dir_path, exist_ok=True)
    sizes = []
    for t, (train, test) in enumerate(stream.domains, start=1):
        for tag, part in (("train", train), ("test", test)):
            np.save(os.path.join(dir_path, f"d{t:02d}_{tag}_x.npy"), part.x)
            np.save(os.path.join(dir_path, f"d{t:02d}_{tag}_y.npy"), part.y)
        sizes.append({"train": len(train), "test": len(test)})
    meta = {"schema": STREAM_SCHEMA,
            "n_domains": stream.n_domains,
            "num_classes": stream.num_classes,
            "input_dim": stream.input_dim,
            "sizes": sizes,
            "fingerprint": stream_fingerprint(stream)}
    write_text(os.path.join(dir_path, "meta.json"), dump_json(meta))


def load_stream(dir_path: str) -> DomainStream:
    meta_path = os.path.join(dir_path, "meta.json")
    try:
        with open(meta_path, encoding="utf-8") as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise FormatError(f"{meta_path}: not found") from None
    except json.JSONDecodeError as err:
        raise FormatError(f"{meta_path}: {err}") from None
    if meta.get("schema") != STREAM_SCHEMA:
        raise FormatError(f"{meta_path}: schema {meta.get('schema')!r}, "
                          f"expected {STREAM_SCHEMA!r}")
    domains = []
    for t in range(1, meta["n_domains"] + 1):
        parts = {}
        for tag in ("train", "test"):
            arrays = []
            for axis in ("x", "y"):
                path = os.path.join(dir_path, f"d{t:02d}_{tag}_{axis}.npy")
                if not os.path.exists(path):
                    raise FormatError(f"{path}: missing stream file")
                arrays.append(np.load(path))
            parts[tag] = LabeledSet(arrays[0], arrays[1], domain_id=t)
        domains.append((parts["train"], parts["test"]))
    stream = DomainStream(domains, num_classes=meta["num_classes"],
                          input_dim=meta["input_dim"])
    if stream_fingerprint(stream) != meta["fingerprint"]:
        raise FormatError(f"{dir_path}: array bytes do not match the "
                          "recorded fingerprint")
    return stream


# ---------------------------------------------------------------------------
# results

def _seed_entry(result: SequenceResult) -> dict:
    return {
        "seed": result.seed,
        "matrix": result.matrix.to_lists(),
        "omega": {str(t): [[float(v) for v in triple] for triple in triples]
                  for t, triples in result.omega_by_domain.items()},
        "avg_acc": {str(t): float(v)
                    for t, v in result.avg_acc_by_domain.items()},
        "forgetting": {str(t): float(v)
                       for t, v in result.forgetting_by_domain.items()},
        "forward_transfer": (None if result.forward_transfer is None
                             else float(result.forward_transfer)),
        "baseline_acc": [float(v) for v in result.baseline_acc],
        "shortfalls": {str(t): int(v) for t, v in result.shortfalls.items()},
    }


def _mean_std(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def results_payload(config_text: str, results: list[SequenceResult],
                    dataset: dict) -> dict:
    """Deterministic results document.  `dataset` carries the generation
    facts (name, sizes, data_seed, fingerprint) so two methods on the same
    config are comparable at a glance."""
    if not results:
        raise ValueError("results must be nonempty")
    final = results[0].n_domains
    payload = {
        "schema": RESULTS_SCHEMA,
        "config_text": config_text,
        "dataset": dataset,
        "method": results[0].method,
        "n_domains": final,
        "seeds": [r.seed for r in results],
        "per_seed": [_seed_entry(r) for r in results],
        "summary": {
            "avg_acc": _mean_std([r.avg_acc_by_domain[final]
                                  for r in results]),
            "forgetting": _mean_std([r.forgetting_by_domain[final]
                                     for r in results]) if final >= 2 else None,
            "forward_transfer": (_mean_std([r.forward_transfer
                                            for r in results])
                                 if results[0].forward_transfer is not None
                                 else None),
        },
        "fingerprint": {
            "package": f"dilkit {__version__}",
            "numpy": np.__version__,
        },
    }
    return payload


def metrics_rows(results: list[SequenceResult]) -> list[tuple]:
    rows = []
    for r in results:
        for t in range(1, r.n_domains + 1):
            rows.append((
                r.method, r.seed, t,
                repr(float(r.avg_acc_by_domain[t])),
                repr(float(r.forgetting_by_domain[t])) if t >= 2 else "",
                repr(float(r.forward_transfer))
                if t == r.n_domains and r.forward_transfer is not None else "",
            ))
    return rows


def omega_rows(results: list[SequenceResult]) -> list[tuple]:
    rows = []
    for r in results:
        for t in sorted(r.omega_by_domain):
            for past, (alpha, beta, gamma) in enumerate(
                    r.omega_by_domain[t], start=1):
                rows.append((r.method, r.seed, t, past,
                             repr(float(alpha)), repr(float(beta)),
                             repr(float(gamma))))
    return rows


def format_csv(header: tuple, rows: list[tuple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_results(out_dir: str, payload: dict,
                  results: list[SequenceResult],
                  timing: dict | None = None) -> None:
    write_text(os.path.join(out_dir, "results.json"), dump_json(payload))
    write_text(os.path.join(out_dir, "metrics.csv"),
               format_csv(METRICS_HEADER, metrics_rows(results)))
    write_text(os.path.join(out_dir, "omega.csv"),
               format_csv(OMEGA_HEADER, omega_rows(results)))
    if timing is not None:
        write_text(os.path.join(out_dir, "timing.json"), dump_json(timing))


def load_results(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise FormatError(f"{path}: not found") from None
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: {err}") from None
    if payload.get("schema") != RESULTS_SCHEMA:
        raise FormatError(f"{path}: schema {payload.get('schema')!r}, "
                          f"expected {RESULTS_SCHEMA!r}")
    return payload


def recompute_metrics(payload: dict) -> tuple[list[tuple], list[str]]:
    """Rebuild every stored metric from the stored accuracy matrices.

    Returns (metrics rows recomputed per seed and domain, list of
    discrepancy descriptions vs the stored values).
    """
    rows: list[tuple] = []
    problems: list[str] = []
    final = payload["n_domains"]
    for entry in payload["per_seed"]:
        matrix = AccuracyMatrix.from_lists(entry["matrix"])
        seed = entry["seed"]
        recomputed_ft = None
        if entry["forward_transfer"] is not None:
            recomputed_ft = forward_transfer(
                matrix, [float(v) for v in entry["baseline_acc"]], final)
        for t in range(1, final + 1):
            a_t = avg_acc(matrix, t)
            f_t = forgetting(matrix, t) if t >= 2 else None
            for name, got, stored in (
                    ("avg_acc", a_t, entry["avg_acc"][str(t)]),
                    ("forgetting", f_t,
                     entry["forgetting"].get(str(t)) if t >= 2 else None)):
                if stored is None and got is None:
                    continue
                if stored is None or got is None \
                        or abs(got - stored) > 1e-12:
                    problems.append(
                        f"seed {seed} domain {t}: {name} stored {stored!r} "
                        f"!= recomputed {got!r}")
            rows.append((payload["method"], seed, t,
                         repr(float(a_t)),
                         repr(float(f_t)) if t >= 2 else "",
                         repr(float(recomputed_ft))
                         if t == final and recomputed_ft is not None else ""))
        if recomputed_ft is not None and \
                abs(recomputed_ft - entry["forward_transfer"]) > 1e-12:
            problems.append(
                f"seed {seed}: forward_transfer stored "
                f"{entry['forward_transfer']!r} != recomputed "
                f"{recomputed_ft!r}")
    return rows, problems
