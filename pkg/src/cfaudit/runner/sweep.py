"""The per-dataset audit sweep: data, generator, zoo, ground truth and three tests.

Every finished (dataset, classifier) cell is appended to a checkpoint file
with a fingerprint key, so an interrupted sweep resumes where it stopped.
Final artifacts are rewritten from the checkpoint in canonical order, which
keeps ``results.csv`` byte-identical across reruns. Wall-clock timings live
in a separate ``timings.csv`` for that reason.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..baselines import dp_test, eo_test
from ..citest import cit_lr_from_draws, draw_counterfactuals
from ..generative import GenerativeBundle, train_bundle
from ..numerics import RngStream
from ..scm import LabeledDataset, SCMSpec, eca, sample_dataset
from ..zoo import ClassifierSpec, save_classifier, train
from ..zoo.store import MANIFEST
from .config import ExperimentConfig, dump_config

log = logging.getLogger("cfaudit.sweep")

RESULT_COLUMNS = (
    "dataset", "family", "seed", "eca", "eca_se", "p_citlr", "t_citlr", "p_dp", "p_eo",
    "acc_train", "acc_test", "degenerate", "error",
)
TIMING_COLUMNS = ("dataset", "family", "seed", "train_s", "eca_s", "citlr_s", "baselines_s")
METHODS = {"CIT-LR": "p_citlr", "DP": "p_dp", "EO": "p_eo"}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".17g")
    return str(v)


def _parse(col: str, s: str):
    if col in ("dataset", "family", "error"):
        return s
    if col in ("seed", "degenerate"):
        return int(s)
    return float(s)


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r["error"])

    def to_csv(self) -> str:
        return _csv(self.rows, RESULT_COLUMNS)

    @classmethod
    def from_csv(cls, text: str) -> "SweepResult":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError("not a results file: unexpected columns")
        return cls([{c: _parse(c, r[c]) for c in RESULT_COLUMNS} for r in reader])


def _csv(rows, cols) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


def cell_key(cfg: ExperimentConfig, variant: str, family: str, seed: int) -> str:
    raw = f"{cfg.dataset_hash(variant)}/{family}/{seed}"
    return hashlib.sha256(raw.encode()).hexdigest()[:20]


# datasets and generator


def dataset_paths(out: Path, variant: str) -> dict:
    base = out / "data" / variant
    return {"dir": base, "spec": base / "spec.json", "train": base / "train.csv", "test": base / "test.csv"}


def prepare_dataset(cfg: ExperimentConfig, variant: str, write: bool = True):
    """SCM and both splits, regenerated from the master seed (cheap and exact)."""
    s = cfg.scm
    spec = SCMSpec.generate(variant, cfg.seed, n=s.n, k=s.k, sigma=s.sigma, prior=s.prior)
    train_d = sample_dataset(spec, cfg.n_train, cfg.seed, "train")
    test_d = sample_dataset(spec, cfg.n_test, cfg.seed, "test")
    if write:
        p = dataset_paths(Path(cfg.out), variant)
        p["dir"].mkdir(parents=True, exist_ok=True)
        spec.save(p["spec"])
        train_d.save_csv(p["train"])
        test_d.save_csv(p["test"])
    return spec, train_d, test_d


def _gen_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.generative.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def get_bundle(cfg: ExperimentConfig, variant: str, train_d: LabeledDataset) -> GenerativeBundle:
    """Load a matching stored bundle or train and store a new one."""
    folder = Path(cfg.out) / "bundles" / variant
    manifest = folder / "manifest.json"
    gh = _gen_hash(cfg)
    if manifest.exists():
        m = json.loads(manifest.read_text())
        if m.get("train_fingerprint") == train_d.fingerprint and m.get("config_hash") == gh:
            return GenerativeBundle.load(folder)
    t0 = time.perf_counter()
    bundle = train_bundle(train_d.x, train_d.a, cfg.generative, train_d.fingerprint)
    bundle.meta["config_hash"] = gh
    bundle.save(folder)
    log.info("%s: trained generator in %.1fs", variant, time.perf_counter() - t0)
    return bundle


# one classifier


def evaluate_cell(cfg: ExperimentConfig, variant: str, spec: SCMSpec, train_d, test_d, draws, family, seed):
    """Train one classifier and run ECA, CIT-LR, DP and EO on it.

    Returns ``(row, timing, reports)``; stage failures are recorded in the
    row's ``error`` field rather than raised.
    """
    row = {c: float("nan") for c in RESULT_COLUMNS}
    row.update(dataset=variant, family=family, seed=int(seed), degenerate=False, error="")
    timing = {"dataset": variant, "family": family, "seed": int(seed)}
    reports, errors = {}, []
    t0 = time.perf_counter()
    try:
        clf = train(ClassifierSpec(family, int(seed)), train_d)
    except Exception as exc:  # noqa: BLE001 - any training failure is a per-row error
        row["error"] = f"train: {exc}"
        timing.update(train_s=time.perf_counter() - t0, eca_s=0.0, citlr_s=0.0, baselines_s=0.0)
        return row, timing, reports
    timing["train_s"] = time.perf_counter() - t0
    save_classifier(clf, Path(cfg.out) / "models" / variant / f"{family}_{seed}")
    f = clf.predict_proba
    row["acc_train"] = float(np.mean(clf.predict(train_d.x) == train_d.y))
    row["acc_test"] = float(np.mean(clf.predict(test_d.x) == test_d.y))

    t0 = time.perf_counter()
    try:
        e = cfg.eca
        res = eca(spec, f, e.n_units, e.n_noise, e.tau, RngStream(cfg.seed, f"eca/{variant}").generator())
        row["eca"], row["eca_se"] = res.value, res.max_se
    except Exception as exc:  # noqa: BLE001
        errors.append(f"eca: {exc}")
    timing["eca_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if draws is None:
        errors.append("citlr: generator unavailable")
    else:
        try:
            rep = cit_lr_from_draws(f, draws, cfg.cit)
            rep.dataset, rep.classifier = test_d.fingerprint, f"{family}_{seed}"
            rep.bundle = train_d.fingerprint
            row["p_citlr"], row["t_citlr"], row["degenerate"] = rep.p, rep.t, rep.degenerate
            rep.extra = {"eca": row["eca"], "eca_max_se": row["eca_se"]}
            reports["CIT-LR"] = rep.to_json()
        except Exception as exc:  # noqa: BLE001
            errors.append(f"citlr: {exc}")
    timing["citlr_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    for name, fn in (("DP", dp_test), ("EO", eo_test)):
        try:
            rep = fn(f, test_d, cfg.alpha)
            rep.classifier = f"{family}_{seed}"
            row[METHODS[name]] = rep.p
            reports[name] = rep.to_json()
        except Exception as exc:  # noqa: BLE001
            errors.append(f"{name.lower()}: {exc}")
    timing["baselines_s"] = time.perf_counter() - t0
    row["error"] = "; ".join(errors)
    return row, timing, reports


_CTX: dict = {}


def _init_worker(ctx):
    _CTX.update(ctx)


def _work(family_seed):
    c = _CTX
    return evaluate_cell(c["cfg"], c["variant"], c["spec"], c["train"], c["test"], c["draws"], *family_seed)


# checkpoints


def _read_checkpoint(path: Path) -> dict:
    done = {}
    if not path.exists():
        return done
    for line in path.read_text().splitlines():
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            continue  # a torn final line from an interrupted run
        done[rec["key"]] = rec
    return done


def _write_record(fh, rec: dict):
    fh.write(json.dumps(rec, sort_keys=True) + "\n")
    fh.flush()


def run_dataset(cfg: ExperimentConfig, variant: str, max_cells: int | None = None):
    """Run (or resume) every cell of one dataset.

    Returns the checkpoint records in canonical order and the training-split
    fingerprint. ``max_cells`` caps how many pending cells run this call.
    """
    out = Path(cfg.out)
    ck_path = out / "checkpoint" / f"{variant}.jsonl"
    ck_path.parent.mkdir(parents=True, exist_ok=True)
    done = _read_checkpoint(ck_path)
    cells = [(fam, s) for fam in cfg.families for s in cfg.zoo_seeds]
    keys = {c: cell_key(cfg, variant, *c) for c in cells}
    pending = [c for c in cells if keys[c] not in done or done[keys[c]]["row"]["error"]]
    if max_cells is not None:
        pending = pending[:max_cells]
    spec, train_d, test_d = prepare_dataset(cfg, variant)
    if pending:
        draws, gen_error = None, ""
        try:
            bundle = get_bundle(cfg, variant, train_d)
            draws = draw_counterfactuals(bundle, test_d, cfg.cit)
        except Exception as exc:  # noqa: BLE001 - recorded on every row of this dataset
            gen_error = f"generator: {exc}"
            log.error("%s: %s", variant, gen_error)
        with ck_path.open("a") as fh:
            results = _run_cells(cfg, variant, spec, train_d, test_d, draws, pending)
            for cell, (row, timing, reports) in results:
                if gen_error:
                    row["error"] = "; ".join(e for e in (gen_error, row["error"]) if e)
                rec = {"key": keys[cell], "row": row, "timing": timing, "reports": reports}
                done[keys[cell]] = rec
                _write_record(fh, rec)
                log.info("%s %s_%s eca=%.3f p=%.3g", variant, cell[0], cell[1], row["eca"], row["p_citlr"])
    return [done[keys[c]] for c in cells if keys[c] in done], train_d.fingerprint


def _run_cells(cfg, variant, spec, train_d, test_d, draws, pending):
    if cfg.workers <= 1 or len(pending) <= 1:
        for cell in pending:
            yield cell, evaluate_cell(cfg, variant, spec, train_d, test_d, draws, *cell)
        return
    ctx = {"cfg": cfg, "variant": variant, "spec": spec, "train": train_d, "test": test_d, "draws": draws}
    with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(ctx,)) as pool:
        yield from zip(pending, pool.map(_work, pending))


def run_sweep(cfg: ExperimentConfig, max_cells: int | None = None) -> SweepResult:
    """Run every dataset and write results, timings, reports and model manifests."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    records = []
    for variant in cfg.variants:
        recs, train_fp = run_dataset(cfg, variant, max_cells)
        records.extend(recs)
        _write_reports(out, variant, recs)
        _write_model_manifest(out, variant, train_fp, recs)
    res = SweepResult([r["row"] for r in records], [r["timing"] for r in records])
    (out / "results.csv").write_text(res.to_csv())
    (out / "timings.csv").write_text(_csv(res.timings, TIMING_COLUMNS))
    return res


def _write_reports(out: Path, variant: str, recs: list):
    folder = out / "reports" / variant
    folder.mkdir(parents=True, exist_ok=True)
    for method in METHODS:
        lines = [r["reports"][method] + "\n" for r in recs if method in r["reports"]]
        (folder / f"{method}.jsonl").write_text("".join(lines))


def _write_model_manifest(out: Path, variant: str, train_fp: str, recs: list):
    folder = out / "models" / variant
    entries = []
    for r in recs:
        row = r["row"]
        path = folder / f"{row['family']}_{row['seed']}"
        if path.exists():
            entries.append({
                "name": path.name, "family": row["family"], "seed": row["seed"],
                "sha256": hashlib.sha256(path.read_bytes()).hexdigest(), "train_fingerprint": train_fp,
            })
    if entries:
        (folder / MANIFEST).write_text(json.dumps({"version": 1, "models": entries}, indent=2) + "\n")
