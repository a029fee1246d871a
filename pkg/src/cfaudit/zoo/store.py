"""On-disk model store: ``models/<dataset>/<family>_<seed>`` plus a manifest."""

from __future__ import annotations

import json
from pathlib import Path

from .. import store
from .models import TrainedClassifier, from_arrays

MANIFEST = "manifest.json"


def save_classifier(clf: TrainedClassifier, path) -> str:
    return store.save(path, clf.arrays(), clf.meta(), kind=store.KIND_CLASSIFIER)


def load_classifier(path) -> TrainedClassifier:
    arrays, meta = store.load(path, kind=store.KIND_CLASSIFIER)
    return from_arrays(arrays, meta)


def save_pool(pool, root, dataset: str) -> Path:
    """Write every classifier and a manifest of file and training-set fingerprints."""
    folder = Path(root) / "models" / dataset
    folder.mkdir(parents=True, exist_ok=True)
    entries = []
    for clf in pool:
        name = f"{clf.family}_{clf.seed}"
        digest = save_classifier(clf, folder / name)
        entries.append({"name": name, "family": clf.family, "seed": int(clf.seed),
                        "sha256": digest, "train_fingerprint": clf.fingerprint})
    (folder / MANIFEST).write_text(json.dumps({"version": 1, "models": entries}, indent=2) + "\n")
    return folder


def load_pool(root, dataset: str) -> list[TrainedClassifier]:
    folder = Path(root) / "models" / dataset
    manifest = json.loads((folder / MANIFEST).read_text())
    return [load_classifier(folder / e["name"]) for e in manifest["models"]]
