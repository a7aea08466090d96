"""Late-fusion configurations: M5 (soft voting over the unimodal heads) and
M6 (bagging the early-fusion head, k=3).

Member-set interpretation (the source material never pins these down):
M5 votes over trained M1 (text-only) and M2 (image-only) heads, the two
independent unimodal predictors available; M6 bags the M4 early-fusion
architecture. Reports label both as interpretations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fusion import HybridHeadConfig, Model, ModelConfigId, load_checkpoint, save_checkpoint
from .training import EmbeddedDataset, HeadPredictor, TrainConfig, TrainRecord, train_fold


class EnsembleError(ValueError):
    pass


@dataclass
class EnsembleSpec:
    kind: str  # soft_vote | bagging
    members: list[dict]
    k: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind == "soft_vote" and len(self.members) < 2:
            raise EnsembleError("soft voting requires at least 2 members")
        if self.kind == "bagging" and self.k < 1:
            raise EnsembleError("bagging requires k >= 1")


def soft_vote(member_probs) -> np.ndarray:
    """Unweighted arithmetic mean of member probability vectors."""
    if len(member_probs) == 0:
        raise EnsembleError("soft_vote needs at least one member")
    arrs = [np.asarray(p, dtype=np.float64) for p in member_probs]
    dims = {a.shape[-1] for a in arrs}
    if len(dims) != 1:
        raise EnsembleError(f"members disagree on class count: {sorted(dims)}")
    return np.mean(arrs, axis=0)


def bootstrap_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    """Bootstrap resample: n draws with replacement from [0, n)."""
    return rng.integers(0, n, size=n)


def bootstrap_overlap(boot_a, boot_b) -> float:
    """Jaccard overlap of the unique index sets of two bootstrap samples."""
    a, b = set(np.asarray(boot_a).tolist()), set(np.asarray(boot_b).tolist())
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


class EnsemblePredictor:
    """Soft vote over member predictors."""

    def __init__(self, members: list[HeadPredictor]):
        self.members = members

    def predict_proba(self, data: EmbeddedDataset) -> np.ndarray:
        return soft_vote([m.predict_proba(data) for m in self.members])


def train_soft_vote_fold(
    train: EmbeddedDataset,
    val: EmbeddedDataset,
    cfg: TrainConfig,
    head_cfg: HybridHeadConfig | None = None,
) -> tuple[TrainRecord, EnsemblePredictor, EnsembleSpec]:
    """M5: train the M1 and M2 heads independently, fuse by soft voting."""
    rec_txt, model_txt = train_fold(ModelConfigId.of("M1"), train, val, cfg, head_cfg)
    rec_img, model_img = train_fold(ModelConfigId.of("M2"), train, val, cfg, head_cfg)
    spec = EnsembleSpec(
        kind="soft_vote",
        members=[{"config_id": "M1", "seed": cfg.seed}, {"config_id": "M2", "seed": cfg.seed}],
        seed=cfg.seed,
    )
    predictor = EnsemblePredictor([HeadPredictor(model_txt), HeadPredictor(model_img)])
    # keep the text member's record as the representative training trace
    return rec_txt, predictor, spec


def bagging_train(
    base: ModelConfigId,
    k: int,
    train_data: EmbeddedDataset,
    seed: int,
    train_config: TrainConfig,
    val: EmbeddedDataset,
    head_cfg: HybridHeadConfig | None = None,
) -> tuple[EnsembleSpec, EnsemblePredictor, list[TrainRecord]]:
    """Train k members of `base` on independent seeded bootstrap resamples."""
    if k < 1:
        raise EnsembleError(f"bagging requires k >= 1, got {k}")
    if len(train_data) == 0:
        raise EnsembleError("empty training data")
    members, records, descriptors = [], [], []
    for m in range(k):
        member_seed = seed + 1000 * (m + 1)
        rng = np.random.default_rng(member_seed)
        idx = bootstrap_indices(len(train_data), rng)
        boot = train_data.subset(idx)
        member_cfg = TrainConfig(**{**train_config.__dict__, "seed": member_seed})
        rec, model = train_fold(base, boot, val, member_cfg, head_cfg)
        members.append(HeadPredictor(model))
        records.append(rec)
        descriptors.append({"config_id": base.id, "seed": member_seed})
    spec = EnsembleSpec(kind="bagging", members=descriptors, k=k, seed=seed)
    return spec, EnsemblePredictor(members), records


def train_bagging_fold(
    train: EmbeddedDataset,
    val: EmbeddedDataset,
    cfg: TrainConfig,
    head_cfg: HybridHeadConfig | None = None,
    k: int = 3,
) -> tuple[TrainRecord, EnsemblePredictor, EnsembleSpec]:
    """M6: bag the M4 early-fusion head, k members."""
    spec, predictor, records = bagging_train(ModelConfigId.of("M4"), k, train, cfg.seed, cfg, val, head_cfg)
    return records[0], predictor, spec


# ---- ensemble checkpoints ------------------------------------------------------


def save_ensemble(spec: EnsembleSpec, predictor: EnsemblePredictor, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"kind": spec.kind, "k": spec.k, "seed": spec.seed, "members": []}
    for i, (member, desc) in enumerate(zip(predictor.members, spec.members)):
        fname = f"member_{i}.ckpt"
        save_checkpoint(member.model, directory / fname, seed=desc.get("seed", spec.seed))
        manifest["members"].append({**desc, "file": fname})
    (directory / "ensemble.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def load_ensemble(directory: str | Path) -> tuple[EnsembleSpec, EnsemblePredictor]:
    directory = Path(directory)
    manifest = json.loads((directory / "ensemble.json").read_text(encoding="utf-8"))
    members, descriptors = [], []
    for entry in manifest["members"]:
        model, _ = load_checkpoint(directory / entry["file"])
        members.append(HeadPredictor(model))
        descriptors.append({k: v for k, v in entry.items() if k != "file"})
    spec = EnsembleSpec(kind=manifest["kind"], members=descriptors, k=manifest["k"], seed=manifest["seed"])
    return spec, EnsemblePredictor(members)
