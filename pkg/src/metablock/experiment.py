"""Multi-chain, multi-mask experiment orchestration and run directories.

A run directory is fully regenerable from its config snapshot and seed:
every mask seed and chain seed is derived deterministically from the root
seed, traces are line-delimited JSON, and checkpoints make partial runs
resumable. Layout:

    out_dir/
      config.json            resolved config snapshot
      seeds.json             derived mask/chain seeds (for transparency)
      node_ids.json, relation_ids.json
      masks/mask_000.json ...
      chains/mask000_chain00.trace.jsonl
      chains/mask000_chain00.ckpt.npz (+ .samples.npz)
      samples/mask000_selected.npz
      predictions/mask_000.csv ...
      auc_summary.txt
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import load_edges, load_metadata
from .errors import DataError
from .inference import FitResult, fit_chain, save_samples
from .model import PRESENT, UNOBSERVED, EdgeData, HyperParams, Metadata
from .predict import Mask, auc, make_mask, predict_links, write_auc_report


@dataclass
class RunConfig:
    """Everything a full link-prediction experiment needs."""

    edges: str
    out_dir: str
    metadata: str | None = None
    mask: str | None = None          # optional pre-made mask; overrides n_masks
    chains: int = 3
    sweeps: int = 2000
    seed: int = 0
    burn_in: float = 0.5
    max_samples: int = 200
    chain_selection: str = "best-log-joint"  # or "pooled"
    mask_probability: float = 0.5
    n_masks: int = 10
    standardize: bool = True
    resample_lambda_v: bool = True
    per_coordinate_v: bool = False
    truncation: int | None = None
    checkpoint_every: int = 0
    workers: int = 1
    save_samples: str = "selected"   # none | selected | all
    hyper: HyperParams = field(default_factory=HyperParams)

    def validate(self) -> None:
        if self.sweeps < 1:
            raise DataError("sweeps must be >= 1")
        if self.chains < 1:
            raise DataError("chains must be >= 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise DataError("burn_in fraction must be in [0, 1)")
        if self.chain_selection not in ("best-log-joint", "pooled"):
            raise DataError(f"unknown chain_selection {self.chain_selection!r}")
        if self.save_samples not in ("none", "selected", "all"):
            raise DataError(f"unknown save_samples mode {self.save_samples!r}")
        if not Path(self.edges).exists():
            raise DataError(f"edges file not found: {self.edges}")
        if self.metadata is not None and not Path(self.metadata).exists():
            raise DataError(f"metadata file not found: {self.metadata}")
        if self.mask is not None and not Path(self.mask).exists():
            raise DataError(f"mask file not found: {self.mask}")

    def to_json(self, path) -> None:
        rec = dataclasses.asdict(self)
        with open(path, "w") as fh:
            json.dump(rec, fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            rec = json.load(fh)
        hyper = HyperParams(**rec.pop("hyper", {}))
        return cls(hyper=hyper, **rec)


def derive_seed(root: int, *key) -> int:
    """Deterministic child seed from the root seed and an integer key path."""
    ss = np.random.SeedSequence(entropy=root, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


def apply_mask(data: EdgeData, mask: Mask) -> EdgeData:
    """Training copy of the data with the mask's triples set to unobserved."""
    train = data.copy()
    t = mask.triples
    train.obs[t[:, 0], t[:, 1], t[:, 2]] = UNOBSERVED
    return train


def _fit_one(args):
    (train, phi, hyper, chain_seed, cfg_dict, trace_path, ckpt_path) = args
    return fit_chain(
        train, phi, hyper, chain_seed, cfg_dict["sweeps"],
        burn_in=cfg_dict["burn_in"], max_samples=cfg_dict["max_samples"],
        truncation=cfg_dict["truncation"],
        resample_lambda_v=cfg_dict["resample_lambda_v"],
        per_coordinate_v=cfg_dict["per_coordinate_v"],
        trace_path=trace_path, checkpoint_path=ckpt_path,
        checkpoint_every=cfg_dict["checkpoint_every"])


def select_samples(results: list[FitResult], mode: str):
    """Pick the prediction sample set: best chain by mean retained log joint, or pool."""
    if mode == "pooled":
        pooled = []
        for res in results:
            pooled.extend(res.samples)
        return pooled, -1
    best = int(np.argmax([res.mean_log_joint for res in results]))
    return results[best].samples, best


def run_experiment(config: RunConfig) -> Path:
    """Execute the full protocol; returns the run directory."""
    config.validate()
    out = Path(config.out_dir)
    for sub in ("masks", "chains", "predictions", "samples"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    config.to_json(out / "config.json")

    data, node_ids, relation_ids = load_edges(config.edges)
    if config.metadata is not None:
        phi = load_metadata(config.metadata, node_ids, standardize=config.standardize)
    else:
        phi = Metadata.intercept_only(data.N)
    with open(out / "node_ids.json", "w") as fh:
        json.dump(node_ids, fh)
    with open(out / "relation_ids.json", "w") as fh:
        json.dump(relation_ids, fh)

    if config.mask is not None:
        masks = [Mask.from_json(config.mask)]
    else:
        masks = []
        for mi in range(config.n_masks):
            train_mi, mask = make_mask(data, config.mask_probability,
                                       derive_seed(config.seed, 0, mi))
            masks.append(mask)
    seeds = {"root": config.seed, "masks": [m.seed for m in masks], "chains": {}}

    cfg_dict = {
        "sweeps": config.sweeps, "burn_in": config.burn_in,
        "max_samples": config.max_samples, "truncation": config.truncation,
        "resample_lambda_v": config.resample_lambda_v,
        "per_coordinate_v": config.per_coordinate_v,
        "checkpoint_every": config.checkpoint_every,
    }

    tasks = []
    for mi, mask in enumerate(masks):
        mask.to_json(out / "masks" / f"mask_{mi:03d}.json")
        train = apply_mask(data, mask)
        for ci in range(config.chains):
            chain_seed = derive_seed(config.seed, 1, mi, ci)
            seeds["chains"][f"mask{mi:03d}_chain{ci:02d}"] = chain_seed
            trace = out / "chains" / f"mask{mi:03d}_chain{ci:02d}.trace.jsonl"
            ckpt = out / "chains" / f"mask{mi:03d}_chain{ci:02d}.ckpt.npz"
            tasks.append((train, phi, config.hyper, chain_seed, cfg_dict,
                          str(trace), str(ckpt)))
    with open(out / "seeds.json", "w") as fh:
        json.dump(seeds, fh, indent=2)

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            flat_results = list(pool.map(_fit_one, tasks))
    else:
        flat_results = [_fit_one(t) for t in tasks]

    per_mask_auc = []
    for mi, mask in enumerate(masks):
        results = flat_results[mi * config.chains:(mi + 1) * config.chains]
        samples, best = select_samples(results, config.chain_selection)
        if config.save_samples == "selected":
            save_samples(samples, out / "samples" / f"mask{mi:03d}_selected.npz")
        elif config.save_samples == "all":
            for ci, res in enumerate(results):
                save_samples(res.samples,
                             out / "samples" / f"mask{mi:03d}_chain{ci:02d}.npz")
        y_true = (data.obs[mask.triples[:, 0], mask.triples[:, 1],
                           mask.triples[:, 2]] == PRESENT).astype(np.int64)
        table = predict_links(samples, mask.triples, y_true=y_true)
        table.to_csv(out / "predictions" / f"mask_{mi:03d}.csv")
        per_mask_auc.append(auc(table))

    write_auc_report(out / "auc_summary.txt", per_mask_auc)
    return out
