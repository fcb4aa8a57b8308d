"""Posterior-predictive link probabilities, AUC scoring, and graph exports.

Prediction Rao-Blackwellizes over indicators and the block matrix within
each posterior sample: the mass on instantiated community pairs uses the
posterior-mean edge probability of each cell, and all remaining
mixed-membership mass (anything touching the uninstantiated tail) falls
back to the prior-mean edge probability. Averaging over samples gives the
marginal predictive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .model import UNOBSERVED, EdgeData, stick_matrix

_DOT_PALETTE = [
    "#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00",
    "#ffff33", "#a65628", "#f781bf", "#999999", "#66c2a5",
    "#fc8d62", "#8da0cb",
]


@dataclass
class Mask:
    """Withheld (source, receiver, relation) triples plus their provenance.

    Regenerating with the stored seed and probability reproduces the same
    mask exactly.
    """

    triples: np.ndarray  # (H, 3) int64
    probability: float
    seed: int

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"probability": self.probability, "seed": self.seed,
                       "triples": self.triples.tolist()}, fh)

    @classmethod
    def from_json(cls, path) -> "Mask":
        with open(path) as fh:
            rec = json.load(fh)
        return cls(triples=np.asarray(rec["triples"], dtype=np.int64).reshape(-1, 3),
                   probability=rec["probability"], seed=rec["seed"])


def make_mask(data: EdgeData, p: float, seed: int):
    """Hide each originally observed entry independently with probability p.

    Returns (train, mask): the training copy has hidden entries flipped to
    unobserved. Errors out if the mask would hide every observed entry.
    """
    if not 0.0 < p < 1.0:
        raise DataError(f"mask probability must be in (0, 1), got {p}")
    rng = np.random.default_rng(seed)
    observed = np.argwhere(data.obs != UNOBSERVED)
    hide = rng.random(observed.shape[0]) < p
    hidden = observed[hide]
    if hidden.shape[0] == observed.shape[0]:
        raise DataError("mask hid every observed entry; lower the probability")
    train = data.copy()
    train.obs[hidden[:, 0], hidden[:, 1], hidden[:, 2]] = UNOBSERVED
    return train, Mask(triples=np.ascontiguousarray(hidden, dtype=np.int64),
                       probability=float(p), seed=int(seed))


@dataclass
class PredictionTable:
    """One row per queried triple: indices, predicted probability, optional label."""

    i: np.ndarray
    j: np.ndarray
    m: np.ndarray
    p_hat: np.ndarray
    y_true: np.ndarray  # float; NaN where unknown

    def __len__(self) -> int:
        return self.i.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("i,j,m,p_hat,y_true\n")
            for a, b, c, p, y in zip(self.i, self.j, self.m, self.p_hat, self.y_true):
                ys = "" if np.isnan(y) else str(int(y))
                fh.write(f"{int(a)},{int(b)},{int(c)},{float(p)!r},{ys}\n")

    @classmethod
    def from_csv(cls, path) -> "PredictionTable":
        i, j, m, p, y = [], [], [], [], []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "i,j,m,p_hat,y_true":
                raise DataError(f"unexpected prediction header {header!r}")
            for line in fh:
                if not line.strip():
                    continue
                fi, fj, fm, fp, fy = line.rstrip("\n").split(",")
                i.append(int(fi)); j.append(int(fj)); m.append(int(fm))
                p.append(float(fp)); y.append(float(fy) if fy else np.nan)
        return cls(np.array(i), np.array(j), np.array(m),
                   np.array(p, dtype=np.float64), np.array(y, dtype=np.float64))


def sample_membership(sample):
    """Stick weights (pi, tail) of every node under one posterior sample."""
    return stick_matrix(sample.v, truncated=sample.truncated)


def predict_links(samples, queries, y_true=None) -> PredictionTable:
    """Marginal predictive probability for each queried (i, j, m) triple.

    For one sample with membership matrix pi and tails, the probability is
    sum_{k,l} pi[k,i] pi[l,j] What[k,l,m] plus the leftover mass
    (1 - sum pi[k,i] pi[l,j]) times the prior mean, where What is the
    posterior-mean block matrix (A+gamma_a)/(A+B+gamma_a+gamma_b) under
    that sample's counts; results average over samples.
    """
    if len(samples) == 0:
        raise DataError("need at least one posterior sample to predict")
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    qi, qj, qm = queries[:, 0], queries[:, 1], queries[:, 2]
    acc = np.zeros(queries.shape[0])
    for smp in samples:
        prior_mean = smp.gamma_a / (smp.gamma_a + smp.gamma_b)
        w_hat = (smp.A + smp.gamma_a) / (smp.A + smp.B + smp.gamma_a + smp.gamma_b)
        pi, tail = sample_membership(smp)
        # mass on instantiated pairs factorizes into the two covered fractions
        covered = (1.0 - tail[qi]) * (1.0 - tail[qj])
        for m in np.unique(qm):
            rows = qm == m
            proj = pi.T @ w_hat[:, :, m] @ pi  # (N, N) expected edge prob, instantiated part
            acc[rows] += proj[qi[rows], qj[rows]] + (1.0 - covered[rows]) * prior_mean
    p_hat = acc / len(samples)
    if y_true is None:
        yt = np.full(queries.shape[0], np.nan)
    else:
        yt = np.asarray(y_true, dtype=np.float64)
    return PredictionTable(i=qi, j=qj, m=qm, p_hat=p_hat, y_true=yt)


def auc_scores(scores, labels) -> float:
    """Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly, ties half.

    Computed through midranks, which is exactly the pair-counting form.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc(table: PredictionTable) -> float:
    """AUC of a prediction table's labeled rows."""
    known = ~np.isnan(table.y_true)
    return auc_scores(table.p_hat[known], table.y_true[known].astype(np.int64))


def variational_distance(pi: np.ndarray, tail: np.ndarray) -> np.ndarray:
    """Total-variation distance between every pair of node memberships.

    D[i, j] = 0.5 * sum_k |pi[k, i] - pi[k, j]|, with the tail mass
    included as one extra pseudo-community so rows sum to one. Symmetric,
    zero diagonal, entries in [0, 1].
    """
    full = np.vstack([pi, tail[None, :]])  # (K+1, N)
    diff = np.abs(full[:, :, None] - full[:, None, :]).sum(axis=0)
    return 0.5 * diff


def affinity_graph(D: np.ndarray, threshold: float = 0.5, communities=None,
                   names=None) -> str:
    """DOT text for the similarity graph implied by a distance matrix.

    Edge (i, j) with weight 1 - D[i, j] is kept iff the weight strictly
    exceeds the threshold. Nodes carry a fillcolor attribute indexed by
    their most probable community when ``communities`` is given.
    """
    n = D.shape[0]
    if D.shape != (n, n):
        raise DataError(f"distance matrix must be square, got {D.shape}")
    lines = ["graph affinity {", "  node [style=filled];"]
    for i in range(n):
        name = names[i] if names is not None else str(i)
        attrs = []
        if communities is not None:
            color = _DOT_PALETTE[int(communities[i]) % len(_DOT_PALETTE)]
            attrs.append(f'fillcolor="{color}"')
            attrs.append(f'community="{int(communities[i])}"')
        attr_txt = (" [" + ", ".join(attrs) + "]") if attrs else ""
        lines.append(f'  "{name}"{attr_txt};')
    for i in range(n):
        for j in range(i + 1, n):
            w = 1.0 - D[i, j]
            if w > threshold:
                ni = names[i] if names is not None else str(i)
                nj = names[j] if names is not None else str(j)
                lines.append(f'  "{ni}" -- "{nj}" [weight={w:.6f}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_auc_report(path, per_mask_auc: list[float]) -> None:
    """Small key-value report: one score per mask plus their mean and sd."""
    arr = np.asarray(per_mask_auc, dtype=np.float64)
    with open(path, "w") as fh:
        for idx, val in enumerate(arr):
            fh.write(f"mask_{idx:03d}_auc = {val:.6f}\n")
        fh.write(f"n_masks = {arr.size}\n")
        fh.write(f"mean_auc = {arr.mean():.6f}\n")
        fh.write(f"sd_auc = {arr.std(ddof=1) if arr.size > 1 else 0.0:.6f}\n")


def read_auc_report(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                key, val = line.split("=", 1)
                out[key.strip()] = float(val.strip())
    return out
