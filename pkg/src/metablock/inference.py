"""Markov chain Monte Carlo engine over the collapsed model.

One sweep resamples, in fixed order: every observed entry's source then
receiver indicator (collapsed over the block matrix W, with retrospective
birth of new communities on tail draws), prunes the unoccupied tail,
Metropolis-Hastings resamples each node's score column from its prior,
then draws the conjugate Gaussian/gamma updates for the regression
weights, their mean, and the three precisions.

A ChainState is single-threaded and owns its RNG; run independent chains
with independent seeds for parallelism. Setting ``truncation=K`` at init
switches the engine to a fixed-size sampler whose last stick absorbs all
remaining mass (no births, no pruning), which exists to validate the
retrospective sampler against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import betaln, gammaln

from . import _kernels
from .errors import DataError, NumericalError
from .model import (ABSENT, PRESENT, EdgeData, GlobalState, HyperParams,
                    Metadata, NodeState, AssignmentState, StickWeights,
                    stick_log_matrix, stick_weights)

WALK_CAP_DEFAULT = 1000
_GROW_SLACK = 64
_GROW_MARGIN = 8
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ChainState:
    """Everything one chain needs: data, latents, counts, and its RNG."""

    hyper: HyperParams
    data: EdgeData
    phi: Metadata
    global_state: GlobalState
    node_state: NodeState
    assign: AssignmentState
    rng: np.random.Generator
    iteration: int = 0
    truncation: int | None = None
    # flattened observed entries in canonical order (derived from data)
    edges_i: np.ndarray = field(default=None, repr=False)
    edges_j: np.ndarray = field(default=None, repr=False)
    edges_m: np.ndarray = field(default=None, repr=False)
    edges_y: np.ndarray = field(default=None, repr=False)
    _lookup: dict | None = field(default=None, repr=False, compare=False)

    @property
    def K(self) -> int:
        return self.node_state.K

    @property
    def K_occupied(self) -> int:
        return int(max(self.assign.s.max(), self.assign.r.max())) + 1

    @property
    def N(self) -> int:
        return self.data.N

    @property
    def M(self) -> int:
        return self.data.M

    @property
    def F(self) -> int:
        return self.phi.F

    @property
    def E(self) -> int:
        return self.edges_i.shape[0]

    def entry_index(self, i: int, j: int, m: int) -> int:
        """Position of observed triple (i, j, m) in the canonical entry order."""
        if self._lookup is None:
            self._lookup = {
                (int(a), int(b), int(c)): t
                for t, (a, b, c) in enumerate(zip(self.edges_i, self.edges_j, self.edges_m))
            }
        try:
            return self._lookup[(int(i), int(j), int(m))]
        except KeyError:
            raise DataError(f"triple ({i}, {j}, {m}) is not observed") from None

    def copy(self) -> "ChainState":
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return ChainState(
            hyper=self.hyper,
            data=self.data.copy(),
            phi=self.phi,
            global_state=GlobalState(
                eta=self.global_state.eta.copy(), mu=self.global_state.mu.copy(),
                lambda_S=self.global_state.lambda_S, lambda_F=self.global_state.lambda_F,
                lambda_V=self.global_state.lambda_V),
            node_state=NodeState(v=self.node_state.v.copy()),
            assign=AssignmentState(s=self.assign.s.copy(), r=self.assign.r.copy(),
                                   A=self.assign.A.copy(), B=self.assign.B.copy()),
            rng=rng,
            iteration=self.iteration,
            truncation=self.truncation,
            edges_i=self.edges_i, edges_j=self.edges_j,
            edges_m=self.edges_m, edges_y=self.edges_y.copy(),
        )


@dataclass
class SweepReport:
    iteration: int
    log_joint: float
    K_occupied: int
    K_instantiated: int
    mh_accept_rate: float
    new_communities_born: int

    def to_trace_line(self) -> str:
        return json.dumps({
            "iter": self.iteration,
            "log_joint": self.log_joint,
            "K_occupied": self.K_occupied,
            "K_instantiated": self.K_instantiated,
            "mh_accept_rate": self.mh_accept_rate,
            "births": self.new_communities_born,
        })


@dataclass
class PosteriorSample:
    """The slice of a chain state that prediction and export need."""

    v: np.ndarray        # (K, N)
    A: np.ndarray        # (K, K, M)
    B: np.ndarray        # (K, K, M)
    gamma_a: float
    gamma_b: float
    iteration: int
    truncated: bool = False

    @classmethod
    def from_state(cls, state: ChainState) -> "PosteriorSample":
        return cls(v=state.node_state.v.copy(), A=state.assign.A.copy(),
                   B=state.assign.B.copy(), gamma_a=state.hyper.gamma_a,
                   gamma_b=state.hyper.gamma_b, iteration=state.iteration,
                   truncated=state.truncation is not None)


def rebuild_counts(s, r, edges_m, edges_y, K, M):
    """Recompute the A/B count tables from scratch (the consistency oracle)."""
    A = np.zeros((K, K, M), dtype=np.int64)
    B = np.zeros((K, K, M), dtype=np.int64)
    pos = edges_y == 1
    np.add.at(A, (s[pos], r[pos], edges_m[pos]), 1)
    np.add.at(B, (s[~pos], r[~pos], edges_m[~pos]), 1)
    return A, B


def check_consistency(state: ChainState) -> None:
    """Assert the incremental count tables match a from-scratch rebuild."""
    A, B = rebuild_counts(state.assign.s, state.assign.r, state.edges_m,
                          state.edges_y, state.K, state.M)
    if not (np.array_equal(A, state.assign.A) and np.array_equal(B, state.assign.B)):
        raise AssertionError("count tables inconsistent with indicators")
    if state.K < state.K_occupied:
        raise AssertionError("instantiated community set smaller than occupied set")


def init_chain(data: EdgeData, phi: Metadata, hyper: HyperParams, seed,
               truncation: int | None = None) -> ChainState:
    """Draw globals and scores from their priors; park all indicators at community 0.

    K therefore starts at 1 (or at ``truncation`` for the fixed-size
    variant) and grows through retrospective births.
    """
    if phi.N != data.N:
        raise DataError(f"metadata covers {phi.N} nodes but edge data has {data.N}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    K = 1 if truncation is None else int(truncation)
    if K < 1:
        raise DataError("truncation must be >= 1")

    lam_s = rng.gamma(hyper.a_S, 1.0 / hyper.b_S)
    lam_f = rng.gamma(hyper.a_F, 1.0 / hyper.b_F)
    lam_v = rng.gamma(hyper.a_V, 1.0 / hyper.b_V)
    mu = rng.normal(0.0, 1.0 / np.sqrt(lam_s), size=phi.F)
    eta = mu[:, None] + rng.standard_normal((phi.F, K)) / np.sqrt(lam_f)
    v = eta.T @ phi.phi + rng.standard_normal((K, data.N)) / np.sqrt(lam_v)

    ei, ej, em, ey = data.observed_index()
    s = np.zeros(ei.shape[0], dtype=np.int64)
    r = np.zeros(ei.shape[0], dtype=np.int64)
    A, B = rebuild_counts(s, r, em, ey, K, data.M)
    return ChainState(
        hyper=hyper, data=data, phi=phi,
        global_state=GlobalState(eta=eta, mu=mu, lambda_S=float(lam_s),
                                 lambda_F=float(lam_f), lambda_V=float(lam_v)),
        node_state=NodeState(v=v),
        assign=AssignmentState(s=s, r=r, A=A, B=B),
        rng=rng, truncation=truncation,
        edges_i=ei, edges_j=ej, edges_m=em, edges_y=ey,
    )


def remove_pair_counts(state: ChainState, t: int) -> None:
    """Drop entry t's contribution from the count tables (the exclusion step)."""
    tbl = state.assign.A if state.edges_y[t] == 1 else state.assign.B
    tbl[state.assign.s[t], state.assign.r[t], state.edges_m[t]] -= 1


def add_pair_counts(state: ChainState, t: int) -> None:
    """Put entry t's contribution back into the count tables."""
    tbl = state.assign.A if state.edges_y[t] == 1 else state.assign.B
    tbl[state.assign.s[t], state.assign.r[t], state.edges_m[t]] += 1


def indicator_posterior(state: ChainState, i: int, j: int, m: int, side: str) -> np.ndarray:
    """Exact (K+1)-vector over communities plus the uninstantiated tail.

    The caller must have removed the pair's own contribution from the
    count tables first (see :func:`remove_pair_counts`). Entry k is the
    node's stick weight times the collapsed beta-Bernoulli predictive for
    the (k, opposite) cell; the last entry aggregates the infinite tail,
    whose cells all carry the prior predictive. Normalized to sum to one.
    """
    if state.truncation is not None:
        raise DataError("indicator_posterior applies to the retrospective sampler")
    if side not in ("source", "receiver"):
        raise DataError(f"side must be 'source' or 'receiver', got {side!r}")
    t = state.entry_index(i, j, m)
    y = int(state.edges_y[t])
    ga, gb = state.hyper.gamma_a, state.hyper.gamma_b
    gsum = ga + gb
    if side == "source":
        node, fixed = i, state.assign.r[t]
        a = state.assign.A[:, fixed, m].astype(np.float64)
        b = state.assign.B[:, fixed, m].astype(np.float64)
    else:
        node, fixed = j, state.assign.s[t]
        a = state.assign.A[fixed, :, m].astype(np.float64)
        b = state.assign.B[fixed, :, m].astype(np.float64)
    sticks = stick_weights(state.node_state.v[:, node])
    if y == 1:
        lik = (a + ga) / (a + b + gsum)
        tail_lik = ga / gsum
    else:
        lik = (b + gb) / (a + b + gsum)
        tail_lik = gb / gsum
    rho = np.concatenate([sticks.pi * lik, [sticks.tail * tail_lik]])
    total = rho.sum()
    if not total > 0:
        raise NumericalError("indicator posterior has zero total mass")
    return rho / total


def _run_indicator_phase(state: ChainState, sides: int = _kernels.SIDE_BOTH,
                         entry: int | None = None,
                         walk_cap: int = WALK_CAP_DEFAULT) -> int:
    """Drive the jitted sweep over all (or one) observed entries.

    Grows capacity buffers when the kernel signals a birth would overflow
    them and resumes where it stopped. Returns the number of communities
    born.
    """
    trunc = state.truncation is not None
    if entry is None:
        ei, ej, em, ey = state.edges_i, state.edges_j, state.edges_m, state.edges_y
        s_view, r_view = state.assign.s, state.assign.r
    else:
        sl = slice(entry, entry + 1)
        ei, ej, em, ey = (state.edges_i[sl], state.edges_j[sl],
                          state.edges_m[sl], state.edges_y[sl])
        s_view, r_view = state.assign.s[sl], state.assign.r[sl]

    glob, nodes, assign = state.global_state, state.node_state, state.assign
    K = state.K
    cap = K if trunc else K + _GROW_SLACK
    vbuf = np.empty((cap, state.N))
    vbuf[:K] = nodes.v
    etabuf = np.empty((state.F, cap))
    etabuf[:, :K] = glob.eta
    abuf = np.zeros((cap, cap, state.M), dtype=np.int64)
    abuf[:K, :K] = assign.A
    bbuf = np.zeros((cap, cap, state.M), dtype=np.int64)
    bbuf[:K, :K] = assign.B

    t0 = 0
    births_total = 0
    resume_side, resume_idx = -1, -1
    while True:
        rho = np.empty(cap + 1)
        status, t_res, K_new, births, wside, widx = _kernels.indicator_sweep(
            state.rng, ei, ej, em, ey, s_view, r_view, abuf, bbuf,
            vbuf, etabuf, glob.mu, state.phi.phi,
            glob.lambda_F, glob.lambda_V, state.hyper.gamma_a, state.hyper.gamma_b,
            K, t0, sides, trunc, walk_cap, _GROW_MARGIN,
            resume_side, resume_idx, rho)
        births_total += births
        K, t0 = K_new, t_res

        if status == _kernels.STATUS_OK:
            nodes.v = vbuf[:K].copy()
            glob.eta = etabuf[:, :K].copy()
            assign.A = abuf[:K, :K].copy()
            assign.B = bbuf[:K, :K].copy()
            return births_total
        if status == _kernels.STATUS_GROW:
            # preserve any partially walked columns so the walk can resume
            filled = widx if wside >= 0 else K
            cap = max(filled, K) + _GROW_SLACK
            vnew = np.empty((cap, state.N))
            vnew[:filled] = vbuf[:filled]
            enew = np.empty((state.F, cap))
            enew[:, :filled] = etabuf[:, :filled]
            anew = np.zeros((cap, cap, state.M), dtype=np.int64)
            anew[:K, :K] = abuf[:K, :K]
            bnew = np.zeros((cap, cap, state.M), dtype=np.int64)
            bnew[:K, :K] = bbuf[:K, :K]
            vbuf, etabuf, abuf, bbuf = vnew, enew, anew, bnew
            resume_side, resume_idx = wside, widx
            continue
        if status == _kernels.STATUS_WALK_OVERFLOW:
            raise NumericalError(
                f"retrospective walk exceeded {walk_cap} steps; sticks are degenerate")
        raise NumericalError("indicator posterior had zero total mass")


def resample_indicator(state: ChainState, i: int, j: int, m: int, side: str) -> None:
    """Collapsed resample of one indicator, with retrospective birth on tail draws.

    Delegates to the same kernel as the full sweep so there is a single
    code path. New communities born during the walk get a full score row
    for every node, drawn from the prior.
    """
    if side not in ("source", "receiver"):
        raise DataError(f"side must be 'source' or 'receiver', got {side!r}")
    t = state.entry_index(i, j, m)
    sides = _kernels.SIDE_SOURCE if side == "source" else _kernels.SIDE_RECEIVER
    _run_indicator_phase(state, sides=sides, entry=t)


def prune_communities(state: ChainState) -> None:
    """Drop instantiated communities above the largest occupied index.

    Interior empty communities are kept: their sticks shape the weights of
    every later community. No-op for truncated chains.
    """
    if state.truncation is not None:
        return
    kocc = state.K_occupied
    if kocc < state.K:
        state.node_state.v = state.node_state.v[:kocc].copy()
        state.global_state.eta = state.global_state.eta[:, :kocc].copy()
        state.assign.A = state.assign.A[:kocc, :kocc].copy()
        state.assign.B = state.assign.B[:kocc, :kocc].copy()


def eta_full_conditional(state: ChainState):
    """Gaussian full conditional shared by all columns: (cholesky of P, mean matrix).

    P = lambda_F I + lambda_V phi phi^T; mean_k = P^-1 (lambda_F mu +
    lambda_V phi v_k:^T), the standard Bayesian linear-regression
    posterior with the scores as responses.
    """
    glob = state.global_state
    phi = state.phi.phi
    P = glob.lambda_F * np.eye(state.F) + glob.lambda_V * (phi @ phi.T)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:  # impossible for positive precisions
        raise NumericalError(f"eta conditional precision not positive-definite: {exc}")
    rhs = glob.lambda_F * glob.mu[:, None] + glob.lambda_V * (phi @ state.node_state.v.T)
    mean = cho_solve((L, True), rhs)
    return L, mean


def resample_eta(state: ChainState, k: int | None = None) -> None:
    """Conjugate Gaussian draw of community weight column(s)."""
    L, mean = eta_full_conditional(state)
    cols = np.arange(state.K) if k is None else np.array([k])
    z = state.rng.standard_normal((state.F, cols.size))
    noise = solve_triangular(L, z, lower=True, trans="T")
    state.global_state.eta[:, cols] = mean[:, cols] + noise


def mu_full_conditional(eta: np.ndarray, lambda_S: float, lambda_F: float):
    """Per-coordinate posterior (mean, precision) for the feature-response mean.

    With zero communities this degenerates to the prior, mean 0 and
    precision lambda_S.
    """
    K = eta.shape[1]
    prec = lambda_S + K * lambda_F
    mean = lambda_F * eta.sum(axis=1) / prec
    return mean, prec


def resample_mu(state: ChainState) -> None:
    glob = state.global_state
    mean, prec = mu_full_conditional(glob.eta, glob.lambda_S, glob.lambda_F)
    glob.mu = mean + state.rng.standard_normal(state.F) / np.sqrt(prec)


def precision_posteriors(state: ChainState) -> dict:
    """Shape-rate parameters of the three gamma full conditionals."""
    h = state.hyper
    glob = state.global_state
    K, F, N = state.K, state.F, state.N
    resid_eta = glob.eta - glob.mu[:, None]
    resid_v = state.node_state.v - glob.eta.T @ state.phi.phi
    return {
        "lambda_F": (h.a_F + 0.5 * K * F, h.b_F + 0.5 * float(np.sum(resid_eta ** 2))),
        "lambda_S": (h.a_S + 0.5 * F, h.b_S + 0.5 * float(np.sum(glob.mu ** 2))),
        "lambda_V": (h.a_V + 0.5 * K * N, h.b_V + 0.5 * float(np.sum(resid_v ** 2))),
    }


def resample_precisions(state: ChainState, resample_lambda_v: bool = True) -> None:
    """Conjugate gamma draws, in fixed order lambda_F, lambda_S, lambda_V."""
    post = precision_posteriors(state)
    glob = state.global_state
    a, b = post["lambda_F"]
    glob.lambda_F = float(state.rng.gamma(a, 1.0 / b))
    a, b = post["lambda_S"]
    glob.lambda_S = float(state.rng.gamma(a, 1.0 / b))
    if resample_lambda_v:
        a, b = post["lambda_V"]
        glob.lambda_V = float(state.rng.gamma(a, 1.0 / b))


def indicator_count_matrix(state: ChainState) -> np.ndarray:
    """C[k, n] = number of indicators drawn from node n's sticks that chose k.

    Counts source indicators of entries with n as source and receiver
    indicators of entries with n as receiver; this is exactly the
    statistic the score likelihood depends on.
    """
    C = np.zeros((state.K, state.N), dtype=np.int64)
    np.add.at(C, (state.assign.s, state.edges_i), 1)
    np.add.at(C, (state.assign.r, state.edges_j), 1)
    return C


def score_log_likelihood(v: np.ndarray, counts: np.ndarray, truncated: bool = False) -> np.ndarray:
    """Per-node log likelihood of the indicators given score columns v (K, n)."""
    log_pi, _ = stick_log_matrix(v, truncated=truncated)
    return np.sum(counts * log_pi, axis=0)


def resample_v(state: ChainState, i: int | None = None,
               per_coordinate: bool = False) -> np.ndarray:
    """Metropolis-Hastings independence resample of score column(s).

    Proposes from the prior N(eta^T phi, lambda_V^-1); with a prior
    proposal the Hastings ratio reduces to the likelihood ratio of the
    indicators attached to each node (its source draws plus the receiver
    draws aimed at it). Returns the boolean acceptance array (whole-column
    mode) or the per-proposal acceptance matrix (per-coordinate mode).
    """
    nodes = np.arange(state.N) if i is None else np.atleast_1d(np.asarray(i, dtype=np.int64))
    trunc = state.truncation is not None
    glob, rng = state.global_state, state.rng
    counts = indicator_count_matrix(state)[:, nodes]
    mean = glob.eta.T @ state.phi.phi[:, nodes]
    sd = 1.0 / np.sqrt(glob.lambda_V)
    cur = state.node_state.v[:, nodes]

    if not per_coordinate:
        prop = mean + sd * rng.standard_normal(cur.shape)
        ll_cur = score_log_likelihood(cur, counts, trunc)
        ll_prop = score_log_likelihood(prop, counts, trunc)
        with np.errstate(divide="ignore"):
            logu = np.log(rng.random(nodes.size))
        accept = logu < (ll_prop - ll_cur)
        sel = nodes[accept]
        state.node_state.v[:, sel] = prop[:, accept]
        return accept

    accept_all = np.zeros((state.K, nodes.size), dtype=bool)
    work = cur.copy()
    ll_cur = score_log_likelihood(work, counts, trunc)
    for k in range(state.K):
        prop_k = mean[k] + sd * rng.standard_normal(nodes.size)
        cand = work.copy()
        cand[k] = prop_k
        ll_prop = score_log_likelihood(cand, counts, trunc)
        with np.errstate(divide="ignore"):
            logu = np.log(rng.random(nodes.size))
        acc = logu < (ll_prop - ll_cur)
        work[k, acc] = prop_k[acc]
        ll_cur = np.where(acc, ll_prop, ll_cur)
        accept_all[k] = acc
    state.node_state.v[:, nodes] = work
    return accept_all


def informed_resample_v(state: ChainState, i: int | None = None) -> np.ndarray:
    """Extra MH pass over score columns with a count-informed proposal.

    The prior-independence proposal of :func:`resample_v` explores too
    weakly for node memberships to nucleate out of the symmetric
    cold-start state, so this kernel proposes from a mixture of the prior
    and a Laplace-style fit to each stick's binomial conditional (trials =
    indicators reaching the stick, successes = indicators choosing it),
    and accepts with the exact Hastings ratio. Proposals depend only on
    conditioned-on quantities (counts, eta, precisions), never on the
    current column, so this is a valid independence-within-Gibbs move.
    """
    nodes = np.arange(state.N) if i is None else np.atleast_1d(np.asarray(i, dtype=np.int64))
    trunc = state.truncation is not None
    glob, rng = state.global_state, state.rng
    counts = indicator_count_matrix(state)[:, nodes].astype(np.float64)
    prior_mean = glob.eta.T @ state.phi.phi[:, nodes]
    lam_v = glob.lambda_V

    # per-stick binomial statistics: trials reaching stick k, successes at k
    trials = counts[::-1].cumsum(axis=0)[::-1]
    p_hat = np.clip((counts + 0.5) / (trials + 1.0), 1e-4, 1.0 - 1e-4)
    info = trials * p_hat * (1.0 - p_hat)
    fit_prec = info + lam_v
    fit_mean = (info * np.log(p_hat / (1.0 - p_hat)) + lam_v * prior_mean) / fit_prec
    fit_sd = 1.2 / np.sqrt(fit_prec)  # mild inflation for coverage

    cur = state.node_state.v[:, nodes]
    prior_sd = 1.0 / np.sqrt(lam_v)
    use_fit = rng.random(nodes.size) < 0.5
    z = rng.standard_normal(cur.shape)
    prop = np.where(use_fit, fit_mean + fit_sd * z, prior_mean + prior_sd * z)

    def log_q(v):
        lp_prior = -0.5 * ((v - prior_mean) / prior_sd) ** 2 - np.log(prior_sd)
        lp_fit = -0.5 * ((v - fit_mean) / fit_sd) ** 2 - np.log(fit_sd)
        col_prior = lp_prior.sum(axis=0)
        col_fit = lp_fit.sum(axis=0)
        hi = np.maximum(col_prior, col_fit)
        return hi + np.log(0.5 * np.exp(col_prior - hi) + 0.5 * np.exp(col_fit - hi))

    def log_prior(v):
        return (-0.5 * lam_v * (v - prior_mean) ** 2).sum(axis=0)

    ll_cur = score_log_likelihood(cur, counts, trunc)
    ll_prop = score_log_likelihood(prop, counts, trunc)
    log_alpha = (ll_prop + log_prior(prop) + log_q(cur)
                 - ll_cur - log_prior(cur) - log_q(prop))
    with np.errstate(divide="ignore"):
        logu = np.log(rng.random(nodes.size))
    accept = logu < log_alpha
    sel = nodes[accept]
    state.node_state.v[:, sel] = prop[:, accept]
    return accept


def collapsed_edge_term(A: np.ndarray, B: np.ndarray, gamma_a: float, gamma_b: float) -> float:
    """Log marginal of all edges given indicators, with W integrated out.

    Sum over community-pair cells of log Beta(A+gamma_a, B+gamma_b) -
    log Beta(gamma_a, gamma_b); empty cells contribute zero.
    """
    return float(np.sum(betaln(A + gamma_a, B + gamma_b) - betaln(gamma_a, gamma_b)))


def _gamma_logpdf(x: float, shape: float, rate: float) -> float:
    return shape * math.log(rate) - float(gammaln(shape)) + (shape - 1.0) * math.log(x) - rate * x


def log_joint(state: ChainState) -> float:
    """Collapsed joint log density of (precisions, mu, eta, v, indicators, edges).

    The block matrix W is marginalized analytically into the beta-ratio
    count term; unobserved entries contribute nothing.
    """
    h = state.hyper
    glob = state.global_state
    v = state.node_state.v
    K, F, N = state.K, state.F, state.N
    lj = (_gamma_logpdf(glob.lambda_F, h.a_F, h.b_F)
          + _gamma_logpdf(glob.lambda_S, h.a_S, h.b_S)
          + _gamma_logpdf(glob.lambda_V, h.a_V, h.b_V))
    lj += 0.5 * F * (math.log(glob.lambda_S) - _LOG_2PI) \
        - 0.5 * glob.lambda_S * float(np.sum(glob.mu ** 2))
    resid_eta = glob.eta - glob.mu[:, None]
    lj += 0.5 * K * F * (math.log(glob.lambda_F) - _LOG_2PI) \
        - 0.5 * glob.lambda_F * float(np.sum(resid_eta ** 2))
    resid_v = v - glob.eta.T @ state.phi.phi
    lj += 0.5 * K * N * (math.log(glob.lambda_V) - _LOG_2PI) \
        - 0.5 * glob.lambda_V * float(np.sum(resid_v ** 2))
    log_pi, _ = stick_log_matrix(v, truncated=state.truncation is not None)
    lj += float(np.sum(log_pi[state.assign.s, state.edges_i]))
    lj += float(np.sum(log_pi[state.assign.r, state.edges_j]))
    lj += collapsed_edge_term(state.assign.A, state.assign.B, h.gamma_a, h.gamma_b)
    return lj


def sweep(state: ChainState, resample_lambda_v: bool = True,
          per_coordinate_v: bool = False, informed_v: bool = True) -> SweepReport:
    """One full iteration; see module docstring for the fixed update order.

    ``informed_v`` adds the count-informed MH pass after the prior
    independence one; both leave the same conditional invariant.
    """
    births = _run_indicator_phase(state)
    prune_communities(state)
    acc = resample_v(state, per_coordinate=per_coordinate_v)
    if informed_v:
        informed_resample_v(state)
    resample_eta(state)
    resample_mu(state)
    resample_precisions(state, resample_lambda_v=resample_lambda_v)
    state.iteration += 1
    return SweepReport(
        iteration=state.iteration,
        log_joint=log_joint(state),
        K_occupied=state.K_occupied,
        K_instantiated=state.K,
        mh_accept_rate=float(np.mean(acc)),
        new_communities_born=births,
    )


def resimulate_edges(state: ChainState) -> None:
    """Gibbs update of the observed edges given current indicators.

    Draws the block matrix fresh from its beta prior and redraws every
    observed entry through it, which is an exact draw from the edges'
    conditional under the collapsed joint. Used by the joint-distribution
    (forward vs successive-conditional) correctness test.
    """
    K, M = state.K, state.M
    w = state.rng.beta(state.hyper.gamma_a, state.hyper.gamma_b, size=(K, K, M))
    p = w[state.assign.s, state.assign.r, state.edges_m]
    y_new = (state.rng.random(state.E) < p).astype(np.int8)
    state.edges_y = y_new
    state.data.obs[state.edges_i, state.edges_j, state.edges_m] = \
        np.where(y_new == 1, PRESENT, ABSENT).astype(np.int8)
    state.assign.A, state.assign.B = rebuild_counts(
        state.assign.s, state.assign.r, state.edges_m, state.edges_y, K, M)


# ---------------------------------------------------------------------------
# checkpoints and chain driving

_CHECKPOINT_VERSION = 1


def save_checkpoint(state: ChainState, path) -> None:
    """Serialize the full chain state, RNG included, to a .npz archive.

    Round trips exactly: arrays are stored verbatim and the bit-generator
    state as JSON.
    """
    rng_state = json.dumps(state.rng.bit_generator.state)
    np.savez_compressed(
        path,
        version=np.int64(_CHECKPOINT_VERSION),
        obs=state.data.obs,
        phi=state.phi.phi,
        feature_names=json.dumps(state.phi.feature_names),
        s=state.assign.s, r=state.assign.r,
        A=state.assign.A, B=state.assign.B,
        eta=state.global_state.eta, mu=state.global_state.mu,
        lambdas=np.array([state.global_state.lambda_S,
                          state.global_state.lambda_F,
                          state.global_state.lambda_V]),
        hyper=np.array([state.hyper.a_F, state.hyper.b_F, state.hyper.a_S,
                        state.hyper.b_S, state.hyper.a_V, state.hyper.b_V,
                        state.hyper.gamma_a, state.hyper.gamma_b]),
        v=state.node_state.v,
        iteration=np.int64(state.iteration),
        truncation=np.int64(-1 if state.truncation is None else state.truncation),
        rng_class=state.rng.bit_generator.__class__.__name__,
        rng_state=rng_state,
    )


def load_checkpoint(path) -> ChainState:
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != _CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {int(z['version'])}")
        h = z["hyper"]
        hyper = HyperParams(a_F=h[0], b_F=h[1], a_S=h[2], b_S=h[3],
                            a_V=h[4], b_V=h[5], gamma_a=h[6], gamma_b=h[7])
        names = json.loads(str(z["feature_names"]))
        phi = Metadata(z["phi"], feature_names=names)
        data = EdgeData(z["obs"])
        bitgen_cls = getattr(np.random, str(z["rng_class"]))
        rng = np.random.Generator(bitgen_cls())
        rng.bit_generator.state = json.loads(str(z["rng_state"]))
        lam = z["lambdas"]
        trunc = int(z["truncation"])
        ei, ej, em, ey = data.observed_index()
        return ChainState(
            hyper=hyper, data=data, phi=phi,
            global_state=GlobalState(eta=z["eta"].copy(), mu=z["mu"].copy(),
                                     lambda_S=float(lam[0]), lambda_F=float(lam[1]),
                                     lambda_V=float(lam[2])),
            node_state=NodeState(v=z["v"].copy()),
            assign=AssignmentState(s=z["s"].copy(), r=z["r"].copy(),
                                   A=z["A"].copy(), B=z["B"].copy()),
            rng=rng, iteration=int(z["iteration"]),
            truncation=None if trunc < 0 else trunc,
            edges_i=ei, edges_j=ej, edges_m=em, edges_y=ey,
        )


def save_samples(samples: list[PosteriorSample], path) -> None:
    arrays = {"n_samples": np.int64(len(samples))}
    for t, smp in enumerate(samples):
        arrays[f"s{t}_v"] = smp.v
        arrays[f"s{t}_A"] = smp.A
        arrays[f"s{t}_B"] = smp.B
        arrays[f"s{t}_meta"] = np.array([smp.gamma_a, smp.gamma_b,
                                         float(smp.iteration), float(smp.truncated)])
    np.savez_compressed(path, **arrays)


def load_samples(path) -> list[PosteriorSample]:
    out = []
    with np.load(path, allow_pickle=False) as z:
        for t in range(int(z["n_samples"])):
            meta = z[f"s{t}_meta"]
            out.append(PosteriorSample(
                v=z[f"s{t}_v"].copy(), A=z[f"s{t}_A"].copy(), B=z[f"s{t}_B"].copy(),
                gamma_a=float(meta[0]), gamma_b=float(meta[1]),
                iteration=int(meta[2]), truncated=bool(meta[3])))
    return out


def retained_iterations(n_sweeps: int, burn_in: float, max_samples: int) -> np.ndarray:
    """Deterministic thinning schedule: drop the burn-in, cap retained count."""
    start = int(burn_in * n_sweeps)
    post = np.arange(start + 1, n_sweeps + 1)
    if post.size == 0:
        return post
    thin = max(1, math.ceil(post.size / max_samples))
    return post[::thin]


@dataclass
class FitResult:
    state: ChainState
    samples: list
    reports: list

    @property
    def mean_log_joint(self) -> float:
        kept = [rep.log_joint for rep in self.reports
                if rep.iteration in self._retained_set]
        return float(np.mean(kept)) if kept else float("-inf")

    def __post_init__(self):
        self._retained_set = {smp.iteration for smp in self.samples}


def fit_chain(data: EdgeData, phi: Metadata, hyper: HyperParams, seed,
              n_sweeps: int, burn_in: float = 0.5, max_samples: int = 200,
              truncation: int | None = None, resample_lambda_v: bool = True,
              per_coordinate_v: bool = False, informed_v: bool = True,
              trace_path=None, checkpoint_path=None,
              checkpoint_every: int = 0) -> FitResult:
    """Run one chain end to end, retaining thinned post-burn-in samples.

    When ``checkpoint_path`` exists the chain resumes from it (RNG state
    included), so an interrupted run continues exactly where it stopped;
    the trace file is truncated back to the checkpointed iteration.
    """
    keep = set(retained_iterations(n_sweeps, burn_in, max_samples).tolist())
    samples: list[PosteriorSample] = []
    reports: list[SweepReport] = []
    trace_lines: list[str] = []

    state = None
    if checkpoint_path is not None and Path(checkpoint_path).exists():
        state = load_checkpoint(checkpoint_path)
        if state.iteration > n_sweeps:
            state = None
        else:
            aux = Path(str(checkpoint_path) + ".samples.npz")
            if aux.exists():
                samples = [s for s in load_samples(aux) if s.iteration <= state.iteration]
            if trace_path is not None and Path(trace_path).exists():
                with open(trace_path) as fh:
                    for line in fh:
                        rec = json.loads(line)
                        if rec["iter"] <= state.iteration:
                            trace_lines.append(line.rstrip("\n"))
                            reports.append(SweepReport(
                                iteration=rec["iter"], log_joint=rec["log_joint"],
                                K_occupied=rec["K_occupied"],
                                K_instantiated=rec["K_instantiated"],
                                mh_accept_rate=rec["mh_accept_rate"],
                                new_communities_born=rec["births"]))
    if state is None:
        samples, reports, trace_lines = [], [], []
        state = init_chain(data, phi, hyper, seed, truncation=truncation)

    def flush():
        if trace_path is not None:
            with open(trace_path, "w") as fh:
                for line in trace_lines:
                    fh.write(line + "\n")
        if checkpoint_path is not None:
            save_checkpoint(state, checkpoint_path)
            save_samples(samples, str(checkpoint_path) + ".samples.npz")

    while state.iteration < n_sweeps:
        rep = sweep(state, resample_lambda_v=resample_lambda_v,
                    per_coordinate_v=per_coordinate_v, informed_v=informed_v)
        reports.append(rep)
        trace_lines.append(rep.to_trace_line())
        if rep.iteration in keep:
            samples.append(PosteriorSample.from_state(state))
        if checkpoint_every and state.iteration % checkpoint_every == 0:
            flush()
    flush()
    return FitResult(state=state, samples=samples, reports=reports)
