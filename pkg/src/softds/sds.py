"""Soft-label aggregation by EM over a Dirichlet observation model.

The model: each item i has a latent class t_i drawn from a prior nu over
J classes; member k then emits a probability vector c_i^(k) drawn from a
Dirichlet whose parameter vector is row t_i of that member's positive
J x J confusion tensor pi^(k).  Fitting alternates a damped E-step
(posterior over t, mixed into the previous posterior with weight alpha)
with an M-step (closed form for nu, a few AdamW steps on pi against the
expected complete-data log likelihood Q).

Determinism: all item reductions run over fixed-size chunks combined in
chunk order, and member reductions use order-insensitive sums, so results
are bitwise identical for any thread count, any batch size (per-item
posteriors), and any member ordering.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baselines import ds_em, ensemble_average
from .data import (
    PROB_FLOOR_DEFAULT,
    ClassPrior,
    ConfusionTensor,
    FormatError,
    PosteriorMatrix,
    PredictionSet,
    SdsConfig,
    floor_and_renormalize,
    harden,
)
from .mathutils import digamma, log_gamma, normalize_log, sorted_sum
from .optim import AdamState, adamw_step

__all__ = [
    "NumericError",
    "SdsModel",
    "FitTrace",
    "Explanation",
    "q_function",
    "q_grad_pi",
    "m_step_nu",
    "m_step_pi",
    "e_step_raw",
    "polyak_update",
    "fit",
    "online_infer",
    "explain",
    "save_model",
    "load_model",
]

# Floor applied to the class prior inside logarithms only, so that a
# prior entry that collapsed to exactly 0 keeps the E-step finite.
NU_LOG_FLOOR = 1e-300

# Target float64 element count of the per-chunk (chunk, J, K, J) scratch
# block.  Chunk boundaries depend only on array shapes - never on the
# thread count - which is what makes threaded runs byte-identical.
_CHUNK_TARGET = 1 << 20


class NumericError(RuntimeError):
    """A numeric failure (NaN/inf) was detected during fitting."""


@dataclass
class SdsModel:
    pi: ConfusionTensor
    nu: ClassPrior

    def __post_init__(self):
        if self.pi.n_classes != self.nu.n_classes:
            raise FormatError("confusion tensor and class prior disagree on J")

    @property
    def n_members(self):
        return self.pi.n_members

    @property
    def n_classes(self):
        return self.pi.n_classes


@dataclass
class FitTrace:
    """Per-iteration fit records; serializable as CSV
    ``iteration,q,alpha,millis``."""

    iteration: np.ndarray
    q: np.ndarray
    alpha: np.ndarray
    millis: np.ndarray

    def __post_init__(self):
        self.iteration = np.asarray(self.iteration, dtype=np.int64)
        self.q = np.asarray(self.q, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.millis = np.asarray(self.millis, dtype=np.float64)
        if not (self.iteration.size == self.q.size == self.alpha.size
                == self.millis.size):
            raise FormatError("trace columns must have equal length")
        if self.iteration.size and np.any(np.diff(self.iteration) <= 0):
            raise FormatError("trace iterations must be strictly increasing")

    def __len__(self):
        return self.iteration.size

    def save_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "q", "alpha", "millis"])
            for it, q, a, ms in zip(self.iteration, self.q, self.alpha, self.millis):
                writer.writerow([int(it), repr(float(q)), repr(float(a)),
                                 repr(float(ms))])

    @classmethod
    def load_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["iteration", "q", "alpha", "millis"]:
            raise FormatError(f"{path}: header must be iteration,q,alpha,millis")
        data = [[], [], [], []]
        for rn, row in enumerate(rows[1:], start=2):
            if len(row) != 4:
                raise FormatError(f"{path}, line {rn}: expected 4 columns")
            data[0].append(int(row[0]))
            for col in range(1, 4):
                data[col].append(float(row[col]))
        return cls(*data)


# ---------------------------------------------------------------------------
# internal kernels


def _model_arrays(model):
    """Accept an SdsModel or a raw (pi, nu) pair; return float64 arrays."""
    if isinstance(model, SdsModel):
        return model.pi.pi, model.nu.nu
    pi, nu = model
    return np.asarray(pi, dtype=np.float64), np.asarray(nu, dtype=np.float64)


def _check_pi(pi):
    if pi.ndim != 3 or pi.shape[1] != pi.shape[2]:
        raise ValueError("confusion tensor must be K x J x J")
    if not np.all(np.isfinite(pi)) or np.any(pi <= 0.0):
        raise ValueError("confusion entries must be finite and > 0")


def _posterior_rows(post):
    rows = post.rows if isinstance(post, PosteriorMatrix) else \
        np.asarray(post, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("posterior must be an N x J matrix")
    return rows


def _chunk_bounds(n_items, n_members, n_classes):
    per_item = max(1, n_members * n_classes * n_classes)
    step = max(1, _CHUNK_TARGET // per_item)
    return [(lo, min(lo + step, n_items)) for lo in range(0, n_items, step)]


def _map_chunks(fn, bounds, threads):
    """Apply ``fn(lo, hi)`` to every chunk; results come back in chunk
    order regardless of the worker count."""
    if threads <= 1 or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(b[0], b[1]), bounds))


def _log_nu(nu):
    return np.log(np.maximum(nu, NU_LOG_FLOOR))


def _normalizer_per_member(pi):
    """(K, J) array: sum_l ln Gamma(pi_kjl) - ln Gamma(sum_l pi_kjl)."""
    return log_gamma(pi).sum(axis=2) - log_gamma(pi.sum(axis=2))


def _log_weight_matrix(log_c, pi, nu, threads=1):
    """Unnormalized per-item log posteriors, shape (N, J):

        w[i, j] = ln nu_j + sum_{k,l} (pi_kjl - 1) ln c_ikl
                  - sum_k (sum_l ln Gamma(pi_kjl) - ln Gamma(sum_l pi_kjl))

    Each row's value is independent of the batch it is computed in.
    """
    n = log_c.shape[0]
    pim1_by_class = np.swapaxes(pi, 0, 1) - 1.0  # (J, K, L)
    const = _log_nu(nu) - sorted_sum(_normalizer_per_member(pi), axis=0)
    w = np.empty((n, pi.shape[1]))

    def chunk(lo, hi):
        prod = log_c[lo:hi, None, :, :] * pim1_by_class[None, :, :, :]
        return sorted_sum(prod.sum(axis=3), axis=2)

    bounds = _chunk_bounds(*log_c.shape)
    for (lo, hi), block in zip(bounds, _map_chunks(chunk, bounds, threads)):
        w[lo:hi] = block + const[None, :]
    return w


def _normalize_log_rows(w):
    """Row-wise exp(w - log_sum_exp(w)); per-row results do not depend on
    the other rows."""
    m = w.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(w - m).sum(axis=1, keepdims=True))
    return np.exp(w - lse)


def _evidence_stats(log_c, post_rows, threads=1):
    """S[k, j, l] = sum_i post[i, j] * ln c_ikl and the per-class mass
    vector sum_i post[i, j], accumulated over chunks in fixed order."""
    bounds = _chunk_bounds(*log_c.shape)

    def chunk(lo, hi):
        return np.einsum("cj,ckl->kjl", post_rows[lo:hi], log_c[lo:hi])

    parts = _map_chunks(chunk, bounds, threads)
    s = parts[0]
    for p in parts[1:]:
        s = s + p
    return s, post_rows.sum(axis=0)


def _q_from_stats(s, mass, pi, nu):
    normalizer = sorted_sum(_normalizer_per_member(pi), axis=0)  # (J,)
    return float(np.sum((pi - 1.0) * s) + np.sum(mass * (_log_nu(nu) - normalizer)))


def _grad_from_stats(s, mass, pi):
    correction = digamma(pi.sum(axis=2))[:, :, None] - digamma(pi)
    return s + mass[None, :, None] * correction


def _require_shapes(preds, rows, pi, nu):
    n, k, j = preds.probs.shape
    if rows.shape != (n, j):
        raise ValueError(f"posterior shape {rows.shape} does not match ({n}, {j})")
    if pi.shape != (k, j, j):
        raise ValueError(f"confusion shape {pi.shape} does not match ({k}, {j}, {j})")
    if nu.shape != (j,):
        raise ValueError(f"class prior length {nu.shape} does not match J={j}")


# ---------------------------------------------------------------------------
# public operations


def q_function(preds: PredictionSet, post, model, threads=1) -> float:
    """Expected complete-data log likelihood

        Q = sum_i sum_j post[i,j] * ( ln nu_j
              + sum_k sum_l (pi_kjl - 1) ln c_ikl
              - sum_k ( sum_l ln Gamma(pi_kjl) - ln Gamma(sum_l pi_kjl) ) )

    Raises ValueError if any pi entry is <= 0 or the prior puts zero mass
    on a class that carries posterior weight.
    """
    pi, nu = _model_arrays(model)
    _check_pi(pi)
    rows = _posterior_rows(post)
    _require_shapes(preds, rows, pi, nu)
    mass = rows.sum(axis=0)
    if np.any((nu <= 0.0) & (mass > 0.0)):
        raise ValueError("class prior is zero on a class with posterior mass")
    log_c = np.log(preds.probs)
    s, mass = _evidence_stats(log_c, rows, threads)
    return _q_from_stats(s, mass, pi, nu)


def q_grad_pi(preds: PredictionSet, post, model, threads=1) -> np.ndarray:
    """Gradient of :func:`q_function` with respect to the confusion
    tensor:

        d Q / d pi_kjl = sum_i post[i,j] *
            ( ln c_ikl - psi(pi_kjl) + psi(sum_l' pi_kjl') )
    """
    pi, nu = _model_arrays(model)
    _check_pi(pi)
    rows = _posterior_rows(post)
    _require_shapes(preds, rows, pi, nu)
    log_c = np.log(preds.probs)
    s, mass = _evidence_stats(log_c, rows, threads)
    return _grad_from_stats(s, mass, pi)


def m_step_nu(post) -> ClassPrior:
    """Closed-form prior update: nu_j = sum_i post[i,j] / sum_ij post[i,j]."""
    rows = _posterior_rows(post)
    mass = rows.sum(axis=0)
    total = float(mass.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise ValueError("posterior carries no mass")
    return ClassPrior(mass / total)


def m_step_pi(preds: PredictionSet, post, model, config: SdsConfig,
              state: AdamState, threads=1):
    """Run ``config.inner_steps`` AdamW updates on the flattened
    confusion tensor, minimizing -Q with the analytic gradient, clamping
    entries to ``config.pi_floor`` after every step.

    The optimizer state is carried, so it can persist across EM
    iterations.  Returns ``(ConfusionTensor, AdamState)``.
    """
    pi, nu = _model_arrays(model)
    _check_pi(pi)
    rows = _posterior_rows(post)
    _require_shapes(preds, rows, pi, nu)
    log_c = np.log(preds.probs)
    s, mass = _evidence_stats(log_c, rows, threads)
    shape = pi.shape
    params = pi.ravel().copy()
    for _ in range(config.inner_steps):
        grad_q = _grad_from_stats(s, mass, params.reshape(shape))
        params, state = adamw_step(
            params, -grad_q.ravel(), state,
            lr=config.learning_rate,
            beta1=config.adam_beta1, beta2=config.adam_beta2,
            eps=config.adam_epsilon, weight_decay=config.weight_decay,
        )
        params = np.maximum(params, config.pi_floor)
    return ConfusionTensor(params.reshape(shape), config.pi_floor), state


def e_step_raw(preds: PredictionSet, model, threads=1) -> PosteriorMatrix:
    """Posterior over the latent class of every item under the current
    parameters: row i is the normalized exponential of the log weights of
    :func:`_log_weight_matrix`.  No damping is applied here."""
    pi, nu = _model_arrays(model)
    _check_pi(pi)
    n, k, j = preds.probs.shape
    if pi.shape != (k, j, j) or nu.shape != (j,):
        raise ValueError("model shape does not match predictions")
    w = _log_weight_matrix(np.log(preds.probs), pi, nu, threads)
    return PosteriorMatrix(_normalize_log_rows(w), list(preds.item_ids))


def polyak_update(old, new, alpha: float) -> PosteriorMatrix:
    """Damped posterior update: rowwise (1 - alpha) * old + alpha * new.
    ``alpha = 1`` returns ``new`` exactly (no damping)."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    o = _posterior_rows(old)
    n = _posterior_rows(new)
    if o.shape != n.shape:
        raise ValueError("posterior shapes do not match")
    ids = None
    for candidate in (old, new):
        if isinstance(candidate, PosteriorMatrix):
            ids = list(candidate.item_ids)
            break
    return PosteriorMatrix((1.0 - alpha) * o + alpha * n, ids)


def _alpha_at(schedule, iteration):
    current = None
    for start, alpha in schedule:
        if start <= iteration:
            current = alpha
    if current is None:
        raise FormatError("alpha_schedule does not cover iteration 0")
    return current


def fit(preds: PredictionSet, config: SdsConfig | None = None, threads=1):
    """Full EM fit.

    Initialization: one Dawid-Skene iteration on the hardened
    predictions provides the class prior and a row-stochastic confusion
    estimate D; the confusion tensor starts at
    ``ds_init_concentration * (D + ds_init_smoothing)`` (clamped to
    ``pi_floor``), and the posterior starts from the ensemble average.

    Each iteration then runs the damped E-step (:func:`e_step_raw` mixed
    in with the alpha active per ``alpha_schedule``) and the M-step
    (:func:`m_step_nu`, then :func:`m_step_pi` with optimizer state
    carried across iterations unless ``reset_optimizer_each_m_step``).
    Q is recorded after every iteration; when ``q_rel_tolerance > 0`` the
    loop stops early once |dQ| / |Q| falls below it.

    Returns ``(SdsModel, PosteriorMatrix, FitTrace)``.  Deterministic:
    identical inputs and config produce bitwise identical results for any
    ``threads``.
    """
    cfg = config if config is not None else SdsConfig()
    cfg.validate()

    ds_model, _ = ds_em(harden(preds), 1, cfg.ds_init_smoothing)
    pi0 = np.maximum(
        cfg.ds_init_concentration * (ds_model.confusion + cfg.ds_init_smoothing),
        cfg.pi_floor,
    )
    model = SdsModel(ConfusionTensor(pi0, cfg.pi_floor), ds_model.prior)
    post = ensemble_average(preds)
    state = AdamState.zeros(pi0.size)

    iters, qs, alphas, millis = [], [], [], []
    prev_q = None
    for it in range(cfg.em_iterations):
        t0 = time.perf_counter()
        alpha = _alpha_at(cfg.alpha_schedule, it)
        post = polyak_update(post, e_step_raw(preds, model, threads), alpha)
        nu = m_step_nu(post)
        if cfg.reset_optimizer_each_m_step:
            state = AdamState.zeros(pi0.size)
        new_pi, state = m_step_pi(preds, post, SdsModel(model.pi, nu), cfg,
                                  state, threads)
        model = SdsModel(new_pi, nu)
        q = q_function(preds, post, model, threads)
        if not np.isfinite(q):
            raise NumericError(f"Q became non-finite at iteration {it}")
        iters.append(it)
        qs.append(q)
        alphas.append(alpha)
        millis.append((time.perf_counter() - t0) * 1e3)
        if (cfg.q_rel_tolerance > 0.0 and prev_q is not None and q != 0.0
                and abs(q - prev_q) / abs(q) < cfg.q_rel_tolerance):
            break
        prev_q = q

    trace = FitTrace(np.asarray(iters), np.asarray(qs), np.asarray(alphas),
                     np.asarray(millis))
    return model, PosteriorMatrix(post.rows, list(preds.item_ids)), trace


def online_infer(item_probs, model, prob_floor=PROB_FLOOR_DEFAULT) -> np.ndarray:
    """Posterior for a single arriving item under a frozen model: one
    undamped E-step on that item alone, with no parameter updates.

    ``item_probs`` is the K x J matrix of raw member probabilities for
    the item; it is floored and renormalized exactly as batch loading
    does, so the result is bitwise identical to the corresponding row of
    :func:`e_step_raw` on a batch containing the same raw values.
    """
    arr = np.asarray(item_probs, dtype=np.float64)
    pi, nu = _model_arrays(model)
    _check_pi(pi)
    if arr.shape != (pi.shape[0], pi.shape[1]):
        raise ValueError(
            f"expected a {pi.shape[0]} x {pi.shape[1]} probability matrix, "
            f"got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValueError("probabilities must be finite and >= 0")
    if np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-3):
        raise ValueError("member rows must sum to 1 within 1e-3")
    log_c = np.log(floor_and_renormalize(arr, prob_floor))[None, :, :]
    w = _log_weight_matrix(log_c, pi, nu)
    return _normalize_log_rows(w)[0]


@dataclass
class Explanation:
    """Additive decomposition of one item's unnormalized log posterior.

    For class j: ``log_prior[j]`` is ln nu_j, ``member_evidence[k, j]``
    is sum_l (pi_kjl - 1) ln c_ikl (the data-dependent vote of member k),
    and ``member_normalizer[k, j]`` is the item-independent term
    ln Gamma(sum_l pi_kjl) - sum_l ln Gamma(pi_kjl).  Their sum is
    ``log_weights``, and ``posterior`` is its normalized exponential.
    """

    item_id: str
    log_prior: np.ndarray        # (J,)
    member_evidence: np.ndarray  # (K, J)
    member_normalizer: np.ndarray  # (K, J)
    log_weights: np.ndarray      # (J,)
    posterior: np.ndarray        # (J,)

    def to_dict(self):
        return {
            "item_id": self.item_id,
            "log_prior": [float(v) for v in self.log_prior],
            "member_evidence": [[float(v) for v in row]
                                for row in self.member_evidence],
            "member_normalizer": [[float(v) for v in row]
                                  for row in self.member_normalizer],
            "log_weights": [float(v) for v in self.log_weights],
            "posterior": [float(v) for v in self.posterior],
        }


def explain(preds: PredictionSet, model, item_index: int) -> Explanation:
    """Break one item's log posterior into prior, per-member evidence,
    and per-member normalizer terms; summing them reproduces the
    unnormalized log posterior."""
    if not 0 <= item_index < preds.n_items:
        raise IndexError(f"item index {item_index} out of range [0, {preds.n_items})")
    pi, nu = _model_arrays(model)
    _check_pi(pi)
    if pi.shape[0] != preds.n_members or pi.shape[1] != preds.n_classes:
        raise ValueError("model shape does not match predictions")
    log_c = np.log(preds.probs[item_index])  # (K, J)
    evidence = ((pi - 1.0) * log_c[:, None, :]).sum(axis=2)  # (K, J)
    normalizer = -_normalizer_per_member(pi)  # (K, J)
    log_prior = _log_nu(nu)
    log_weights = log_prior + evidence.sum(axis=0) + normalizer.sum(axis=0)
    return Explanation(
        item_id=preds.item_ids[item_index],
        log_prior=log_prior,
        member_evidence=evidence,
        member_normalizer=normalizer,
        log_weights=log_weights,
        posterior=normalize_log(log_weights),
    )


# ---------------------------------------------------------------------------
# model serialization (confusion-members schema plus the class prior)


def save_model(model: SdsModel, path):
    obj = {
        "nu": [float(v) for v in model.nu.nu],
        "members": [{"pi": [[float(v) for v in row] for row in mat]}
                    for mat in model.pi.pi],
        "pi_floor": float(model.pi.pi_floor),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def load_model(path) -> SdsModel:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict) or "nu" not in obj or "members" not in obj:
        raise FormatError(f"{path}: model must be an object with nu and members")
    from .data import _parse_members_pi  # shared schema parsing

    pi = _parse_members_pi(obj, path)
    floor = float(obj.get("pi_floor", np.min(pi)))
    try:
        return SdsModel(ConfusionTensor(pi, floor),
                        ClassPrior(np.asarray(obj["nu"], dtype=np.float64)))
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
