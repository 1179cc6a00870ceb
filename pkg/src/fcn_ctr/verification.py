"""Independent oracles for the model's mathematical claims.

Four audits, each implemented without reusing the logic it checks:

  grad    central finite differences of the composite loss (auxiliary weights
          frozen, matching the training-time stop-gradient) against the
          hand-derived backward pass, over a grid of small configs;
  degree  black-box polynomial degree measurement of each branch's head
          preactivation along a ray t * x1, via vanishing forward
          differences: after L layers the exponential branch must be degree
          2^L and the linear branch degree L + 1;
  auc     exhaustive pairwise positive/negative comparison against the
          rank-based AUC;
  mask    zero-fraction census of the self-mask on standard-normal input,
          which must sit near one half.

Each suite returns a plain-text table and a pass flag; the CLI maps a
failure to exit code 3.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from fcn_ctr.features import EncodedBatch
from fcn_ctr.metrics import auc as rank_auc
from fcn_ctr.model import (ModelConfig, ModelParams, backward, forward,
                           forward_from_x1, init_model_params, self_mask)
from fcn_ctr.numerics import Rng, derive_seed, finite_diff_grad
from fcn_ctr.objective import bce, tri_bce, tri_bce_grads
from fcn_ctr.training import _dense_tensors

GRAD_TOLERANCE = 1e-4
DEGREE_TOLERANCE = 1e-6


@dataclass
class SuiteResult:
    name: str
    passed: bool
    lines: list[str]

    def render(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        header = f"== suite {self.name}: {status}"
        return "\n".join([header] + [f"  {line}" for line in self.lines])


# ---------------------------------------------------------------------------
# gradient audit
# ---------------------------------------------------------------------------


def _flatten(params: ModelParams, touched: list[np.ndarray]) -> np.ndarray:
    parts = [params.embeddings[j][rows].ravel() for j, rows in enumerate(touched)]
    parts += [p.ravel() for _, p, _ in _dense_tensors(params)]
    return np.concatenate(parts)


def _unflatten_into(vec: np.ndarray, params: ModelParams,
                    touched: list[np.ndarray]) -> None:
    pos = 0
    for j, rows in enumerate(touched):
        block = params.embeddings[j][rows]
        n = block.size
        params.embeddings[j][rows] = vec[pos:pos + n].reshape(block.shape)
        pos += n
    for _, p, _ in _dense_tensors(params):
        n = p.size
        p[...] = vec[pos:pos + n].reshape(p.shape)
        pos += n


def _flatten_grads(grads, params: ModelParams, touched: list[np.ndarray]) -> np.ndarray:
    parts = []
    for j, rows in enumerate(touched):
        sparse = grads.embeddings[j]
        if sparse is None:
            parts.append(np.zeros(rows.shape[0] * params.embeddings[j].shape[1]))
        else:
            uids, gr = sparse
            assert np.array_equal(uids, rows)
            parts.append(gr.ravel())
    parts += [g.ravel() for _, _, g in _dense_tensors(params, grads)]
    return np.concatenate(parts)


def audit_config(config: ModelConfig, num_fields: int, seed: int, n_rows: int = 2,
                 vocab: int = 3, h: float = 1e-5):
    """Max relative error between the analytic gradient and central finite
    differences of the frozen-weight composite loss, for one config."""
    f = num_fields
    rng = Rng(derive_seed(seed, "audit-data"))
    sizes = [vocab] * f
    ids = rng.integers(vocab, size=(n_rows, f))
    labels = np.arange(n_rows) % 2
    batch = EncodedBatch(ids, labels, sizes)
    params = init_model_params(config, sizes, derive_seed(seed, "init"))

    base = forward(batch, params, config, training=True)
    report = tri_bce(base.y, base.y_deep, base.y_shallow, labels)
    w_deep, w_shallow = report.w_deep, report.w_shallow

    g_deep, g_shallow = tri_bce_grads(base.y, base.y_deep, base.y_shallow,
                                      labels, report)
    grads = backward(base.trace, params, config, g_deep, g_shallow)

    touched = [np.unique(ids[:, j]) for j in range(f)]
    analytic = _flatten_grads(grads, params, touched)

    work = params.copy()

    def loss(theta: np.ndarray) -> float:
        _unflatten_into(theta, work, touched)
        res = forward(batch, work, config, training=False)
        return (bce(res.y, labels) + w_deep * bce(res.y_deep, labels)
                + w_shallow * bce(res.y_shallow, labels))

    theta0 = _flatten(params, touched)
    numeric = finite_diff_grad(loss, theta0, h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-2)
    return float(np.max(np.abs(analytic - numeric) / denom))


def default_grad_grid():
    """The full audit grid: f x d x depths^2 x mask mode."""
    for f, d, lcn, ecn, mask in itertools.product(
            (2, 3), (2, 4), range(4), range(4), ("paper", "no_ln", "identity")):
        yield f, d, lcn, ecn, mask


def grad_audit(grid=None, seeds=(1, 2, 3), h: float = 1e-5) -> SuiteResult:
    """Run the gradient audit over a config grid; fails if any relative error
    reaches the tolerance."""
    grid = list(grid) if grid is not None else list(default_grad_grid())
    lines = []
    worst = 0.0
    passed = True
    by_shape: dict[tuple, float] = {}
    for f, d, lcn, ecn, mask in grid:
        config = ModelConfig(d=d, lcn_depth=lcn, ecn_depth=ecn, mask_mode=mask,
                             dropout_rate=0.0, seed=0)
        for seed in seeds:
            err = audit_config(config, f, seed, vocab=3, h=h)
            key = (f, d, mask)
            by_shape[key] = max(by_shape.get(key, 0.0), err)
            worst = max(worst, err)
            if err >= GRAD_TOLERANCE:
                passed = False
                lines.append(
                    f"FAIL f={f} d={d} depths={lcn}/{ecn} mask={mask} "
                    f"seed={seed} max_rel_err={err:.3e}"
                )
    for (f, d, mask), err in sorted(by_shape.items()):
        lines.append(f"f={f} d={d} mask={mask:9s} max_rel_err={err:.3e}")
    lines.append(f"overall max_rel_err={worst:.3e} tolerance={GRAD_TOLERANCE:.0e}")
    return SuiteResult("grad", passed, lines)


# ---------------------------------------------------------------------------
# interaction-order probe
# ---------------------------------------------------------------------------


def _difference_magnitudes(values: np.ndarray) -> list[float]:
    mags = []
    diffs = values.astype(np.float64)
    for _ in range(1, values.shape[0]):
        diffs = np.diff(diffs)
        mags.append(float(np.abs(diffs).max()))
    return mags


def measured_degree(values: np.ndarray, tol: float = DEGREE_TOLERANCE) -> int:
    """Smallest k whose k-th forward differences vanish (relative to the
    largest difference magnitude), minus one. Returns the maximum measurable
    degree when nothing vanishes."""
    mags = _difference_magnitudes(values)
    scale = max(mags) if mags else 0.0
    if scale == 0.0:
        return 0
    for k, mk in enumerate(mags, start=1):
        if mk <= tol * scale:
            return k - 1
    return len(mags)


def degree_probe(ecn_depth: int, lcn_depth: int, seed: int = 0,
                 num_fields: int = 2, d: int = 4, grid_step: float = 0.5,
                 weight_scale: float = 3.0, tol: float = DEGREE_TOLERANCE):
    """Measure each branch's polynomial degree in t along t * x1.

    Runs the real forward pass with the identity mask, zero biases, and no
    dropout, on an arithmetic grid of (expected degree + 3) points centered
    on t = 0, then reads the degree off the forward-difference table. The
    centered grid keeps the difference table well conditioned up to degree
    16, and the probe draws its cross weights at unit scale so the
    top-degree coefficient dominates at the grid edge. Overflowing grids are
    retried once at a tenth of the step.
    """
    config = ModelConfig(d=d, lcn_depth=lcn_depth, ecn_depth=ecn_depth,
                         mask_mode="identity", dropout_rate=0.0, seed=seed)
    sizes = [3] * num_fields
    params = init_model_params(config, sizes, derive_seed(seed, "init"))
    rng = Rng(derive_seed(seed, "probe-direction"))
    for layer in params.lcn_layers + params.ecn_layers:
        layer.w[...] = rng.uniform(-weight_scale, weight_scale, layer.w.shape)
        layer.b[:] = 0.0
    params.heads.b_deep[:] = 0.0
    params.heads.b_shallow[:] = 0.0
    direction = rng.uniform(-1.0, 1.0, d * num_fields)

    def branch_values(npts: int, step: float):
        ts = step * (np.arange(npts) - (npts - 1) / 2.0)
        x1 = ts[:, None] * direction[None, :]
        res = forward_from_x1(x1, params, config, training=False, want_trace=True)
        return res.trace.z_deep, res.trace.z_shallow

    def measure(expected: int, pick) -> int:
        npts = expected + 3
        step = grid_step
        for attempt in range(2):
            zs = pick(*branch_values(npts, step))
            if np.isfinite(zs).all():
                return measured_degree(zs, tol)
            step /= 10.0
        raise FloatingPointError(
            f"degree probe overflowed even at grid step {step * 10}"
        )

    ecn_degree = measure(2 ** ecn_depth, lambda zd, zs: zd)
    lcn_degree = measure(lcn_depth + 1, lambda zd, zs: zs)
    return ecn_degree, lcn_degree


def degree_suite(seed: int = 0) -> SuiteResult:
    lines = []
    passed = True
    for depth in (1, 2, 3, 4):
        got, _ = degree_probe(ecn_depth=depth, lcn_depth=0, seed=seed)
        ok = got == 2 ** depth
        passed &= ok
        lines.append(f"ecn depth={depth} expected_degree={2 ** depth} measured={got}"
                     + ("" if ok else "  FAIL"))
    for depth in (1, 2, 3):
        _, got = degree_probe(ecn_depth=0, lcn_depth=depth, seed=seed)
        ok = got == depth + 1
        passed &= ok
        lines.append(f"lcn depth={depth} expected_degree={depth + 1} measured={got}"
                     + ("" if ok else "  FAIL"))
    return SuiteResult("degree", passed, lines)


# ---------------------------------------------------------------------------
# pairwise AUC oracle
# ---------------------------------------------------------------------------


def pairwise_auc_oracle(scores: np.ndarray, labels: np.ndarray) -> float:
    """Exhaustive positive/negative pair counting with ties worth one half.
    Quadratic; intended for n <= 5000."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels != 1]
    if pos.size == 0:
        raise ValueError("pairwise auc undefined: no positive labels")
    if neg.size == 0:
        raise ValueError("pairwise auc undefined: no negative labels")
    if pos.size * neg.size > 25_000_000:
        raise ValueError("pairwise auc oracle limited to n <= 5000")
    diff = pos[:, None] - neg[None, :]
    wins = (diff > 0).sum() + 0.5 * (diff == 0).sum()
    return float(wins / (pos.size * neg.size))


def auc_suite(n_batches: int = 200, max_n: int = 2000, seed: int = 0) -> SuiteResult:
    rng = Rng(derive_seed(seed, "auc-suite"))
    lines = []
    passed = True
    worst = 0.0
    hand = rank_auc(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1]))
    if hand != 0.75:
        passed = False
        lines.append(f"FAIL hand example: expected 0.75, got {hand!r}")
    for i in range(n_batches):
        n = int(rng.integers(max_n - 10, size=None)) + 10
        scores = rng.random(n)
        if i % 2 == 0:
            scores = np.round(scores, 2)  # force heavy ties
        labels = (rng.random(n) < 0.5).astype(np.int64)
        if labels.sum() == 0:
            labels[0] = 1
        if labels.sum() == n:
            labels[0] = 0
        gap = abs(rank_auc(scores, labels) - pairwise_auc_oracle(scores, labels))
        worst = max(worst, gap)
        if gap > 1e-12:
            passed = False
            lines.append(f"FAIL batch {i}: |rank - pairwise| = {gap:.3e}")
    lines.append(f"hand example auc={hand}")
    lines.append(f"{n_batches} random batches, max |rank - pairwise| = {worst:.3e}")
    return SuiteResult("auc", passed, lines)


# ---------------------------------------------------------------------------
# mask sparsity census
# ---------------------------------------------------------------------------


def mask_census(dim: int, trials: int, rng: Rng, ln_epsilon: float = 1e-5):
    """Zero-fraction statistics of the self-mask (default gain/bias) over
    standard-normal inputs. Returns (mean, std, per-trial fractions)."""
    if dim < 2:
        raise ValueError(f"mask census needs dim >= 2, got {dim}")
    gain = np.ones(dim)
    beta = np.zeros(dim)
    c = rng.standard_normal((trials, dim))
    masked, _ = self_mask(c, gain, beta, "paper", ln_epsilon)
    fracs = (masked == 0.0).mean(axis=1)
    return float(fracs.mean()), float(fracs.std()), fracs


def mask_suite(dim: int = 1024, trials: int = 1000, seed: int = 0) -> SuiteResult:
    rng = Rng(derive_seed(seed, "mask-census"))
    mean, std, _ = mask_census(dim, trials, rng)
    passed = 0.45 <= mean <= 0.55
    lines = [f"dim={dim} trials={trials} zero_fraction mean={mean:.4f} std={std:.4f}",
             f"target band [0.45, 0.55]: {'ok' if passed else 'violated'}"]
    return SuiteResult("mask", passed, lines)


SUITES = {
    "grad": grad_audit,
    "degree": degree_suite,
    "auc": auc_suite,
    "mask": mask_suite,
}


def run_suites(names) -> tuple[bool, str]:
    """Run the selected suites; returns (all passed, rendered report)."""
    results = [SUITES[name]() for name in names]
    text = "\n".join(r.render() for r in results)
    return all(r.passed for r in results), text
