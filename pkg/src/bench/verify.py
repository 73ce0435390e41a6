"""
Invariant suites behind `main.py verify`. Each suite returns a SuiteResult;
the command exits non-zero when any selected suite fails.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.attention import FastWeights, TttConfig, inner_grad, inner_loss, newton_schulz5, ttt_update
from src.attention.ttt import NS_COEFFICIENTS, LossKind
from src.bench.RunConfig import RunConfig
from src.errors import ConfigError
from src.model import Model, ModelConfig, SceneState, tokenize_synthetic
from src.numerics import Rng, svd_small
from src.runner import (MinibatchStream, event_emitter, grad_accumulate_sharded, make_shard_plan,
                        run_offload_update, split_rows, verify_shard_equivalence)
from src.runner.sharded import GradientHook

FD_STEP = 1e-6
FD_RTOL = 1e-4
FD_ATOL = 1e-7
SHARD_RTOL = 1e-12
DISTRIBUTED_RTOL = 1e-10
SPECTRAL_RANGE = (0.3, 1.4)
NS_IDENTITY_VALUE = 0.7655


@dataclass
class SuiteResult:
    name: str
    passed: bool
    summary: str
    failures: List[str] = field(default_factory=list)


@dataclass
class VerifyHooks:
    """Fault injection for testing the suites themselves."""
    ns_coefficients: Tuple[float, float, float] = NS_COEFFICIENTS
    gradient_hook: Optional[GradientHook] = None


def randint(rng: Rng, lo: int, hi: int) -> int:
    """Uniform integer in [lo, hi]."""
    return lo + int(rng.uniform(1)[0] * (hi - lo + 1))


def random_ttt_instance(rng: Rng, d: int, m: int, n: int):
    theta = FastWeights(rng.normal(d, m) / np.sqrt(d), rng.normal(d, m) / np.sqrt(d), rng.normal(m, d) / np.sqrt(d))
    k = rng.normal(n, d)
    k = k / (np.linalg.norm(k, axis=1, keepdims=True) + 1e-7)
    vp = rng.normal(n, d)
    return theta, k, vp


def finite_difference_grad(theta: FastWeights, k: np.ndarray, vp: np.ndarray,
                           kind: LossKind = LossKind.DOT, h: float = FD_STEP) -> FastWeights:
    """Central differences of inner_loss, one weight entry at a time."""
    mats = [np.array(w) for w in theta]
    grads = [np.zeros_like(w) for w in mats]
    for which, w in enumerate(mats):
        for idx in np.ndindex(w.shape):
            original = w[idx]
            w[idx] = original + h
            plus = inner_loss(FastWeights(*mats), k, vp, kind)
            w[idx] = original - h
            minus = inner_loss(FastWeights(*mats), k, vp, kind)
            w[idx] = original
            grads[which][idx] = (plus - minus) / (2 * h)
    return FastWeights(*grads)


def grad_suite(seed: int, instances: int = 100) -> SuiteResult:
    rng = Rng(seed)
    failures = []
    worst = 0.0
    for i in range(instances):
        d, n = randint(rng, 2, 8), randint(rng, 1, 16)
        m = randint(rng, d, 32)
        kind = LossKind.RESIDUAL if i % 4 == 3 else LossKind.DOT
        theta, k, vp = random_ttt_instance(rng, d, m, n)
        analytic = inner_grad(theta, k, vp, kind)
        numeric = finite_difference_grad(theta, k, vp, kind)
        for name, a, f in zip(("w1", "w3", "w2"), analytic, numeric):
            err = np.abs(a - f)
            bound = FD_RTOL * np.maximum(np.abs(a), np.abs(f)) + FD_ATOL
            if np.any(err > bound):
                failures.append(f"instance {i} ({kind.value}, d={d} m={m} n={n}): {name} max error {err.max():.3e}")
            worst = max(worst, float(np.max(err / bound)))
    return SuiteResult("grad", not failures, f"{instances} instances, worst error/bound {worst:.3f}", failures)


def _relative(a: FastWeights, b: FastWeights) -> float:
    return a.max_relative_difference(b)


def shard_suite(seed: int, hooks: VerifyHooks, instances: int = 50) -> SuiteResult:
    rng = Rng(seed)
    failures = []
    rows_per_frame = 4
    for i in range(instances):
        n_frames = randint(rng, 1, 16)
        theta, k, vp = random_ttt_instance(rng, 8, 32, n_frames * rows_per_frame)
        full = inner_grad(theta, k, vp)
        for n_shards in (1, 2, 4, 8):
            plan = make_shard_plan(n_frames, n_shards)
            summed = grad_accumulate_sharded(theta, split_rows(k, vp, plan, rows_per_frame), plan)
            if _relative(summed, full) > SHARD_RTOL:
                failures.append(f"instance {i}: {n_shards}-shard gradient deviates by {_relative(summed, full):.3e}")

    report = verify_shard_equivalence(seed, sizes=(4, 8, 12), worker_counts=(1, 2, 4, 8),
                                      threshold=DISTRIBUTED_RTOL, gradient_hook=hooks.gradient_hook)
    for entry in report.entries:
        if not entry.passed:
            failures.append(f"{entry.n_frames} frames on {entry.n_workers} workers deviates by "
                            f"{entry.max_relative_deviation:.3e}; faulty workers {entry.failed_workers}")

    cfg = TttConfig()
    theta, k, vp = random_ttt_instance(rng, 8, 32, 8 * rows_per_frame)
    minibatches = [(k[f * rows_per_frame:(f + 1) * rows_per_frame], vp[f * rows_per_frame:(f + 1) * rows_per_frame])
                   for f in range(8)]
    offloaded, residency = run_offload_update(theta, MinibatchStream.from_list(minibatches), 1, cfg)
    deviation = _relative(offloaded, ttt_update(theta, k, vp, cfg))
    if deviation > SHARD_RTOL:
        failures.append(f"offloaded update deviates by {deviation:.3e}")
    if residency.peak_resident_minibatches != 1 or residency.loads != cfg.steps * len(minibatches):
        failures.append(f"unexpected residency {residency}")

    summary = f"{instances} partitions x 4 shard counts, {len(report.entries)} distributed configs, offload limit 1"
    return SuiteResult("shard", not failures, summary, failures)


def spectral_suite(seed: int, hooks: VerifyHooks, instances: int = 100) -> SuiteResult:
    rng = Rng(seed)
    coefficients = hooks.ns_coefficients
    failures = []
    lo, hi = SPECTRAL_RANGE

    x = newton_schulz5(np.eye(4), 5, 1e-7, coefficients)
    if not np.allclose(x, NS_IDENTITY_VALUE * np.eye(4), atol=1e-3):
        failures.append(f"NS5(I4) diagonal {np.diag(x)} differs from {NS_IDENTITY_VALUE}")

    for i in range(instances):
        rows = randint(rng, 2, 24)
        cols = rows + randint(rng, 4, 24)
        g = rng.normal(rows, cols)
        if i % 2:
            g = g.T
        x = newton_schulz5(g, 5, 1e-7, coefficients)
        _, s, _ = svd_small(x)
        if s.min() < lo or s.max() > hi:
            failures.append(f"instance {i} {g.shape}: singular values in [{s.min():.3f}, {s.max():.3f}]")
        if float(np.sum(x * g)) < 0:
            failures.append(f"instance {i} {g.shape}: update is not a descent direction")
    return SuiteResult("spectral", not failures, f"NS5(I4) + {instances} random matrices", failures)


def _small_model(seed: int) -> Tuple[Model, ModelConfig]:
    config = ModelConfig(layers=2, d=16, heads=2, seed=seed)
    return Model(config), config


def query_suite(seed: int) -> SuiteResult:
    model, _ = _small_model(seed)
    tokens = tokenize_synthetic(4, 3, 3, 16, seed)
    mapped, scene = model.forward(tokens)
    before = scene.to_bytes()
    failures = []

    joint = model.query(scene, tokens.select_frames([0, 1]))
    single = [model.query(scene, tokens.select_frames([f])) for f in (0, 1)]
    if not np.array_equal(joint.tokens, np.concatenate([s.tokens for s in single])):
        failures.append("joint and single-frame queries differ")

    deviation = float(np.max(np.abs(single[0].tokens - mapped.frame_tokens(0))))
    if deviation > 1e-8:
        failures.append(f"re-querying a mapped frame deviates by {deviation:.3e}")

    if scene.to_bytes() != before:
        failures.append("query modified the scene")
    return SuiteResult("query", not failures, "frozen query on a 4-frame scene", failures)


def serde_suite(seed: int) -> SuiteResult:
    model, config = _small_model(seed)
    _, scene = model.forward(tokenize_synthetic(3, 2, 2, 16, seed))
    failures = []

    data = scene.to_bytes()
    expected_size = 40 + config.layers * 3 * config.d * config.m * 4
    if len(data) != expected_size:
        failures.append(f"scene is {len(data)} bytes, expected {expected_size}")
    restored = SceneState.from_bytes(data)
    if restored.to_bytes() != data:
        failures.append("bytes -> scene -> bytes is not bit-exact")
    try:
        restored.verify(config)
    except ValueError as e:
        failures.append(f"fingerprint of a restored scene failed: {e}")
    try:
        restored.verify(ModelConfig(layers=2, d=16, heads=2, seed=seed + 1))
        failures.append("a scene verified against a different seed")
    except ValueError:
        pass
    try:
        SceneState.from_bytes(data[:4] + (2).to_bytes(4, "little") + data[8:])
        failures.append("an unknown version was accepted")
    except ValueError:
        pass
    return SuiteResult("serde", not failures, f"{len(data)}-byte scene round trip", failures)


def build_suites(cfg: RunConfig, hooks: VerifyHooks) -> Dict[str, Callable[[], SuiteResult]]:
    seed = cfg.seed
    return {
        "grad": lambda: grad_suite(seed),
        "shard": lambda: shard_suite(seed, hooks),
        "spectral": lambda: spectral_suite(seed, hooks),
        "query": lambda: query_suite(seed),
        "serde": lambda: serde_suite(seed),
    }


def cmd_verify(cfg: RunConfig, hooks: Optional[VerifyHooks] = None) -> Tuple[List[SuiteResult], int]:
    suites = build_suites(cfg, hooks or VerifyHooks())
    if cfg.suite == "all":
        selected = list(suites)
    elif cfg.suite in suites:
        selected = [cfg.suite]
    else:
        raise ConfigError(f"unknown suite {cfg.suite!r}; expected all or one of {list(suites)}")

    results = []
    for name in selected:
        result = suites[name]()
        event_emitter.emit('suite_done', result)
        results.append(result)
    return results, 0 if all(r.passed for r in results) else 1
