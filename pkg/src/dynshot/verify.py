"""Invariant suite behind ``dynshot verify``."""

from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import reference, relational
from .assembly import ModelCache
from .graph import Graph, ParamRegistry, grad_check
from .metric import FArch
from .relational import GArch, build_g, build_relational
from .trainer import OptState, TrainConfig, momentum_step, nesterov_step

MUTATIONS = ("mean-to-sum",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@contextlib.contextmanager
def mutation(name: str | None):
    """Swap in a deliberately wrong implementation for negative controls."""
    if name is None:
        yield
        return
    if name != "mean-to-sum":
        raise ValueError(f"unknown mutation {name!r}; expected one of {MUTATIONS}")
    saved = relational._REDUCTION["mode"]
    relational._REDUCTION["mode"] = "sum"
    try:
        yield
    finally:
        relational._REDUCTION["mode"] = saved


def check_grad(sizes=(2, 3, 4, 5), s_v: int = 8, tol: float = 1e-4, batch: int = 2):
    worst = 0.0
    for n in sizes:
        cache = ModelCache(s_v, GArch(), FArch(), ParamRegistry(100 + n))
        model = cache.get_or_assemble(n)
        rng = np.random.default_rng(n)
        feeds = model.feeds(rng.normal(size=(batch, n, s_v)), rng.normal(size=(batch, s_v)),
                            np.arange(batch) % 2)
        worst = max(worst, grad_check(model.graph, model.loss, feeds))
    return worst < tol, f"max relative error {worst:.3e} (tol {tol:g})"


def check_oracle(sizes=range(2, 7), seeds=range(50), s_v: int = 6, tol: float = 1e-12):
    arch_g, arch_f = GArch(hidden_sizes=[12], embed_dim=6), FArch(hidden_sizes=[12])
    worst = 0.0
    for seed in seeds:
        cache = ModelCache(s_v, arch_g, arch_f, ParamRegistry(seed))
        rng = np.random.default_rng(seed)
        for n in sizes:
            model = cache.get_or_assemble(n)
            support, query = rng.normal(size=(n, s_v)), rng.normal(size=s_v)
            want = reference.logits(cache.registry.state(), support, query, arch_g, arch_f)
            worst = max(worst, float(np.max(np.abs(model.logits_for(support, query) - want))))
    return worst <= tol, f"max |graph - oracle| {worst:.3e} (tol {tol:g})"


def check_collapse(sizes=range(2, 7), s_v: int = 8):
    """n copies of one example must embed exactly to g(c, c)."""
    arch = GArch()
    rng = np.random.default_rng(0)
    bad = []
    for n in sizes:
        g = Graph(ParamRegistry(n))
        x = g.input([n, s_v])
        r = build_relational(g, x, n, arch)
        a = g.input([s_v])
        single = build_g(g, a, a, arch)
        c = rng.normal(size=s_v)
        out = g.forward({x: np.tile(c, (n, 1)), a: c})
        if not np.array_equal(out[r], out[single]):
            bad.append(n)
    return not bad, "exact for all n" if not bad else f"R != g(c,c) for n={bad}"


def check_census(sizes=range(2, 9), s_v: int = 8):
    cache = ModelCache(s_v, GArch(), FArch(), ParamRegistry())
    cache.get_or_assemble(2)
    count = cache.registry.size
    wrong = [n for n in sizes
             if cache.get_or_assemble(n).graph.count(tag="g") != math.comb(n, 2)]
    same = cache.registry.size == count
    ok = same and not wrong
    return ok, f"param count {count} -> {cache.registry.size}; census mismatches {wrong}"


def check_sharing(s_v: int = 8):
    cache = ModelCache(s_v, GArch(), FArch(), ParamRegistry(1))
    m3, m5 = cache.get_or_assemble(3), cache.get_or_assemble(5)
    rng = np.random.default_rng(1)
    s5, q5 = rng.normal(size=(5, s_v)), rng.normal(size=s_v)
    before = m5.logits_for(s5, q5).copy()
    feeds = m3.feeds(rng.normal(size=(8, 3, s_v)), rng.normal(size=(8, s_v)), np.arange(8) % 2)
    m3.graph.backward(m3.loss, m3.graph.forward(feeds))
    momentum_step(cache.registry, OptState(cache.registry), TrainConfig(alpha=0.05))
    moved = float(np.max(np.abs(m5.logits_for(s5, q5) - before)))
    return moved > 0, f"model(5) logits moved by {moved:.3e} after a step through model(3)"


def check_cache(n: int = 6, s_v: int = 32):
    cache = ModelCache(s_v, GArch(), FArch(), ParamRegistry())
    t0 = time.perf_counter()
    model = cache.get_or_assemble(n)
    miss = time.perf_counter() - t0
    nodes, params = len(model.graph.nodes), cache.registry.size
    t0 = time.perf_counter()
    for _ in range(100):
        again = cache.get_or_assemble(n)
    hit = (time.perf_counter() - t0) / 100
    ok = (again is model and len(model.graph.nodes) == nodes
          and cache.registry.size == params and hit < 0.01 * miss)
    return ok, f"hit {hit * 1e6:.2f}us vs miss {miss * 1e6:.0f}us; zero new nodes/params"


def check_optimizer(tol: float = 1e-12):
    def trace(step, mu, grads=(2.0, 2.0)):
        reg = ParamRegistry()
        reg.get_or_create("w", [1], lambda s, r: np.ones(s))
        state = OptState(reg)
        cfg = TrainConfig(alpha=0.1, mu=mu)
        out = []
        for g in grads:
            reg["w"].grad[...] = g
            step(reg, state, cfg)
            out.append(float(reg["w"].value[0]))
        return out

    classic = trace(momentum_step, 0.9)
    nesterov = trace(nesterov_step, 0.9)
    errs = [abs(classic[0] - 0.8), abs(classic[1] - 0.42),
            abs(nesterov[0] - 0.62), abs(nesterov[1] - 0.078)]
    grads = (2.0, -1.0, 0.5)
    same = trace(momentum_step, 0.0, grads) == trace(nesterov_step, 0.0, grads)
    return max(errs) <= tol and same, f"max trace error {max(errs):.1e}; mu=0 coincide {same}"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "grad": check_grad,
    "oracle": check_oracle,
    "collapse": check_collapse,
    "census": check_census,
    "sharing": check_sharing,
    "cache": check_cache,
    "optimizer": check_optimizer,
}


def run_checks(only=None, breakage: str | None = None) -> list[CheckResult]:
    names = list(only) if only else list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks {unknown}; available: {list(CHECKS)}")
    results = []
    with mutation(breakage):
        for name in names:
            t0 = time.perf_counter()
            try:
                passed, detail = CHECKS[name]()
            except Exception as exc:  # a crash counts as a failed check
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(CheckResult(name, passed, detail, time.perf_counter() - t0))
    return results
