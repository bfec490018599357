"""Shared fixtures and random-instance builders for the test suite."""

from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np
import pytest

from macroplace.netlist import (
    Module,
    ModuleKind,
    Net,
    Netlist,
    Placement,
    PinOffset,
)


def make_module(i: int, w: float, h: float, kind=ModuleKind.MACRO, pins=()) -> Module:
    return Module(
        id=i, width=w, height=h, kind=kind,
        pins=tuple(PinOffset(dx, dy) for dx, dy in pins), name=f"o{i}",
    )


def random_netlist(
    rng: np.random.Generator,
    n_modules: int,
    n_nets: int,
    centered_pins: bool = False,
) -> tuple[Netlist, Placement]:
    """Small random netlist plus placement, independent of the generator
    under test. Every module gets one pin per net endpoint it serves."""
    widths = rng.uniform(0.05, 0.4, n_modules)
    heights = rng.uniform(0.05, 0.4, n_modules)
    pins: list[list[tuple[float, float]]] = [[] for _ in range(n_modules)]
    nets = []
    for j in range(n_nets):
        degree = int(rng.integers(2, 5))
        members = rng.choice(n_modules, size=min(degree, n_modules), replace=False)
        endpoints = []
        for m in members:
            if centered_pins:
                off = (0.0, 0.0)
            else:
                off = (
                    float(rng.uniform(-0.5, 0.5) * widths[m]),
                    float(rng.uniform(-0.5, 0.5) * heights[m]),
                )
            pins[m].append(off)
            endpoints.append((int(m), len(pins[m]) - 1))
        nets.append(Net(id=j, endpoints=tuple(endpoints), name=f"n{j}"))
    modules = tuple(
        make_module(i, widths[i], heights[i], ModuleKind.MACRO, pins[i])
        for i in range(n_modules)
    )
    netlist = Netlist(modules=modules, nets=tuple(nets), canvas=(10.0, 10.0), name="rand")
    placement = Placement(rng.uniform(-0.8, 0.8, size=(n_modules, 2)))
    return netlist, placement


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# Session-scoped toy corpus + trained model for the behavioral tests
# (acceptance criteria 4/5/8/9/10 and the trained-sampler module examples).
# ---------------------------------------------------------------------------

CORPUS_SEED = 42


@pytest.fixture(scope="session")
def toy_corpus():
    from macroplace.syngen import build_dataset

    entries, _ = build_dataset(
        12, n_range=(24, 34), variants=8, seed=CORPUS_SEED, utilization=0.30
    )
    nets = sorted({id(e[0]): e[0] for e in entries}.values(), key=lambda n: n.name)
    return entries, nets


@pytest.fixture(scope="session")
def trained_model(toy_corpus):
    """Score network trained from scratch on the toy corpus.

    Set MACROPLACE_ACCEPT_CKPT to a file path to cache/reuse the checkpoint
    across local runs.
    """
    from macroplace.scorenet import (
        ScoreNetConfig,
        TrainConfig,
        init_params,
        load_checkpoint,
        save_checkpoint,
        train,
    )

    entries, _ = toy_corpus
    cached = os.environ.get("MACROPLACE_ACCEPT_CKPT", "")
    if cached and Path(cached).exists():
        return load_checkpoint(cached)
    params = init_params(ScoreNetConfig(width=64), seed=0)
    tconf = TrainConfig(
        steps=3000, batch_size=16, T=200, schedule="cosine", seed=0, ema_decay=0.999
    )
    started = time.time()
    params, curve = train(params, entries, tconf)
    elapsed = time.time() - started
    assert elapsed < 1800.0, "training exceeded the 30-minute budget"
    first = np.mean([l for _, l in curve[:50]])
    last = np.mean([l for _, l in curve[-50:]])
    assert last < first, "training did not reduce the loss"
    if cached:
        save_checkpoint(params, cached)
    return params
