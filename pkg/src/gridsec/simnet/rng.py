"""Seeded random streams.

Every scenario seed is expanded with ``numpy.random.SeedSequence(seed)`` and
spawned into four children, in this fixed order, each driving a
``numpy.random.Philox`` (Philox4x64-10, counter based) generator:

0. ``truth``  per step: ``state_dim`` standard normals for ``v_t`` (scaled by
   ``sigma_v``), then ``n_sensors`` standard normals for ``w_t``
1. ``attack`` per step: ``n_sensors`` Uniform[0, 1) draws per attack spec, in
   list order, then ``n_sensors + state_dim`` per misbehavior spec, drawn every
   step whether or not the spec is active
2. ``miners`` per committed block: one ``choice(L, n_miners, replace=False)``
3. ``init``   once: ``state_dim`` standard normals for the initial perturbation

Per-step draws from a stream are consecutive, so drawing a whole horizon in
one call yields the same numbers as drawing step by step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STREAM_ORDER = ("truth", "attack", "miners", "init")


@dataclass
class Streams:
    truth: np.random.Generator
    attack: np.random.Generator
    miners: np.random.Generator
    init: np.random.Generator


def make_streams(seed: int) -> Streams:
    if seed < 0 or seed >= 1 << 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAM_ORDER))
    gens = [np.random.Generator(np.random.Philox(c)) for c in children]
    return Streams(*gens)
