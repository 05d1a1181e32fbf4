"""Ablation measurements on trained gating networks."""
from __future__ import annotations

import numpy as np

from .policy import gating_probs


def specialization_fraction(gating_rows, epsilon: float) -> float:
    """Share of gate activations within ``epsilon`` of 0 or 1."""
    G = np.asarray(gating_rows, dtype=float)
    if G.size == 0:
        return 0.0
    near = (G <= epsilon) | (G >= 1.0 - epsilon)
    return float(np.mean(near))


def option_trace(checkpoint, trajectory) -> np.ndarray:
    """Most probable option at each visited step (ties go to the lowest index)."""
    states = trajectory.states[:-1] if hasattr(trajectory, "states") else np.asarray(trajectory)
    if states.shape[1] != checkpoint.policy.obs_dim:
        raise ValueError("trajectory states do not match the checkpoint's observation size")
    return np.argmax(gating_probs(checkpoint.gating, states), axis=1)


def run_lengths(trace) -> np.ndarray:
    """Lengths of maximal constant segments of an integer sequence."""
    trace = np.asarray(trace)
    if trace.size == 0:
        return np.zeros(0, dtype=int)
    cuts = np.flatnonzero(np.diff(trace)) + 1
    bounds = np.concatenate([[0], cuts, [trace.size]])
    return np.diff(bounds)


def demo_gating_distribution(gating, demos) -> dict:
    """Mean gate vector over all states of each demonstration group."""
    if demos.n_episodes == 0:
        raise ValueError("no demonstrations to analyse")
    out = {}
    for label, episodes in demos.groups:
        states = np.concatenate(episodes)
        out[label] = gating_probs(gating, states).mean(axis=0)
    return out
