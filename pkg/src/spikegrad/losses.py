"""Classification objectives over trial outputs.

The TTFS loss is softmax cross-entropy over negative first-spike times plus
a regularizer pushing the target spike earlier; the state-based losses are
softmax cross-entropy over logits read from the output membrane potential
(running max, integral, or exponentially weighted integral).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var


def log_softmax(v):
    """Numerically stabilized log-softmax of a vector Var."""
    m = ad.max_reduce(v)
    shifted = v - m
    lse = ad.log(ad.vsum(ad.exp(shifted)))
    return shifted - lse


def clamp_silent(times, t_max, tape):
    """Replace silent (+inf / None) spike times by t_max, without gradient."""
    out = []
    for t in times:
        if t is None or not np.isfinite(t.value):
            out.append(tape.constant(float(t_max)))
        else:
            out.append(t)
    return out


def ttfs_loss(times, target, tau0=0.5, tau1=6.4, alpha=0.003):
    """Cross-entropy over -t/tau0 plus alpha*(exp(t_target/tau1) - 1).

    ``times`` must already have silent outputs clamped to the trial horizon.
    """
    v = ad.stack(times)
    nll = -ad.index(log_softmax(v * (-1.0 / tau0)), target)
    reg = (ad.exp(times[target] * (1.0 / tau1)) - 1.0) * alpha
    return nll + reg


def state_logits(trial, kind):
    """Select the logit accumulator vector for the given state-loss kind."""
    sel = {"max": trial.v_max, "integral": trial.z_int, "exp_integral": trial.z_exp}
    if kind not in sel:
        raise ValueError(f"unknown state-logit kind: {kind!r}")
    z = sel[kind]
    if z is None:
        raise ValueError(f"trial carries no {kind!r} accumulator")
    return z


def state_loss(logits, target):
    """Softmax cross-entropy over membrane-derived logits."""
    return -ad.index(log_softmax(logits), target)


def xor_windowed_loss(trial, target):
    """Cross-entropy over the cue-gated exponential-integral logits.

    The accumulation window (from the first cue spike to trial end) is
    applied by the network's gated observer; this is Eq.-style cross-entropy
    over those logits.
    """
    return state_loss(state_logits(trial, "exp_integral"), target)


def classify(trial, mode):
    """Predicted class: earliest spike (ttfs) or largest logit (state).

    Ties break toward the lowest index; an all-silent ttfs trial therefore
    yields class 0.
    """
    if mode == "ttfs":
        vals = np.array(
            [np.inf if t is None else t.value for t in trial.times], dtype=np.float64
        )
        return int(np.argmin(vals))
    return int(np.argmax(trial.value if isinstance(trial, Var) else trial))
