"""Fixed-step ODE integration between boundary times with event handling.

A segment runs from one boundary time to the next (input spikes, detected
spikes, observation times, trial end) with explicit Euler steps of size h
and a final partial step.  When a spike condition changes sign on a step
the event is localized by bisection on the step interpolant; the event
time enters the tape as a custom node whose backward applies the implicit
function theorem, so gradients are exact with respect to the discretized
forward computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var, _acc

ROOT_TOL = 1e-10  # event-time bisection tolerance (ms)
MASK_TOL = 1e-9  # simultaneity tolerance on spike-condition values
EPS_GRAD = 1e-8  # grazing threshold for the IFT denominator


class DivergenceError(RuntimeError):
    """Raised when the state stops being finite during integration."""


@dataclass
class StepInterpolant:
    """Committed Euler step: y(t_n + s) = y_n + s * f_n for s in [0, h]."""

    t_n: Var
    y_n: dict
    f_n: dict
    h: float


@dataclass
class EventHit:
    """A localized spike event across the integrated populations."""

    t_event: Var
    masks: list  # per-population boolean arrays
    anchor: tuple  # (population, neuron) that defined the root
    states: list  # per-population states committed at t_event
    denominator: float
    grazing: bool
    residual: float


@dataclass
class SimDiagnostics:
    """Per-trial numerical health log."""

    grazing_events: list = field(default_factory=list)
    max_event_residual: float = 0.0

    def record_event(self, t, pop, neuron, denom, residual):
        if abs(denom) <= EPS_GRAD:
            self.grazing_events.append((t, pop, neuron, denom))
        if abs(residual) > self.max_event_residual:
            self.max_event_residual = abs(residual)


@dataclass
class SegmentResult:
    states: list
    event: EventHit | None
    trace: list  # (t_value, [channel-value dicts]) when tracing is on


def _state_conditions(model, tape, t_var, y):
    """Spike-condition values at an existing state, recording nothing."""
    rec = tape.recording
    tape.recording = False
    try:
        return model.spike_condition(t_var, y).value
    finally:
        tape.recording = rec


class _InterpProbe:
    """Reusable interpolant probe: Var shells whose values move with s."""

    def __init__(self, tape, t_val, y, deriv):
        self.tape = tape
        self.t_val = t_val
        self.t = Var(t_val, tape, -1)
        self.state = {}
        self.moving = []
        for c, v in y.items():
            if isinstance(v, Var):
                d = deriv.get(c) if deriv else None
                shell = Var(v.value, tape, -1)
                self.state[c] = shell
                if d is not None:
                    self.moving.append((shell, v.value, d.value))
            else:
                self.state[c] = v

    def conditions(self, model, s):
        self.t.value = self.t_val + s
        for shell, y0, f0 in self.moving:
            shell.value = y0 + s * f0
        rec = self.tape.recording
        self.tape.recording = False
        try:
            return model.spike_condition(self.t, self.state).value
        finally:
            self.tape.recording = rec


def _cond_values(model, tape, t_val, y, deriv, s):
    return _InterpProbe(tape, t_val, y, deriv).conditions(model, s)


def _bisect_probe(model, probe, neuron, hi):
    """Earliest root of the neuron's condition on the interpolant over [0, hi]."""
    lo = 0.0
    while hi - lo > ROOT_TOL:
        mid = 0.5 * (lo + hi)
        if probe.conditions(model, mid)[neuron] >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def event_time_adjoint(cot, gt, gy, f_vals, s_star, extern):
    """Implicit-function-theorem cotangents of a located event time.

    Given the loss cotangent ``cot`` of t*, the condition partials
    ``gt`` (d g/d t), ``gy`` (d g/d y per channel at the event state) and the
    step slopes ``f_vals``, returns the denominator and the cotangents of
    (t_n, y_n per channel, f_n per channel, external parameters).
    """
    gyf = 0.0
    for c, gc in gy.items():
        fv = f_vals.get(c)
        if fv is not None:
            gyf += float(np.dot(gc, fv)) if type(gc) is not float else gc * fv
    denom = gt + gyf
    k = cot / denom
    dt_n = k * gyf
    dy = {c: gc * (-k) for c, gc in gy.items()}
    df = {c: gc * (-k * s_star) for c, gc in gy.items()}
    dext = {i: gp * (-k) for i, gp in extern.items()}
    return denom, dt_n, dy, df, dext


def _register_event_time(tape, model, t_var, y, deriv, s_star, anchor_neuron, diag):
    """Create the t* tape node with the IFT backward rule.

    The spike-condition partials at (t*, y-) are obtained by evaluating the
    condition on a scratch tape segment and running an isolated reverse
    sweep; deposits that land on pre-existing nodes are the partials with
    respect to model parameters referenced by the condition.
    """
    t_star_val = t_var.value + s_star
    if not tape.recording:
        return Var(t_star_val, tape, -1), float("inf"), False, 0.0
    y_minus = {}
    for c, v in y.items():
        if isinstance(v, Var):
            d = deriv.get(c)
            y_minus[c] = v.value if d is None else v.value + s_star * d.value
        else:
            y_minus[c] = v

    mark = tape.mark()
    t_leaf = tape.leaf(t_star_val)
    y_leafs = {}
    scratch = {}
    for c, v in y.items():
        if isinstance(v, Var):
            y_leafs[c] = tape.leaf(y_minus[c])
            scratch[c] = y_leafs[c]
        else:
            scratch[c] = v
    g_vec = model.spike_condition(t_leaf, scratch)
    g_anchor = ad.index(g_vec, anchor_neuron)
    residual = g_anchor.value
    buf = tape.partials(g_anchor, mark)
    tape.truncate(mark)

    gt = buf.get(t_leaf._idx) or 0.0
    gy = {}
    for c, lv in y_leafs.items():
        g = buf.get(lv._idx)
        if g is not None:
            gy[c] = g
    extern = {i: v for i, v in buf.items() if i < mark and v is not None}

    f_vals = {c: d.value for c, d in deriv.items()}
    gyf = 0.0
    for c, gc in gy.items():
        fv = f_vals.get(c)
        if fv is not None:
            gyf += float(np.dot(gc, fv))
    denom = gt + gyf
    grazing = abs(denom) <= EPS_GRAD

    t_idx = t_var._idx
    triples = []
    for c, gc in gy.items():
        d = deriv.get(c)
        yi = y[c]._idx
        fi = d._idx if d is not None else -1
        triples.append((yi, fi, gc))
    extern_items = list(extern.items())
    parent_ids = [t_idx] + [tr[0] for tr in triples] + [tr[1] for tr in triples]
    parent_ids += [i for i, _ in extern_items]

    def factory(out_ids):
        oi = out_ids[0]

        def bwd(buf):
            g = buf[oi]
            if g is None:
                return
            k = g / denom
            _acc(buf, t_idx, k * gyf)
            for yi, fi, gc in triples:
                _acc(buf, yi, gc * (-k))
                if fi >= 0:
                    _acc(buf, fi, gc * (-k * s_star))
            for pid, gp in extern_items:
                _acc(buf, pid, gp * (-k))

        return bwd

    t_star = tape.raw_custom([t_star_val], parent_ids, factory)[0]
    if diag is not None:
        diag.record_event(t_star_val, None, anchor_neuron, denom, residual)
    return t_star, denom, grazing, residual


def localize_event(model, interpolant, tape=None, diag=None):
    """Locate the earliest upward zero crossing on a committed step.

    Returns (t_event, mask): the event time as a tape node carrying the
    implicit-function-theorem adjoint, and the boolean spiking mask (all
    neurons within MASK_TOL of threshold at t_event that were strictly
    negative at the step start).
    """
    tape = tape or interpolant.t_n._tape
    t_var, y, deriv, h = (
        interpolant.t_n,
        interpolant.y_n,
        interpolant.f_n,
        interpolant.h,
    )
    probe = _InterpProbe(tape, t_var.value, y, deriv)
    c0 = probe.conditions(model, 0.0)
    c1 = probe.conditions(model, h)
    candidates = np.where((c0 < 0.0) & (c1 >= 0.0))[0]
    if candidates.size == 0:
        raise RuntimeError("no sign change in bracket")
    s_star, anchor = min(
        ((_bisect_probe(model, probe, int(n), h), int(n)) for n in candidates),
        key=lambda sn: (sn[0], sn[1]),
    )
    t_star, _, _, _ = _register_event_time(
        tape, model, t_var, y, deriv, s_star, anchor, diag
    )
    c_star = probe.conditions(model, s_star)
    mask = (c_star >= -MASK_TOL) & (c0 < 0.0)
    mask[anchor] = True
    return t_star, mask


def integrate_populations(
    models, states, t_start, t_end, h, diag=None, trace=None
):
    """Advance all populations jointly over [t_start, t_end].

    Steps of size h (final partial step as needed); halts at the earliest
    localized spike event across populations.  All state arithmetic is
    recorded on the tape; spike-condition probes are value-only.
    """
    tape = t_start._tape
    t = t_start
    end_val = t_end.value
    conds = [_state_conditions(m, tape, t, y) for m, y in zip(models, states)]
    while end_val - t.value > 1e-12:
        remaining = end_val - t.value
        if remaining > h * (1.0 + 1e-9):
            dt = h
            dt_val = h
            t_next = t + h
        else:
            dt = ad.sub(t_end, t)
            dt_val = remaining
            t_next = t_end
        derivs = [m.dynamics(t, y) for m, y in zip(models, states)]
        new_states = []
        for p, (m, y, d) in enumerate(zip(models, states, derivs)):
            ny = dict(y)
            for c, dv in d.items():
                ny[c] = ad.axpy(dt, dv, y[c])
                v = ny[c].value
                if not np.isfinite(v).all():
                    bad = int(np.argmin(np.isfinite(np.atleast_1d(v))))
                    raise DivergenceError(
                        f"non-finite state: population {p}, channel {c!r}, "
                        f"neuron {bad}, t={t_next.value:.6f} ms"
                    )
            new_states.append(m.commit_update(t_next, ny))

        new_conds = [
            _state_conditions(m, tape, t_next, y)
            for m, y in zip(models, new_states)
        ]
        crossing = []
        for p in range(len(models)):
            cand = np.where((conds[p] < 0.0) & (new_conds[p] >= 0.0))[0]
            if cand.size:
                crossing.append((p, cand))
        if crossing:
            best = None
            probes = {}
            for p, cand in crossing:
                probes[p] = _InterpProbe(tape, t.value, states[p], derivs[p])
                for n in cand:
                    s = _bisect_probe(models[p], probes[p], int(n), dt_val)
                    key = (s, p, int(n))
                    if best is None or key < best:
                        best = key
            s_star, p_star, n_star = best
            t_star, denom, grazing, residual = _register_event_time(
                tape,
                models[p_star],
                t,
                states[p_star],
                derivs[p_star],
                s_star,
                n_star,
                diag,
            )
            dts = ad.sub(t_star, t)
            ev_states = []
            masks = []
            for p, (m, y, d) in enumerate(zip(models, states, derivs)):
                ny = dict(y)
                for c, dv in d.items():
                    ny[c] = ad.axpy(dts, dv, y[c])
                ny = m.commit_update(t_star, ny)
                ev_states.append(ny)
                probe = probes.get(p) or _InterpProbe(tape, t.value, y, d)
                cs = probe.conditions(m, s_star)
                mask = (cs >= -MASK_TOL) & (conds[p] < 0.0)
                if p == p_star:
                    mask[n_star] = True
                masks.append(mask)
            if trace is not None:
                trace.append(
                    (
                        t_star.value,
                        [_values_of(y) for y in ev_states],
                    )
                )
            hit = EventHit(
                t_event=t_star,
                masks=masks,
                anchor=(p_star, n_star),
                states=ev_states,
                denominator=denom,
                grazing=grazing,
                residual=residual,
            )
            return SegmentResult(states=ev_states, event=hit, trace=trace or [])

        if trace is not None:
            trace.append((t_next.value, [_values_of(y) for y in new_states]))
        states = new_states
        conds = new_conds
        t = t_next
    return SegmentResult(states=states, event=None, trace=trace or [])


def _values_of(y):
    return {
        c: (v.value.copy() if isinstance(v.value, np.ndarray) else v.value)
        for c, v in y.items()
        if isinstance(v, Var)
    }


def integrate_segment(model, state, t_start, t_end, h, diag=None, trace=None):
    """Single-population segment integration (see integrate_populations)."""
    res = integrate_populations([model], [state], t_start, t_end, h, diag, trace)
    event = res.event
    return res.states[0], event
