"""Network containers, the time-ordered spike buffer, and forward functions.

``FFEvNN`` describes the architecture (sizes, models, connectivity) and owns
parameter initialization; binding it to a tape and a parameter dict yields a
live network whose ``ttfs`` and ``state_at_t`` methods run one differentiable
trial.  Causality is enforced by processing boundary times in order: input
spikes, detected spikes, refractory releases, observation times, trial end.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .neurons import StateObserver
from .solver import (
    DivergenceError,
    SimDiagnostics,
    _state_conditions,
    integrate_populations,
)


@dataclass
class EventRecord:
    """A scheduled occurrence: an input spike or an emitted internal spike."""

    time: Var
    kind: str  # "input" | "internal"
    target: int  # target layer
    col: int  # source column in the target layer's fan-in
    self_mask: int | None = None  # row to zero for recurrent self-connections


class SpikeBuffer:
    """Min-ordered queue; pop order is (time ascending, insertion ascending)."""

    def __init__(self):
        self._heap = []
        self._seq = 0

    def push(self, record):
        heapq.heappush(self._heap, (record.time.value, self._seq, record))
        self._seq += 1

    def __len__(self):
        return len(self._heap)

    def peek(self):
        return self._heap[0][2] if self._heap else None

    def pop_at(self, t_val):
        """All records scheduled exactly at t_val, in insertion order."""
        out = []
        while self._heap and self._heap[0][0] <= t_val:
            out.append(heapq.heappop(self._heap)[2])
        return out


@dataclass
class TrialOutput:
    """Result of one simulated trial.

    In ttfs mode ``times`` holds one first-spike time Var per output neuron
    (None if silent).  In state mode the accumulator Vars carry the logits'
    raw material and ``observations`` the requested state snapshots.
    Spike counters are plain integers, excluded from differentiation.
    """

    mode: str
    times: list | None = None
    z_int: Var | None = None
    z_exp: Var | None = None
    v_max: Var | None = None
    observations: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    counts_windowed: list | None = None
    first_output_time: float | None = None
    diagnostics: SimDiagnostics | None = None


class FFEvNN:
    """Feed-forward event-based network architecture.

    Parameters live outside the object as a flat dict of numpy arrays (see
    ``init_params``); ``bind`` installs them on a tape for one trial.
    """

    def __init__(
        self,
        in_size,
        layers,
        models,
        h=0.1,
        max_solver_time=30.0,
        recurrent=(),
        observe_output=False,
        lam=None,
        track_max=False,
    ):
        if len(layers) != len(models):
            raise ValueError("one model per layer required")
        self.in_size = in_size
        self.sizes = list(layers)
        self.models = list(models)
        self.h = h
        self.max_solver_time = max_solver_time
        self.recurrent = set(recurrent)
        self.observe_output = observe_output
        self.lam = lam if lam is not None else 1.0 / max_solver_time
        self.track_max = track_max

    def fan_base(self, l):
        return self.in_size if l == 0 else self.sizes[l - 1]

    def fan_in(self, l):
        return self.fan_base(l) + (self.sizes[l] if l in self.recurrent else 0)

    def param_spec(self):
        """Flat parameter map: name -> (shape, init(rng))."""
        spec = {}
        for l, (n, m) in enumerate(zip(self.sizes, self.models)):
            base = self.fan_base(l)
            for wname, (shape, init) in m.weight_spec(n, self.fan_in(l)).items():
                if l in self.recurrent:
                    init = _zero_diag_init(init, base)
                spec[f"L{l}.{wname}"] = (shape, init)
            for pname, (shape, init) in m.param_spec(n).items():
                spec[f"L{l}.{pname}"] = (shape, init)
        return spec

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        return {name: init(rng) for name, (shape, init) in self.param_spec().items()}

    def bind(self, tape, params, gate_time=None):
        return LiveNet(self, tape, params, gate_time)


def _zero_diag_init(init, base):
    def wrapped(rng):
        arr = init(rng)
        n = arr.shape[0]
        for j in range(n):
            if base + j < arr.shape[1]:
                arr[j, base + j] = 0.0
        return arr

    return wrapped


class RecEvNN(FFEvNN):
    """FFEvNN with recurrent connectivity (zero diagonal) on one hidden layer."""

    def __init__(self, in_size, layers, models, recurrent_layer=0, **kw):
        super().__init__(in_size, layers, models, recurrent=(recurrent_layer,), **kw)


class LiveNet:
    """One trial's bound network: parameter leaves plus bound models."""

    def __init__(self, net, tape, params, gate_time=None):
        self.net = net
        self.tape = tape
        self.leaves = {name: tape.leaf(arr) for name, arr in params.items()}
        self.weights = []
        self.models = []
        for l, (n, m) in enumerate(zip(net.sizes, net.models)):
            wnames = m.weight_spec(n, net.fan_in(l))
            self.weights.append({w: self.leaves[f"L{l}.{w}"] for w in wnames})
            pnames = m.param_spec(n)
            bound = m.bind({p: self.leaves[f"L{l}.{p}"] for p in pnames})
            self.models.append(bound)
        if net.observe_output:
            self.models[-1] = StateObserver(
                self.models[-1],
                lam=net.lam,
                gate_time=gate_time,
                track_max=net.track_max,
            )

    # -- forward functions ------------------------------------------------
    def ttfs(self, in_spikes, dump=None):
        """First-spike times of the output neurons (None while silent)."""
        return self._simulate(in_spikes, mode="ttfs", dump=dump)

    def state_at_t(self, in_spikes, observe_times=(), dump=None):
        """Output-layer state at each observation time plus accumulators."""
        return self._simulate(
            in_spikes, mode="state", observe_times=observe_times, dump=dump
        )

    # -- engine -------------------------------------------------------------
    def _simulate(self, in_spikes, mode, observe_times=(), dump=None):
        net = self.net
        tape = self.tape
        models = self.models
        sizes = net.sizes
        last = len(models) - 1
        states = [m.init_state(n, tape) for m, n in zip(models, sizes)]
        buf = SpikeBuffer()
        for ch, tt in in_spikes:
            tt = float(tt)
            if np.isfinite(tt):
                buf.push(EventRecord(tape.leaf(tt), "input", 0, int(ch)))
        obs = sorted(float(t) for t in observe_times)
        end_time = obs[-1] if obs else net.max_solver_time
        obs_i = 0
        end_var = tape.constant(end_time)
        counts = [np.zeros(n, dtype=np.int64) for n in sizes]
        out_times = [None] * sizes[-1]
        state_box = {"first_out": None, "counts_windowed": None}
        observations = []
        diag = SimDiagnostics()
        trace = [] if dump is not None else None
        if trace is not None:
            from .solver import _values_of

            trace.append((0.0, [_values_of(y) for y in states]))
        t_now = tape.constant(0.0)

        def handle_spikes(masks, t_var):
            for p, mask in enumerate(masks):
                if mask is None or not mask.any():
                    continue
                m = models[p]
                states[p] = m.reset_spiked(states[p], mask)
                states[p] = m.on_event(states[p], mask, t_var)
                counts[p][mask] += 1
                neurons = np.where(mask)[0]
                if p == last:
                    for n in neurons:
                        if out_times[n] is None:
                            out_times[n] = t_var
                    if state_box["first_out"] is None:
                        state_box["first_out"] = t_var.value
                        state_box["counts_windowed"] = [c.copy() for c in counts]
                if p < last:
                    for n in neurons:
                        buf.push(EventRecord(t_var, "internal", p + 1, int(n)))
                if p in net.recurrent:
                    base = net.fan_base(p)
                    for n in neurons:
                        buf.push(
                            EventRecord(
                                t_var, "internal", p, base + int(n), self_mask=int(n)
                            )
                        )

        def settle(t_var):
            # apply same-time records, then fire any neuron pushed over
            # threshold by the jumps; repeat until quiescent
            for _ in range(10000):
                for r in buf.pop_at(t_var.value):
                    payload = models[r.target].payload(
                        self.weights[r.target], [r.col], self_idx=r.self_mask
                    )
                    states[r.target] = models[r.target].input_spike(
                        states[r.target], payload
                    )
                masks = []
                fired = False
                for p, m in enumerate(models):
                    cv = _state_conditions(m, tape, t_var, states[p])
                    mk = cv >= 0.0
                    masks.append(mk if mk.any() else None)
                    fired = fired or mk.any()
                if not fired:
                    return
                handle_spikes(masks, t_var)
            raise DivergenceError(f"event cascade did not settle at t={t_var.value}")

        def done():
            if mode == "ttfs" and all(v is not None for v in out_times):
                return True
            return t_now.value >= end_time - 1e-12

        settle(t_now)
        while obs_i < len(obs) and obs[obs_i] <= t_now.value + 1e-12:
            observations.append((obs[obs_i], dict(states[last])))
            obs_i += 1
        while not done():
            cand = [(end_time, end_var)]
            if obs_i < len(obs):
                cand.append((obs[obs_i], tape.constant(obs[obs_i])))
            head = buf.peek()
            if head is not None:
                cand.append((head.time.value, head.time))
            for p, m in enumerate(models):
                nb = m.next_boundary(t_now.value, states[p])
                if nb is not None and nb[0] < end_time:
                    cand.append(nb)
            t_next_val, t_next_var = min(cand, key=lambda c: c[0])
            res = integrate_populations(
                models, states, t_now, t_next_var, net.h, diag, trace
            )
            states[:] = res.states
            if res.event is not None:
                hit = res.event
                t_now = hit.t_event
                handle_spikes(hit.masks, t_now)
                settle(t_now)
                continue
            t_now = t_next_var
            while obs_i < len(obs) and obs[obs_i] <= t_now.value + 1e-12:
                observations.append((obs[obs_i], dict(states[last])))
                obs_i += 1
            settle(t_now)

        if dump is not None:
            write_trajectories(dump, trace)
        out = TrialOutput(
            mode=mode,
            counts=counts,
            counts_windowed=state_box["counts_windowed"],
            first_output_time=state_box["first_out"],
            observations=observations,
            diagnostics=diag,
        )
        if mode == "ttfs":
            out.times = out_times
        else:
            out.z_int = states[last].get("z_int")
            out.z_exp = states[last].get("z_exp")
            out.v_max = states[last].get("v_max")
        return out


def spike_metrics(trials, exclude_dead_layers=()):
    """Aggregate spike-activity metrics over a set of trials.

    Uses the counters windowed to the first output spike when present
    (ttfs mode), else full-trial counters.  ``dead_neurons`` skips the
    layers in ``exclude_dead_layers`` (non-spiking readouts).
    """
    if not trials:
        return {"max_firing": 0.0, "dead_neurons": 0, "fire_count": 0.0, "mean_ttfs": None}
    max_f = []
    totals = []
    ttfs_times = []
    n_layers = len(trials[0].counts)
    ever = [np.zeros_like(trials[0].counts[l]) for l in range(n_layers)]
    for tr in trials:
        counts = tr.counts_windowed if tr.counts_windowed is not None else tr.counts
        max_f.append(max(int(c.max()) if c.size else 0 for c in counts))
        totals.append(sum(int(c.sum()) for c in counts))
        for l in range(n_layers):
            ever[l] = ever[l] + counts[l]
        if tr.first_output_time is not None:
            ttfs_times.append(tr.first_output_time)
    dead = sum(
        int((ever[l] == 0).sum())
        for l in range(n_layers)
        if l not in exclude_dead_layers
    )
    return {
        "max_firing": float(np.mean(max_f)),
        "dead_neurons": int(dead),
        "fire_count": float(np.mean(totals)),
        "mean_ttfs": float(np.mean(ttfs_times)) if ttfs_times else None,
    }


def write_trajectories(fh, trace):
    """Delimited dump of the committed trajectory: time,layer,neuron,channel,value."""
    fh.write("time,layer,neuron,channel,value\n")
    for t, pops in trace:
        for l, chans in enumerate(pops):
            for c, arr in chans.items():
                vals = np.atleast_1d(arr)
                for n, v in enumerate(vals):
                    fh.write(f"{t:.9f},{l},{n},{c},{v:.12g}\n")
