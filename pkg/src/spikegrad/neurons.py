"""Neuron models and model wrappers.

Every model implements the five-method contract -- ``init_state``,
``dynamics``, ``spike_condition``, ``input_spike`` and ``reset_spiked`` --
over autodiff Vars, so all models are differentiable by construction.  A
spike happens exactly at an upward zero crossing of ``spike_condition``.

State is a dict mapping channel names to per-neuron Vars (plus plain
numpy arrays for marker channels that are excluded from differentiation).
Times are in milliseconds.
"""

from __future__ import annotations

import copy
import math

import numpy as np

from . import autodiff as ad


class NeuronModel:
    """Base class; subclasses define dynamics, spiking and reset rules.

    ``channels`` lists the ODE-integrated state channels.  Trainable
    per-neuron quantities (bias currents, time constants, ...) are declared
    in ``param_spec`` and installed as Vars via ``bind`` once per trial;
    instances are immutable value objects afterwards and safe to share
    across concurrent trials.
    """

    channels: tuple = ()

    # -- the five core methods --------------------------------------------
    def init_state(self, n, tape):
        raise NotImplementedError

    def dynamics(self, t, y):
        raise NotImplementedError

    def spike_condition(self, t, y):
        raise NotImplementedError

    def input_spike(self, y, payload):
        raise NotImplementedError

    def reset_spiked(self, y, mask):
        raise NotImplementedError

    # -- engine plumbing ----------------------------------------------------
    def param_spec(self, n):
        """Trainable per-population parameters: name -> (shape, init(rng))."""
        return {}

    def bind(self, params):
        """Copy of the model with trainable parameters installed as Vars."""
        m = copy.copy(self)
        for name, var in params.items():
            setattr(m, name, var)
        return m

    def weight_spec(self, n, fan_in):
        """Incoming-connection parameters: name -> (shape, init(rng))."""
        mu, r = self.w_init
        lo, hi = (mu - r) / fan_in, (mu + r) / fan_in
        return {"W": ((n, fan_in), lambda rng: rng.uniform(lo, hi, (n, fan_in)))}

    def payload(self, weights, sources, self_idx=None):
        """Fold the weight columns of spiking ``sources`` into a jump payload.

        ``self_idx`` zeroes one row (recurrent connections never target the
        spiking neuron itself).
        """
        acc = ad.column(weights["W"], sources[0])
        for j in sources[1:]:
            acc = acc + ad.column(weights["W"], j)
        if self_idx is not None:
            acc = acc * _self_mask(acc.value.shape[0], self_idx)
        return acc

    def on_event(self, y, mask, t_event):
        """Post-reset hook at a spike event (used by wrappers)."""
        return y

    def commit_update(self, t, y):
        """Hook applied after every committed solver step."""
        return y

    def next_boundary(self, t_val, y):
        """Next model-internal boundary time after ``t_val``, or None."""
        return None


def _uniform(mu, r, shape):
    lo, hi = mu - r, mu + r
    return lambda rng: rng.uniform(lo, hi, shape)


def _self_mask(n, idx):
    m = np.ones(n)
    m[idx] = 0.0
    return m


class LIF(NeuronModel):
    """Current-based leaky integrate-and-fire with a learnable bias current.

    tau_syn * dI/dt = -I + I_c ;  tau_mem * dV/dt = -V + I.
    Incoming spikes jump I by the synaptic weight; reset sets V to v_reset.
    """

    channels = ("V", "I")

    def __init__(
        self,
        tau_mem=20.0,
        tau_syn=5.0,
        threshold=1.0,
        v_reset=0.0,
        bias=True,
        w_init=(14.0, 28.0),
        ic_init=(0.0025, 0.005),
    ):
        if tau_mem <= 0.0 or tau_syn <= 0.0:
            raise ValueError("time constants must be positive")
        if tau_mem == tau_syn:
            raise ValueError("tau_mem and tau_syn must differ")
        if threshold <= v_reset:
            raise ValueError("threshold must exceed reset voltage")
        self.tau_mem = tau_mem
        self.tau_syn = tau_syn
        self.threshold = threshold
        self.v_reset = v_reset
        self.bias = bias
        self.w_init = w_init
        self.ic_init = ic_init
        self.Ic = 0.0  # replaced by a Var through bind()

    def param_spec(self, n):
        if not self.bias:
            return {}
        return {"Ic": ((n,), _uniform(*self.ic_init, (n,)))}

    def init_state(self, n, tape):
        return {"V": tape.constant(np.zeros(n)), "I": tape.constant(np.zeros(n))}

    def dynamics(self, t, y):
        dV = (y["I"] - y["V"]) * (1.0 / self.tau_mem)
        dI = (self.Ic - y["I"]) * (1.0 / self.tau_syn)
        return {"V": dV, "I": dI}

    def spike_condition(self, t, y):
        return y["V"] - self.threshold

    def input_spike(self, y, payload):
        out = dict(y)
        out["I"] = y["I"] + payload
        return out

    def reset_spiked(self, y, mask):
        if not mask.any():
            return y
        out = dict(y)
        out["V"] = ad.where(mask, self.v_reset, y["V"])
        return out


class LI(LIF):
    """Leaky integrator readout: a LIF that never fires and has no bias."""

    def __init__(self, tau_mem=20.0, tau_syn=5.0, w_init=(14.0, 28.0)):
        super().__init__(tau_mem=tau_mem, tau_syn=tau_syn, bias=False, w_init=w_init)

    def spike_condition(self, t, y):
        n = y["V"].value.shape[0]
        return y["V"]._tape.constant(np.full(n, -1.0))


class QIF(NeuronModel):
    """Quadratic integrate-and-fire in phase representation.

    Theta-neuron change of variables with synaptic current drive:
    2*pi*tau_mem * dphi/dt = (1 - cos 2*pi*phi) + (1 + cos 2*pi*phi)(I + I_c),
    spike at phi = 1, reset to phi = 0.
    """

    channels = ("phi", "I")

    def __init__(
        self,
        tau_mem=20.0,
        tau_syn=5.0,
        bias=True,
        w_init=(40.0, 80.0),
        ic_init=(0.0025, 0.005),
    ):
        self.tau_mem = tau_mem
        self.tau_syn = tau_syn
        self.bias = bias
        self.w_init = w_init
        self.ic_init = ic_init
        self.Ic = 0.0

    def param_spec(self, n):
        if not self.bias:
            return {}
        return {"Ic": ((n,), _uniform(*self.ic_init, (n,)))}

    def init_state(self, n, tape):
        return {"phi": tape.constant(np.zeros(n)), "I": tape.constant(np.zeros(n))}

    def dynamics(self, t, y):
        c = ad.cos(y["phi"] * (2.0 * math.pi))
        drive = (1.0 - c) + (1.0 + c) * (y["I"] + self.Ic)
        dphi = drive * (1.0 / (2.0 * math.pi * self.tau_mem))
        dI = y["I"] * (-1.0 / self.tau_syn)
        return {"phi": dphi, "I": dI}

    def spike_condition(self, t, y):
        return y["phi"] - 1.0

    def input_spike(self, y, payload):
        out = dict(y)
        out["I"] = y["I"] + payload
        return out

    def reset_spiked(self, y, mask):
        if not mask.any():
            return y
        out = dict(y)
        out["phi"] = ad.where(mask, 0.0, y["phi"])
        return out


class EIF(NeuronModel):
    """Exponential integrate-and-fire; spikes at the cut-off v_peak.

    tau_mem * dV/dt = -(V - E_L) + Delta_T * exp((V - v_T)/Delta_T) + I + I_c.
    """

    channels = ("V", "I")

    def __init__(
        self,
        tau_mem=20.0,
        tau_syn=5.0,
        v_peak=2.98,
        v_T=1.0,
        delta_T=0.2,
        E_L=0.0,
        v_reset=0.0,
        bias=True,
        w_init=(20.0, 40.0),
        ic_init=(0.0025, 0.005),
    ):
        if delta_T <= 0.0:
            raise ValueError("slope factor must be positive")
        if v_peak <= v_T:
            raise ValueError("cut-off must exceed the exponential threshold")
        self.tau_mem = tau_mem
        self.tau_syn = tau_syn
        self.v_peak = v_peak
        self.v_T = v_T
        self.delta_T = delta_T
        self.E_L = E_L
        self.v_reset = v_reset
        self.bias = bias
        self.w_init = w_init
        self.ic_init = ic_init
        self.Ic = 0.0

    def param_spec(self, n):
        if not self.bias:
            return {}
        return {"Ic": ((n,), _uniform(*self.ic_init, (n,)))}

    def init_state(self, n, tape):
        return {"V": tape.constant(np.zeros(n)), "I": tape.constant(np.zeros(n))}

    def dynamics(self, t, y):
        V, I = y["V"], y["I"]
        up = ad.exp((V - self.v_T) * (1.0 / self.delta_T)) * self.delta_T
        dV = ((self.E_L - V) + up + I + self.Ic) * (1.0 / self.tau_mem)
        dI = I * (-1.0 / self.tau_syn)
        return {"V": dV, "I": dI}

    def spike_condition(self, t, y):
        return y["V"] - self.v_peak

    def input_spike(self, y, payload):
        out = dict(y)
        out["I"] = y["I"] + payload
        return out

    def reset_spiked(self, y, mask):
        if not mask.any():
            return y
        out = dict(y)
        out["V"] = ad.where(mask, self.v_reset, y["V"])
        return out


class Izhikevich(NeuronModel):
    """Two-variable Izhikevich model (mV / ms units), synaptic current added.

    dv/dt = 0.04 v^2 + 5 v + 140 - u + I + I_c ;  du/dt = a (b v - u);
    spike at v = v_peak, reset v <- c, u <- u + d.
    """

    channels = ("v", "u", "I")

    def __init__(
        self,
        a=0.020,
        b=0.20,
        c=-65.0,
        d=4.0,
        v_peak=30.0,
        tau_syn=3.0,
        bias=True,
        w_init=(20.0, 40.0),
        ic_init=(3.0, 0.5),
    ):
        self.a = a
        self.b = b
        self.c = c
        self.d = d
        self.v_peak = v_peak
        self.tau_syn = tau_syn
        self.bias = bias
        self.w_init = w_init
        self.ic_init = ic_init
        self.Ic = 0.0

    def param_spec(self, n):
        if not self.bias:
            return {}
        return {"Ic": ((n,), _uniform(*self.ic_init, (n,)))}

    def init_state(self, n, tape):
        return {
            "v": tape.constant(np.full(n, self.c)),
            "u": tape.constant(np.full(n, self.b * self.c)),
            "I": tape.constant(np.zeros(n)),
        }

    def dynamics(self, t, y):
        v, u, I = y["v"], y["u"], y["I"]
        dv = (v * v) * 0.04 + v * 5.0 + 140.0 - u + I + self.Ic
        du = (v * self.b - u) * self.a
        dI = I * (-1.0 / self.tau_syn)
        return {"v": dv, "u": du, "I": dI}

    def spike_condition(self, t, y):
        return y["v"] - self.v_peak

    def input_spike(self, y, payload):
        out = dict(y)
        out["I"] = y["I"] + payload
        return out

    def reset_spiked(self, y, mask):
        if not mask.any():
            return y
        out = dict(y)
        out["v"] = ad.where(mask, self.c, y["v"])
        out["u"] = ad.where(mask, y["u"] + self.d, y["u"])
        return out


class EGRU(NeuronModel):
    """Continuous-time event-based gated recurrent unit.

    The cell state decays linearly between events (dc/dt = -c/tau).  An
    incoming binary spike vector s drives an update gate u = sigmoid(Wu s + bu)
    and candidate z = tanh(Wz s + bz), after which c <- u*c + (1-u)*z.  Units
    communicate binary spikes only; spike at c = theta with subtraction reset.
    """

    channels = ("c",)

    def __init__(self, tau=20.0, theta_init=1.0, w_init=(0.0, 1.0)):
        self.tau = tau
        self.theta_init = theta_init
        self.w_init = w_init
        self.theta = theta_init
        self.bu = 0.0
        self.bz = 0.0

    def param_spec(self, n):
        th = self.theta_init
        return {
            "theta": ((n,), lambda rng: np.full(n, th)),
            "bu": ((n,), lambda rng: np.zeros(n)),
            "bz": ((n,), lambda rng: np.zeros(n)),
        }

    def weight_spec(self, n, fan_in):
        mu, r = self.w_init
        lo, hi = (mu - r) / fan_in, (mu + r) / fan_in
        return {
            "Wu": ((n, fan_in), lambda rng: rng.uniform(lo, hi, (n, fan_in))),
            "Wz": ((n, fan_in), lambda rng: rng.uniform(lo, hi, (n, fan_in))),
        }

    def payload(self, weights, sources, self_idx=None):
        au = ad.column(weights["Wu"], sources[0])
        az = ad.column(weights["Wz"], sources[0])
        for j in sources[1:]:
            au = au + ad.column(weights["Wu"], j)
            az = az + ad.column(weights["Wz"], j)
        if self_idx is not None:
            m = _self_mask(au.value.shape[0], self_idx)
            au = au * m
            az = az * m
        return (au, az)

    def init_state(self, n, tape):
        return {"c": tape.constant(np.zeros(n))}

    def dynamics(self, t, y):
        return {"c": y["c"] * (-1.0 / self.tau)}

    def spike_condition(self, t, y):
        return y["c"] - self.theta

    def input_spike(self, y, payload):
        au, az = payload
        u = ad.sigmoid(au + self.bu)
        z = ad.tanh(az + self.bz)
        out = dict(y)
        out["c"] = u * y["c"] + (1.0 - u) * z
        return out

    def reset_spiked(self, y, mask):
        if not mask.any():
            return y
        out = dict(y)
        out["c"] = ad.where(mask, y["c"] - self.theta, y["c"])
        return out


class MultiCompartment(NeuronModel):
    """Soma plus D dendritic compartments with voltage-gated dendritic spikes.

    tau_S dvS/dt   = -vS + sum_d g_d M(v_d) (vS - v_max) + I_c
    tau_Dd dv_d/dt = -v_d + sum_i I_id
    tau_sig_id dI_id/dt = -I_id
    M(v) = sigmoid(s1 (v - v_th)) * sigmoid(-s2 (v - v_th)), somatic spike at
    vS = threshold with reset to 0.  Time constants and couplings g_d are
    learnable (time constants through their logs to stay positive).

    State layout: vS (n,), vd (n*D,) ordered [neuron][dendrite], Isyn
    (S*n*D,) ordered [input channel][neuron][dendrite].
    """

    channels = ("vS", "vd", "Isyn")

    def __init__(
        self,
        dendrites,
        in_size,
        v_max=1.0,
        s1=10.0,
        s2=10.0,
        v_th=0.5,
        threshold=1.0,
        tau_s=20.0,
        tau_d=10.0,
        tau_syn=5.0,
        g_scale=1.0,
        w_init=(14.0, 28.0),
        ic_init=(0.0025, 0.005),
    ):
        self.D = dendrites
        self.S = in_size
        self.v_max = v_max
        self.s1 = s1
        self.s2 = s2
        self.v_th = v_th
        self.threshold = threshold
        self.tau_s = tau_s
        self.tau_d = tau_d
        self.tau_syn = tau_syn
        self.g_scale = g_scale
        self.w_init = w_init
        self.ic_init = ic_init
        self.Ic = 0.0
        self.g = 0.0
        self.log_tau_S = math.log(tau_s)
        self.log_tau_D = math.log(tau_d)
        self.log_tau_sig = math.log(tau_syn)
        self._mats = {}

    def param_spec(self, n):
        D, S = self.D, self.S
        gs = self.g_scale / max(D, 1)
        return {
            "Ic": ((n,), _uniform(*self.ic_init, (n,))),
            "g": ((n * D,), lambda rng: rng.uniform(-gs, gs, n * D)),
            "log_tau_S": ((n,), lambda rng: np.full(n, math.log(self.tau_s))),
            "log_tau_D": ((n * D,), lambda rng: np.full(n * D, math.log(self.tau_d))),
            "log_tau_sig": (
                (S * n * D,),
                lambda rng: np.full(S * n * D, math.log(self.tau_syn)),
            ),
        }

    def weight_spec(self, n, fan_in):
        mu, r = self.w_init
        lo, hi = (mu - r) / fan_in, (mu + r) / fan_in
        return {
            "W": ((n * self.D, fan_in), lambda rng: rng.uniform(lo, hi, (n * self.D, fan_in)))
        }

    def payload(self, weights, sources, self_idx=None):
        # each source channel i targets its own contiguous block of Isyn
        return [(j, ad.column(weights["W"], j)) for j in sources]

    def _matrices(self, n):
        # constant 0/1 summation matrices for the segmented reductions
        if n not in self._mats:
            D, S = self.D, self.S
            nd = n * D
            expand = np.zeros((nd, n))
            for i in range(n):
                expand[i * D : (i + 1) * D, i] = 1.0
            sum_d = expand.T.copy()
            sum_s = np.zeros((nd, S * nd))
            for i in range(S):
                sum_s[:, i * nd : (i + 1) * nd] = np.eye(nd)
            self._mats[n] = (expand, sum_d, sum_s)
        return self._mats[n]

    def init_state(self, n, tape):
        D, S = self.D, self.S
        return {
            "vS": tape.constant(np.zeros(n)),
            "vd": tape.constant(np.zeros(n * D)),
            "Isyn": tape.constant(np.zeros(S * n * D)),
        }

    def activation(self, vd):
        x = vd - self.v_th
        return ad.sigmoid(x * self.s1) * ad.sigmoid(x * (-self.s2))

    def dynamics(self, t, y):
        vS, vd, Isyn = y["vS"], y["vd"], y["Isyn"]
        n = vS.value.shape[0]
        expand, sum_d, sum_s = self._matrices(n)
        inv_tau_s = ad.exp(-self.log_tau_S) if isinstance(self.log_tau_S, ad.Var) else math.exp(-self.log_tau_S)
        inv_tau_d = ad.exp(-self.log_tau_D) if isinstance(self.log_tau_D, ad.Var) else math.exp(-self.log_tau_D)
        inv_tau_g = ad.exp(-self.log_tau_sig) if isinstance(self.log_tau_sig, ad.Var) else math.exp(-self.log_tau_sig)
        m = self.activation(vd)
        coup = self.g * m * (ad.matvec(expand, vS) - self.v_max)
        dvS = (ad.matvec(sum_d, coup) - vS + self.Ic) * inv_tau_s
        dvd = (ad.matvec(sum_s, Isyn) - vd) * inv_tau_d
        dI = -(Isyn * inv_tau_g)
        return {"vS": dvS, "vd": dvd, "Isyn": dI}

    def spike_condition(self, t, y):
        return y["vS"] - self.threshold

    def input_spike(self, y, payload):
        out = dict(y)
        acc = y["Isyn"]
        nd = acc.value.shape[0] // max(self.S, 1)
        for j, col in payload:
            acc = ad.scatter_add(acc, j * nd, col)
        out["Isyn"] = acc
        return out

    def reset_spiked(self, y, mask):
        if not mask.any():
            return y
        out = dict(y)
        out["vS"] = ad.where(mask, 0.0, y["vS"])
        return out


# ---------------------------------------------------------------------------
# wrappers
# ---------------------------------------------------------------------------


class _Wrapper(NeuronModel):
    """Delegating base for model wrappers."""

    def __init__(self, inner):
        self.inner = inner

    @property
    def channels(self):
        return self.inner.channels

    @property
    def w_init(self):
        return self.inner.w_init

    def param_spec(self, n):
        return self.inner.param_spec(n)

    def bind(self, params):
        m = copy.copy(self)
        m.inner = self.inner.bind(params)
        return m

    def weight_spec(self, n, fan_in):
        return self.inner.weight_spec(n, fan_in)

    def payload(self, weights, sources, self_idx=None):
        return self.inner.payload(weights, sources, self_idx)

    def init_state(self, n, tape):
        return self.inner.init_state(n, tape)

    def dynamics(self, t, y):
        return self.inner.dynamics(t, y)

    def spike_condition(self, t, y):
        return self.inner.spike_condition(t, y)

    def input_spike(self, y, payload):
        return self.inner.input_spike(y, payload)

    def reset_spiked(self, y, mask):
        return self.inner.reset_spiked(y, mask)

    def on_event(self, y, mask, t_event):
        return self.inner.on_event(y, mask, t_event)

    def commit_update(self, t, y):
        return self.inner.commit_update(t, y)

    def next_boundary(self, t_val, y):
        return self.inner.next_boundary(t_val, y)


class AMOS(_Wrapper):
    """At Most One Spike per neuron per trial.

    Adds a non-differentiated has-fired flag; once set, the spike condition
    is clamped strictly negative for the rest of the trial.
    """

    def init_state(self, n, tape):
        y = self.inner.init_state(n, tape)
        y["amos_fired"] = np.zeros(n, dtype=bool)
        return y

    def spike_condition(self, t, y):
        base = self.inner.spike_condition(t, y)
        fired = y["amos_fired"]
        if not fired.any():
            return base
        return ad.where(fired, -1.0, base)

    def reset_spiked(self, y, mask):
        out = self.inner.reset_spiked(y, mask)
        if mask.any():
            out = dict(out)
            out["amos_fired"] = y["amos_fired"] | mask
        return out


class Refractory(_Wrapper):
    """Clamp the spike condition for ``t_ref`` ms after each spike.

    Dynamics and input integration continue during the refractory window.
    Release times are exposed as solver boundaries so that a condition that
    is already positive at release spikes exactly then, differentiably.
    """

    def __init__(self, inner, t_ref):
        super().__init__(inner)
        self.t_ref = t_ref

    def init_state(self, n, tape):
        y = self.inner.init_state(n, tape)
        y["ref_until"] = tape.constant(np.full(n, -np.inf))
        return y

    def spike_condition(self, t, y):
        base = self.inner.spike_condition(t, y)
        suppressed = y["ref_until"].value > t.value
        if not suppressed.any():
            return base
        return ad.where(suppressed, -1.0, base)

    def on_event(self, y, mask, t_event):
        out = dict(self.inner.on_event(y, mask, t_event))
        out["ref_until"] = ad.where(mask, t_event + self.t_ref, y["ref_until"])
        return out

    def next_boundary(self, t_val, y):
        r = y["ref_until"].value
        eligible = np.isfinite(r) & (r > t_val + 1e-12)
        if not eligible.any():
            return None
        k = int(np.argmin(np.where(eligible, r, np.inf)))
        return float(r[k]), ad.index(y["ref_until"], k)


class StateObserver(_Wrapper):
    """Augment a readout population with loss accumulator channels.

    z_int integrates V, z_exp integrates exp(-lam*t)*V (optionally only for
    t >= gate_time), and v_max tracks the running maximum of V over
    committed solver steps and event times.
    """

    def __init__(self, inner, lam, gate_time=None, track_max=True):
        super().__init__(inner)
        self.lam = lam
        self.gate_time = gate_time
        self.track_max = track_max

    @property
    def channels(self):
        return self.inner.channels + ("z_int", "z_exp")

    def init_state(self, n, tape):
        y = self.inner.init_state(n, tape)
        y["z_int"] = tape.constant(np.zeros(n))
        y["z_exp"] = tape.constant(np.zeros(n))
        if self.track_max:
            y["v_max"] = y["V"]
        return y

    def dynamics(self, t, y):
        d = self.inner.dynamics(t, y)
        if self.gate_time is None or t.value >= self.gate_time:
            d["z_int"] = y["V"]
            d["z_exp"] = y["V"] * ad.exp(t * (-self.lam))
        return d

    def commit_update(self, t, y):
        y = self.inner.commit_update(t, y)
        if self.track_max:
            y = dict(y)
            y["v_max"] = ad.maximum(y["v_max"], y["V"])
        return y


class MultiNeuronModel(NeuronModel):
    """Heterogeneous population: consecutive index ranges use different models.

    Channel namespaces are disjoint per partition (``p0:V``, ``p1:V``, ...);
    each of the five interface methods dispatches per partition.
    """

    def __init__(self, models, sizes):
        if len(models) != len(sizes):
            raise ValueError("one size per model required")
        self.models = list(models)
        self.sizes = list(sizes)

    @property
    def channels(self):
        out = []
        for k, m in enumerate(self.models):
            out.extend(f"p{k}:{c}" for c in m.channels)
        return tuple(out)

    def _sub(self, y, k):
        pre = f"p{k}:"
        return {c[len(pre):]: v for c, v in y.items() if c.startswith(pre)}

    def _merge(self, parts):
        out = {}
        for k, part in enumerate(parts):
            for c, v in part.items():
                out[f"p{k}:{c}"] = v
        return out

    def _split_mask(self, mask):
        out = []
        off = 0
        for n in self.sizes:
            out.append(mask[off : off + n])
            off += n
        return out

    def param_spec(self, n):
        out = {}
        for k, (m, nk) in enumerate(zip(self.models, self.sizes)):
            for name, spec in m.param_spec(nk).items():
                out[f"p{k}.{name}"] = spec
        return out

    def bind(self, params):
        m = copy.copy(self)
        grouped = [{} for _ in self.models]
        for name, var in params.items():
            k, pname = name.split(".", 1)
            grouped[int(k[1:])][pname] = var
        m.models = [mm.bind(g) for mm, g in zip(self.models, grouped)]
        return m

    def weight_spec(self, n, fan_in):
        out = {}
        for k, (m, nk) in enumerate(zip(self.models, self.sizes)):
            for name, spec in m.weight_spec(nk, fan_in).items():
                out[f"p{k}.{name}"] = spec
        return out

    def payload(self, weights, sources, self_idx=None):
        out = []
        for k, m in enumerate(self.models):
            pre = f"p{k}."
            sub = {name[len(pre):]: w for name, w in weights.items() if name.startswith(pre)}
            out.append(m.payload(sub, sources))
        return out

    def init_state(self, n, tape):
        return self._merge(
            [m.init_state(nk, tape) for m, nk in zip(self.models, self.sizes)]
        )

    def dynamics(self, t, y):
        return self._merge(
            [m.dynamics(t, self._sub(y, k)) for k, m in enumerate(self.models)]
        )

    def spike_condition(self, t, y):
        return ad.concat(
            [m.spike_condition(t, self._sub(y, k)) for k, m in enumerate(self.models)]
        )

    def input_spike(self, y, payload):
        return self._merge(
            [
                m.input_spike(self._sub(y, k), payload[k])
                for k, m in enumerate(self.models)
            ]
        )

    def reset_spiked(self, y, mask):
        masks = self._split_mask(mask)
        return self._merge(
            [
                m.reset_spiked(self._sub(y, k), masks[k])
                for k, m in enumerate(self.models)
            ]
        )

    def on_event(self, y, mask, t_event):
        masks = self._split_mask(mask)
        return self._merge(
            [
                m.on_event(self._sub(y, k), masks[k], t_event)
                for k, m in enumerate(self.models)
            ]
        )

    def commit_update(self, t, y):
        return self._merge(
            [m.commit_update(t, self._sub(y, k)) for k, m in enumerate(self.models)]
        )

    def next_boundary(self, t_val, y):
        best = None
        for k, m in enumerate(self.models):
            b = m.next_boundary(t_val, self._sub(y, k))
            if b is not None and (best is None or b[0] < best[0]):
                best = b
        return best


MODEL_REGISTRY = {
    "lif": LIF,
    "li": LI,
    "qif": QIF,
    "eif": EIF,
    "izhikevich": Izhikevich,
    "egru": EGRU,
    "multicompartment": MultiCompartment,
}
