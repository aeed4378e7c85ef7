"""Training loop, evaluation, benchmarking, and run artifacts.

One trial = one tape; a batch maps trials onto a worker pool holding
immutable parameter snapshots, and per-chunk gradient sums are combined in
a fixed order so a (config, seed) pair fully determines the metrics log.
"""

from __future__ import annotations

import dataclasses
import json
import math
import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .datasets import (
    encode_mnist,
    generate_delayed_xor,
    load_mnist,
    read_spike_dataset,
    xor_cue_time,
    yinyang_samples,
)
from .losses import (
    clamp_silent,
    classify,
    state_logits,
    state_loss,
    ttfs_loss,
)
from .network import FFEvNN, TrialOutput, spike_metrics
from .neurons import AMOS, EGRU, LI, MODEL_REGISTRY, MultiCompartment, Refractory

STATE_LOSSES = ("max", "integral", "exp_integral")


@dataclass
class TrainConfig:
    """Experiment configuration; file form is a flat JSON object."""

    dataset: str = "yinyang"  # yinyang | mnist | xor
    data_seed: int = 42
    train_size: int = 5000
    val_size: int = 1000
    test_size: int = 1000
    train_limit: int | None = None  # cap on training samples (reduced scale)
    mnist_dir: str | None = None
    data_path: str | None = None  # pre-generated dataset prefix (gen-data)
    xor_t_max: float = 60.0
    xor_sigma: float = 1.0

    model: str = "lif"
    hidden: list = field(default_factory=lambda: [50])
    amos: bool = False
    refractory: float | None = None
    recurrent: bool = False
    dendrites: int = 0
    model_kwargs: dict = field(default_factory=dict)
    out_model_kwargs: dict = field(default_factory=dict)

    loss: str = "ttfs"  # ttfs | max | integral | exp_integral
    tau0: float = 0.5
    tau1: float = 6.4
    alpha: float = 0.003

    h: float = 0.1
    max_solver_time: float = 30.0

    batch_size: int = 256
    epochs: int = 100
    lr: float = 0.005
    clip_norm: float = 1.0
    weight_decay: float = 0.01
    seed: int = 0
    workers: int = 1
    out_dir: str = "run"
    dump_trajectories: bool = False

    def __post_init__(self):
        if self.loss not in ("ttfs",) + STATE_LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.dataset not in ("yinyang", "mnist", "xor"):
            raise ValueError(f"unknown dataset {self.dataset!r}")

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            raw = json.load(f)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_file(self, path):
        with open(path, "w") as f:
            json.dump(dataclasses.asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")


# ---------------------------------------------------------------------------
# experiment assembly
# ---------------------------------------------------------------------------


def dataset_dims(cfg):
    return {
        "yinyang": (5, 3),
        "mnist": (784, 10),
        "xor": (9, 2),
    }[cfg.dataset]


def _hidden_model(cfg):
    model_cls = MODEL_REGISTRY[cfg.model]
    kw = dict(cfg.model_kwargs)
    if cfg.model == "multicompartment":
        in_size, _ = dataset_dims(cfg)
        kw.setdefault("dendrites", cfg.dendrites or 7)
        kw.setdefault("in_size", in_size)
    m = model_cls(**{k: tuple(v) if k == "w_init" else v for k, v in kw.items()})
    if cfg.refractory is not None:
        m = Refractory(m, cfg.refractory)
    if cfg.amos:
        m = AMOS(m)
    return m


def build_network(cfg):
    """Instantiate the architecture an experiment config describes."""
    in_size, classes = dataset_dims(cfg)
    t_max = cfg.xor_t_max if cfg.dataset == "xor" else cfg.max_solver_time
    hidden_sizes = list(cfg.hidden)
    if cfg.model == "multicompartment":
        hidden_sizes = []  # one dendritic neuron per class, no hidden layer
    state_mode = cfg.loss in STATE_LOSSES
    sizes = []
    models = []
    for n in hidden_sizes:
        sizes.append(n)
        models.append(_hidden_model(cfg))
    if cfg.model == "multicompartment":
        sizes.append(classes)
        models.append(_hidden_model(cfg))
        if state_mode:
            sizes.append(classes)
            models.append(LI(**cfg.out_model_kwargs))
    elif state_mode:
        sizes.append(classes)
        models.append(LI(**cfg.out_model_kwargs))
    else:
        sizes.append(classes)
        models.append(_hidden_model(cfg))
    cls = FFEvNN
    kw = {}
    if cfg.recurrent:
        kw["recurrent"] = (0,)
    net = cls(
        in_size,
        sizes,
        models,
        h=cfg.h,
        max_solver_time=t_max,
        observe_output=state_mode,
        lam=1.0 / t_max,
        track_max=(cfg.loss == "max"),
        **kw,
    )
    return net, classes


def load_splits(cfg):
    """(train, val, test) sample lists for the configured dataset."""
    if cfg.data_path:
        splits = tuple(
            read_spike_dataset(f"{cfg.data_path}.{name}.csv")
            for name in ("train", "val", "test")
        )
    elif cfg.dataset == "yinyang":
        splits = (
            yinyang_samples(cfg.train_size, cfg.data_seed, cfg.max_solver_time),
            yinyang_samples(cfg.val_size, cfg.data_seed + 1, cfg.max_solver_time),
            yinyang_samples(cfg.test_size, cfg.data_seed + 2, cfg.max_solver_time),
        )
    elif cfg.dataset == "xor":
        splits = (
            generate_delayed_xor(cfg.train_size, cfg.xor_t_max, cfg.xor_sigma, cfg.data_seed),
            generate_delayed_xor(cfg.val_size, cfg.xor_t_max, cfg.xor_sigma, cfg.data_seed + 1),
            generate_delayed_xor(cfg.test_size, cfg.xor_t_max, cfg.xor_sigma, cfg.data_seed + 2),
        )
    else:
        splits = _mnist_splits(cfg)
    train, val, test = splits
    if cfg.train_limit is not None:
        train = train[: cfg.train_limit]
    return train, val, test


def _mnist_splits(cfg):
    if not cfg.mnist_dir:
        raise ValueError("mnist requires mnist_dir (files are never downloaded)")

    def find(*names):
        for n in names:
            p = os.path.join(cfg.mnist_dir, n)
            if os.path.exists(p):
                return p
        raise FileNotFoundError(f"none of {names} under {cfg.mnist_dir}")

    tri = find("train-images-idx3-ubyte", "train-images-idx3-ubyte.gz")
    trl = find("train-labels-idx1-ubyte", "train-labels-idx1-ubyte.gz")
    tei = find("t10k-images-idx3-ubyte", "t10k-images-idx3-ubyte.gz")
    tel = find("t10k-labels-idx1-ubyte", "t10k-labels-idx1-ubyte.gz")
    images, labels = load_mnist(tri, trl)
    test_images, test_labels = load_mnist(tei, tel)
    # reserve the last 5k training samples for validation
    train = [
        (encode_mnist(images[i]), int(labels[i])) for i in range(len(images) - 5000)
    ]
    val = [
        (encode_mnist(images[i]), int(labels[i]))
        for i in range(len(images) - 5000, len(images))
    ]
    test = [
        (encode_mnist(test_images[i]), int(test_labels[i]))
        for i in range(len(test_images))
    ]
    return train, val, test


# ---------------------------------------------------------------------------
# single trials
# ---------------------------------------------------------------------------


def run_trial(net, params, cfg, sample, grad=True, dump=None):
    """One forward (and optionally backward) pass over one sample.

    Returns (loss value, gradient dict or None, predicted class, trial
    summary with plain-array counters only).
    """
    spikes, target = sample
    tape = Tape()
    tape.recording = bool(grad)
    with tape:
        gate = xor_cue_time(spikes) if cfg.dataset == "xor" else None
        live = net.bind(tape, params, gate_time=gate)
        if cfg.loss == "ttfs":
            out = live.ttfs(spikes, dump=dump)
            times = clamp_silent(out.times, net.max_solver_time, tape)
            loss = ttfs_loss(times, target, cfg.tau0, cfg.tau1, cfg.alpha)
            pred = classify(out, "ttfs")
        else:
            out = live.state_at_t(
                spikes, observe_times=[net.max_solver_time], dump=dump
            )
            logits = state_logits(out, cfg.loss)
            loss = state_loss(logits, target)
            pred = classify(logits.value, "state")
        grads = None
        if grad:
            g = tape.backward(loss)
            grads = {name: g[leaf] for name, leaf in live.leaves.items()}
    summary = TrialOutput(
        mode=out.mode,
        counts=out.counts,
        counts_windowed=out.counts_windowed,
        first_output_time=out.first_output_time,
    )
    return float(loss.value), grads, pred, summary


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def clip_global_norm(grads, c):
    """Scale all gradients by c/||g|| when the global norm exceeds c."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.sum(np.square(g)))
    norm = math.sqrt(sq)
    if norm > c:
        scale = c / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


class AdamW:
    """AdamW with decoupled weight decay (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, lr, weight_decay=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
            v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
            self.m[name] = m
            self.v[name] = v
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            out[name] = p - self.lr * (
                m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p
            )
        return out


# ---------------------------------------------------------------------------
# worker pool
# ---------------------------------------------------------------------------

_WORKER = {}


def _worker_init(net, cfg, data):
    _WORKER["net"] = net
    _WORKER["cfg"] = cfg
    _WORKER["data"] = data


def _grad_chunk(args):
    params, indices = args
    net, cfg, data = _WORKER["net"], _WORKER["cfg"], _WORKER["data"]
    total = None
    loss_sum = 0.0
    correct = 0
    for i in indices:
        loss, grads, pred, summary = run_trial(net, params, cfg, data[i], grad=True)
        loss_sum += loss
        correct += int(pred == data[i][1])
        if total is None:
            total = grads
        else:
            for k in total:
                total[k] = total[k] + grads[k]
    return loss_sum, total, correct, len(indices)


def _eval_chunk(args):
    params, indices = args
    net, cfg, data = _WORKER["net"], _WORKER["cfg"], _WORKER["data"]
    out = []
    for i in indices:
        loss, _, pred, summary = run_trial(net, params, cfg, data[i], grad=False)
        out.append((pred, data[i][1], summary))
    return out


class TrialPool:
    """Maps trial chunks over workers; in-process when workers <= 1."""

    def __init__(self, net, cfg, data):
        self.workers = max(1, cfg.workers)
        self.state = (net, cfg, data)
        self.pool = None
        if self.workers > 1:
            _worker_init(*self.state)
            ctx = mp.get_context("fork")
            self.pool = ctx.Pool(self.workers)

    def map(self, fn, tasks):
        if self.pool is None:
            # rebind before each sweep: several in-process pools may coexist
            _worker_init(*self.state)
            return [fn(t) for t in tasks]
        return self.pool.map(fn, tasks)

    def close(self):
        if self.pool is not None:
            self.pool.close()
            self.pool.join()

    def chunks(self, params, indices):
        n = self.workers
        size = (len(indices) + n - 1) // n
        return [
            (params, indices[k : k + size]) for k in range(0, len(indices), size)
        ]


# ---------------------------------------------------------------------------
# evaluation / training
# ---------------------------------------------------------------------------


def evaluate(net, params, cfg, data, pool=None, exclude_dead_layers=None):
    """Forward-only accuracy and spike metrics over a sample list."""
    if exclude_dead_layers is None:
        exclude_dead_layers = (len(net.sizes) - 1,) if net.observe_output else ()
    local = pool is None
    if local:
        pool = TrialPool(net, cfg, data)
    try:
        tasks = pool.chunks(params, list(range(len(data))))
        results = pool.map(_eval_chunk, tasks)
    finally:
        if local:
            pool.close()
    preds = []
    summaries = []
    correct = 0
    for chunk in results:
        for pred, target, summary in chunk:
            preds.append(pred)
            correct += int(pred == target)
            summaries.append(summary)
    metrics = spike_metrics(summaries, exclude_dead_layers)
    metrics["accuracy"] = correct / max(len(data), 1)
    return metrics


_CSV_COLUMNS = (
    "epoch",
    "train_loss",
    "val_accuracy",
    "max_firing",
    "dead_neurons",
    "fire_count",
    "mean_ttfs",
)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    return f"{x:.10g}"


def train(cfg):
    """Run one training job; writes metrics.csv, report.txt and a checkpoint.

    Returns a summary dict (best epoch, validation/test accuracy, metrics).
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    cfg.to_file(os.path.join(cfg.out_dir, "config.json"))
    train_data, val_data, test_data = load_splits(cfg)
    net, classes = build_network(cfg)
    params = net.init_params(cfg.seed)
    opt = AdamW(cfg.lr, cfg.weight_decay)
    shuffle_rng = np.random.default_rng([cfg.seed, 913])
    pool = TrialPool(net, cfg, train_data)
    val_pool = TrialPool(net, cfg, val_data) if cfg.workers > 1 else None
    best = {"acc": -1.0, "epoch": -1, "params": params}
    rows = []
    timings = []
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    metrics_f = open(metrics_path, "w")
    metrics_f.write(",".join(_CSV_COLUMNS) + "\n")
    metrics_f.flush()
    try:
        for epoch in range(cfg.epochs):
            t0 = time.monotonic()
            perm = shuffle_rng.permutation(len(train_data))
            losses = []
            for start in range(0, len(train_data), cfg.batch_size):
                idx = [int(i) for i in perm[start : start + cfg.batch_size]]
                results = pool.map(_grad_chunk, pool.chunks(params, idx))
                loss_sum = 0.0
                grad_sum = None
                count = 0
                for ls, gs, _, n in results:
                    loss_sum += ls
                    count += n
                    if gs is not None:
                        if grad_sum is None:
                            grad_sum = gs
                        else:
                            for k in grad_sum:
                                grad_sum[k] = grad_sum[k] + gs[k]
                batch_loss = loss_sum / count
                if not np.isfinite(batch_loss):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                    )
                losses.append(batch_loss)
                grads = {k: g / count for k, g in grad_sum.items()}
                grads, _ = clip_global_norm(grads, cfg.clip_norm)
                params = opt.step(params, grads)
            if val_pool is not None:
                metrics = evaluate(net, params, cfg, val_data, pool=val_pool)
            else:
                metrics = evaluate(net, params, cfg, val_data)
            if metrics["accuracy"] > best["acc"]:
                best = {
                    "acc": metrics["accuracy"],
                    "epoch": epoch,
                    "params": {k: v.copy() for k, v in params.items()},
                }
            row = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_accuracy": metrics["accuracy"],
                "max_firing": metrics["max_firing"],
                "dead_neurons": metrics["dead_neurons"],
                "fire_count": metrics["fire_count"],
                "mean_ttfs": metrics["mean_ttfs"],
            }
            rows.append(row)
            metrics_f.write(",".join(_fmt(row[c]) for c in _CSV_COLUMNS) + "\n")
            metrics_f.flush()
            timings.append(time.monotonic() - t0)
    finally:
        metrics_f.close()
        pool.close()
        if val_pool is not None:
            val_pool.close()

    with open(os.path.join(cfg.out_dir, "timing.csv"), "w") as f:
        f.write("epoch,seconds\n")
        for e, s in enumerate(timings):
            f.write(f"{e},{s:.3f}\n")

    test_metrics = evaluate(net, best["params"], cfg, test_data)
    save_checkpoint(
        os.path.join(cfg.out_dir, "checkpoint.bin"),
        os.path.join(cfg.out_dir, "checkpoint.manifest"),
        best["params"],
    )
    summary = {
        "best_epoch": best["epoch"],
        "val_accuracy": best["acc"],
        "test_accuracy": test_metrics["accuracy"],
        "test_metrics": test_metrics,
    }
    with open(os.path.join(cfg.out_dir, "report.txt"), "w") as f:
        f.write(format_report(cfg, summary))
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


def format_report(cfg, summary):
    m = summary["test_metrics"]
    lines = [
        f"dataset: {cfg.dataset}  model: {cfg.model}  loss: {cfg.loss}  seed: {cfg.seed}",
        f"best validation epoch: {summary['best_epoch']}  "
        f"val accuracy: {100 * summary['val_accuracy']:.2f}%",
        f"test accuracy: {100 * summary['test_accuracy']:.2f}%",
        f"max firing: {m['max_firing']:.2f}  dead neurons: {m['dead_neurons']}  "
        f"fire count: {m['fire_count']:.2f}"
        + (f"  mean ttfs: {m['mean_ttfs']:.2f} ms" if m["mean_ttfs"] is not None else ""),
    ]
    return "\n".join(lines) + "\n"


def aggregate_reports(summaries):
    """Table-style aggregate over seeds: mean +- std (median) per metric."""

    def agg(vals):
        vals = np.asarray([v for v in vals if v is not None], dtype=np.float64)
        if vals.size == 0:
            return "--"
        return f"{vals.mean():.2f} ± {vals.std(ddof=0):.2f} ({np.median(vals):.2f})"

    lines = [
        "metric: mean ± std (median) over seeds",
        f"accuracy [%]: {agg([100 * s['test_accuracy'] for s in summaries])}",
        f"max firing: {agg([s['test_metrics']['max_firing'] for s in summaries])}",
        f"dead neurons: {agg([s['test_metrics']['dead_neurons'] for s in summaries])}",
        f"fire count: {agg([s['test_metrics']['fire_count'] for s in summaries])}",
        f"ttfs [ms]: {agg([s['test_metrics']['mean_ttfs'] for s in summaries])}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(bin_path, manifest_path, params):
    """Flat little-endian f64 payload plus a JSON manifest of offsets."""
    manifest = {}
    offset = 0
    with open(bin_path, "wb") as f:
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            f.write(arr.tobytes())
            manifest[name] = {"shape": list(arr.shape), "offset": offset}
            offset += arr.nbytes
    with open(manifest_path, "w") as f:
        json.dump({"dtype": "<f8", "params": manifest}, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(bin_path, manifest_path):
    with open(manifest_path) as f:
        manifest = json.load(f)
    blob = open(bin_path, "rb").read()
    out = {}
    for name, meta in manifest["params"].items():
        shape = tuple(meta["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=start)
        out[name] = arr.reshape(shape).copy()
    return out


# ---------------------------------------------------------------------------
# throughput benchmark
# ---------------------------------------------------------------------------


def bench(cfg, batch_sizes=(16, 64), hidden_sizes=(20,), step_sizes=(0.1, 0.2), n_batches=50):
    """Samples/s for forward-only and forward+backward passes.

    Returns rows (hidden, h, batch, mode, samples_per_s); trends matter,
    not absolute numbers.
    """
    train_data, _, _ = load_splits(cfg)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for hidden in hidden_sizes:
        for h in step_sizes:
            c = dataclasses.replace(cfg, hidden=[hidden], h=h)
            net, _ = build_network(c)
            params = net.init_params(c.seed)
            for batch in batch_sizes:
                for grad in (False, True):
                    idx = rng.integers(0, len(train_data), size=(n_batches, batch))
                    t0 = time.monotonic()
                    for b in range(n_batches):
                        for i in idx[b]:
                            run_trial(net, params, c, train_data[int(i)], grad=grad)
                    dt = time.monotonic() - t0
                    rows.append(
                        {
                            "hidden": hidden,
                            "h": h,
                            "batch": batch,
                            "mode": "forward+backward" if grad else "forward",
                            "samples_per_s": n_batches * batch / dt,
                        }
                    )
    return rows


def write_bench_csv(path, rows):
    with open(path, "w") as f:
        f.write("hidden,h,batch,mode,samples_per_s\n")
        for r in rows:
            f.write(
                f"{r['hidden']},{r['h']:.10g},{r['batch']},{r['mode']},{r['samples_per_s']:.4f}\n"
            )
