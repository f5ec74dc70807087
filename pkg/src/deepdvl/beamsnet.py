"""BeamsNet velocity regressor in plain numpy.

Two parallel branches convolve the accelerometer and gyroscope windows over
time (3 input channels, 6 filters of length 2, stride 1, no padding, ReLU).
The flattened branch features are concatenated, passed through dropout and a
ReLU dense stack, then the current DVL velocity is appended and a linear head
produces the body-frame velocity estimate.

The head starts as an identity map on the current-velocity input, so an
untrained network reproduces the least-squares velocity and training learns
a correction to it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from deepdvl.dvl import ls_velocity

logger = logging.getLogger(__name__)

FORMAT_TAG = "beamsnet-params-v1"
N_FILTERS = 6
KERNEL = 2


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class WindowedInput:
    accel_window: np.ndarray
    gyro_window: np.ndarray
    current_velocity: np.ndarray

    @property
    def T(self):
        return len(self.accel_window)


@dataclass
class NetworkParams:
    """All trainable tensors plus the conventions needed to use them.

    ``head_input`` is ``"ls_velocity"`` (3 values) or ``"raw_beams"`` (4);
    ``history`` past measurements of the same kind may be appended to the
    head input.
    """

    conv_accel_w: np.ndarray
    conv_accel_b: np.ndarray
    conv_gyro_w: np.ndarray
    conv_gyro_b: np.ndarray
    dense_w: list
    dense_b: list
    head_w: np.ndarray
    head_b: np.ndarray
    T: int
    dropout_rate: float = 0.2
    head_input: str = "ls_velocity"
    history: int = 0
    accel_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_std: np.ndarray = field(default_factory=lambda: np.ones(3))
    gyro_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_std: np.ndarray = field(default_factory=lambda: np.ones(3))
    residual_sigma: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))
    seed: int = 0

    @property
    def head_width(self):
        return (3 if self.head_input == "ls_velocity" else 4) * (1 + self.history)

    def tensors(self):
        """Trainable arrays in a fixed order."""
        out = [self.conv_accel_w, self.conv_accel_b, self.conv_gyro_w, self.conv_gyro_b]
        for w, b in zip(self.dense_w, self.dense_b):
            out += [w, b]
        return out + [self.head_w, self.head_b]

    def tensor_names(self):
        names = ["conv_accel_w", "conv_accel_b", "conv_gyro_w", "conv_gyro_b"]
        for i in range(len(self.dense_w)):
            names += [f"dense{i}_w", f"dense{i}_b"]
        return names + ["head_w", "head_b"]

    def with_tensors(self, tensors):
        t = list(tensors)
        n = len(self.dense_w)
        dense = t[4 : 4 + 2 * n]
        return NetworkParams(
            t[0], t[1], t[2], t[3],
            list(dense[0::2]), list(dense[1::2]),
            t[-2], t[-1],
            self.T, self.dropout_rate, self.head_input, self.history,
            self.accel_mean, self.accel_std, self.gyro_mean, self.gyro_std,
            self.residual_sigma, self.seed,
        )

    def copy(self):
        return self.with_tensors([a.copy() for a in self.tensors()])


def init_params(T=100, hidden=(512, 64), dropout_rate=0.2, head_input="ls_velocity", history=0, seed=0):
    if T < KERNEL:
        raise ValueError(f"window length T={T} shorter than the conv kernel")
    rng = np.random.default_rng(seed)

    def he(fan_in, shape):
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    feat = 2 * N_FILTERS * (T - KERNEL + 1)
    widths = [feat, *hidden]
    dense_w = [he(widths[i], (widths[i], widths[i + 1])) for i in range(len(hidden))]
    dense_b = [np.zeros(h) for h in hidden]
    params = NetworkParams(
        he(3 * KERNEL, (N_FILTERS, 3, KERNEL)), np.zeros(N_FILTERS),
        he(3 * KERNEL, (N_FILTERS, 3, KERNEL)), np.zeros(N_FILTERS),
        dense_w, dense_b, None, np.zeros(3),
        T, dropout_rate, head_input, history, seed=seed,
    )
    last = hidden[-1] if hidden else feat
    head_w = np.zeros((last + params.head_width, 3))
    head_w[:last] = 0.01 * he(last, (last, 3))
    if head_input == "ls_velocity":
        head_w[last : last + 3] = np.eye(3)
    params.head_w = head_w
    return params


def _as_batch(params, inputs):
    if isinstance(inputs, WindowedInput):
        inputs = (inputs.accel_window[None], inputs.gyro_window[None], np.atleast_1d(inputs.current_velocity)[None])
    acc, gyr, head = (np.asarray(a, dtype=float) for a in inputs)
    if acc.ndim != 3 or acc.shape[1:] != (params.T, 3):
        raise ValueError(f"conv_accel: expected windows of shape (T={params.T}, 3), got {acc.shape[1:]}")
    if gyr.shape != acc.shape:
        raise ValueError(f"conv_gyro: expected windows of shape {acc.shape[1:]}, got {gyr.shape[1:]}")
    if head.shape != (len(acc), params.head_width):
        raise ValueError(f"head: expected {params.head_width} current-measurement inputs, got {head.shape[1:]}")
    return acc, gyr, head


def _conv(x, w, b):
    # x (B, T, C), w (F, C, K) -> (B, T-K+1, F)
    L = x.shape[1] - KERNEL + 1
    out = np.broadcast_to(b, (x.shape[0], L, len(b))).copy()
    for k in range(KERNEL):
        out += x[:, k : k + L, :] @ w[:, :, k].T
    return out


def _conv_backward(x, w, g):
    L = g.shape[1]
    dw = np.empty_like(w)
    for k in range(KERNEL):
        dw[:, :, k] = np.einsum("btf,btc->fc", g, x[:, k : k + L, :])
    return dw, g.sum(axis=(0, 1))


def forward_batch(params, inputs, training=False, rng_seed=None, return_cache=False):
    acc, gyr, head_in = _as_batch(params, inputs)
    acc_n = (acc - params.accel_mean) / params.accel_std
    gyr_n = (gyr - params.gyro_mean) / params.gyro_std
    za = _conv(acc_n, params.conv_accel_w, params.conv_accel_b)
    zg = _conv(gyr_n, params.conv_gyro_w, params.conv_gyro_b)
    ha, hg = np.maximum(za, 0.0), np.maximum(zg, 0.0)
    B = len(acc)
    feat = np.concatenate([ha.reshape(B, -1), hg.reshape(B, -1)], axis=1)
    mask = None
    if training and params.dropout_rate > 0:
        rng = np.random.default_rng(rng_seed)
        keep = 1.0 - params.dropout_rate
        mask = (rng.random(feat.shape) < keep) / keep
        feat = feat * mask
    acts, pre = [feat], []
    h = feat
    for w, b in zip(params.dense_w, params.dense_b):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    head_vec = np.concatenate([h, head_in], axis=1)
    out = head_vec @ params.head_w + params.head_b
    if not return_cache:
        return out
    cache = dict(acc_n=acc_n, gyr_n=gyr_n, za=za, zg=zg, mask=mask, acts=acts, pre=pre, head_vec=head_vec)
    return out, cache


def forward(params, input, training=False, rng_seed=None):
    """Velocity estimate (m/s). A single :class:`WindowedInput` gives shape (3,)."""
    single = isinstance(input, WindowedInput)
    out = forward_batch(params, input, training, rng_seed)
    return out[0] if single else out


def loss_mse(pred, truth):
    """Mean over samples and axes of the squared velocity error."""
    return float(np.mean((np.asarray(pred) - np.asarray(truth)) ** 2))


def backward(params, inputs, truth, rng_seed=None, training=None):
    """Gradients of :func:`loss_mse` w.r.t. every tensor in ``params.tensors()``.

    Dropout is active when ``training`` is true (default: when
    ``params.dropout_rate > 0``) with the mask drawn from ``rng_seed``.
    Returns ``(loss, grads)``.
    """
    if training is None:
        training = params.dropout_rate > 0
    if isinstance(inputs, WindowedInput):
        truth = np.atleast_2d(truth)
    out, c = forward_batch(params, inputs, training, rng_seed, return_cache=True)
    truth = np.asarray(truth, dtype=float)
    diff = out - truth
    loss = float(np.mean(diff**2))
    g = 2.0 * diff / diff.size

    g_head_w = c["head_vec"].T @ g
    g_head_b = g.sum(axis=0)
    n_hidden = len(params.dense_w)
    last = c["acts"][-1].shape[1]
    gh = g @ params.head_w[:last].T
    g_dense_w, g_dense_b = [None] * n_hidden, [None] * n_hidden
    for i in reversed(range(n_hidden)):
        gz = gh * (c["pre"][i] > 0)
        g_dense_w[i] = c["acts"][i].T @ gz
        g_dense_b[i] = gz.sum(axis=0)
        gh = gz @ params.dense_w[i].T
    if c["mask"] is not None:
        gh = gh * c["mask"]
    B = len(out)
    na = c["za"].shape[1] * N_FILTERS
    ga = gh[:, :na].reshape(c["za"].shape) * (c["za"] > 0)
    gg = gh[:, na:].reshape(c["zg"].shape) * (c["zg"] > 0)
    gwa, gba = _conv_backward(c["acc_n"], params.conv_accel_w, ga)
    gwg, gbg = _conv_backward(c["gyr_n"], params.conv_gyro_w, gg)
    grads = [gwa, gba, gwg, gbg]
    for w, b in zip(g_dense_w, g_dense_b):
        grads += [w, b]
    grads += [g_head_w, g_head_b]
    return loss, grads


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validation_fraction: float = 0.15
    patience: int = 10

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")


@dataclass
class Dataset:
    """Stacked training examples; ``truth`` is the body velocity at each epoch."""

    accel: np.ndarray
    gyro: np.ndarray
    head: np.ndarray
    truth: np.ndarray

    def __len__(self):
        return len(self.truth)

    def subset(self, idx):
        return Dataset(self.accel[idx], self.gyro[idx], self.head[idx], self.truth[idx])

    def inputs(self):
        return self.accel, self.gyro, self.head

    @classmethod
    def concat(cls, parts):
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("accel", "gyro", "head", "truth")))


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_val: list = field(default_factory=list)
    best_epoch: int = -1
    initial_val: float = float("nan")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def _normalise_stats(params, data):
    params.accel_mean = data.accel.reshape(-1, 3).mean(axis=0)
    params.accel_std = data.accel.reshape(-1, 3).std(axis=0) + 1e-12
    params.gyro_mean = data.gyro.reshape(-1, 3).mean(axis=0)
    params.gyro_std = data.gyro.reshape(-1, 3).std(axis=0) + 1e-12


def split_dataset(data, fraction, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(data))
    n_val = max(1, int(round(fraction * len(data))))
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def evaluate(params, data, batch=1024):
    preds = [forward_batch(params, (data.accel[i : i + batch], data.gyro[i : i + batch], data.head[i : i + batch]))
             for i in range(0, len(data), batch)]
    return np.concatenate(preds) if preds else np.zeros((0, 3))


def train(dataset, config, params=None, hidden=(512, 64), dropout_rate=0.2, adam_state=None, T=None):
    """Mini-batch Adam training with early stopping on validation loss.

    Returns ``(params, history, adam_state)``; ``params`` are the weights
    with the lowest validation loss seen, starting from the initial ones, so
    the returned validation loss never exceeds the initial one.
    """
    if len(dataset) < 10 * config.batch_size:
        raise ValueError(
            f"dataset of {len(dataset)} examples is smaller than 10 batches of {config.batch_size}"
        )
    train_set, val_set = split_dataset(dataset, config.validation_fraction, config.seed)
    if params is None:
        T = dataset.accel.shape[1] if T is None else T
        params = init_params(T, hidden, dropout_rate, seed=config.seed)
        _normalise_stats(params, train_set)
    params = params.copy()
    tensors = params.tensors()
    if adam_state is None:
        adam_state = AdamState([np.zeros_like(a) for a in tensors], [np.zeros_like(a) for a in tensors])
    rng = np.random.default_rng(config.seed + 1)

    history = TrainHistory()
    best = params.copy()
    best_val = loss_mse(evaluate(params, val_set), val_set.truth)
    history.initial_val = best_val
    stall = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = train_set.subset(idx)
            loss, grads = backward(params, batch.inputs(), batch.truth, rng_seed=rng.integers(2**63))
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            losses.append(loss * len(idx))
            if config.learning_rate == 0:
                continue
            adam_state.t += 1
            b1, b2 = config.beta1, config.beta2
            lr_t = config.learning_rate * np.sqrt(1 - b2**adam_state.t) / (1 - b1**adam_state.t)
            for p, g, m, v in zip(tensors, grads, adam_state.m, adam_state.v):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= lr_t * m / (np.sqrt(v) + config.eps)
        train_loss = sum(losses) / len(train_set)
        val_loss = loss_mse(evaluate(params, val_set), val_set.truth)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(epoch)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        if val_loss < best_val:
            best_val, best, stall = val_loss, params.copy(), 0
            history.best_epoch = epoch
        else:
            stall += 1
        history.best_val.append(best_val)
        logger.debug("epoch %d train %.3e val %.3e", epoch, train_loss, val_loss)
        if stall >= config.patience:
            break

    resid = evaluate(best, val_set) - val_set.truth
    best.residual_sigma = resid.std(axis=0, ddof=1) if len(resid) > 1 else np.full(3, np.nan)
    return best, history, adam_state


def windows_from_logs(imu_log, dvl_log, geom, T, head_input="ls_velocity", history=0):
    """Assemble network inputs at every DVL epoch with a full IMU window.

    The window holds IMU samples ``[e - T, e)`` for epoch index ``e``.
    Returns ``(accel, gyro, head, epoch_rows)`` where ``epoch_rows`` indexes
    the DVL log rows that were usable.
    """
    idx = np.asarray(dvl_log.imu_index)
    if head_input == "ls_velocity":
        meas = np.array([ls_velocity(dvl_log.ping(i), geom) for i in range(len(dvl_log))])
    elif head_input == "raw_beams":
        meas = np.asarray(dvl_log.beams, dtype=float)
    else:
        raise ValueError(f"unknown head_input {head_input!r}")
    rows = [i for i in range(len(idx)) if idx[i] >= T and i >= history]
    rows = np.array(rows, dtype=int)
    offs = np.arange(-T, 0)
    acc = imu_log.specific_force[idx[rows, None] + offs]
    gyr = imu_log.angular_rate[idx[rows, None] + offs]
    head = np.concatenate([meas[rows - h] for h in range(history + 1)], axis=1)
    return acc, gyr, head, rows


def build_dataset(truth, imu_log, dvl_log, geom, T=100, head_input="ls_velocity", history=0):
    acc, gyr, head, rows = windows_from_logs(imu_log, dvl_log, geom, T, head_input, history)
    v_body = truth.body_velocity()[np.asarray(dvl_log.imu_index)[rows]]
    return Dataset(acc, gyr, head, v_body), rows


def infer_measurement(params, imu_buffer, beams, geom, fallback_sigma=None, past=None):
    """Velocity measurement and its covariance for one DVL ping.

    ``imu_buffer`` is ``(specific_force, angular_rate)`` arrays ending at the
    ping. With fewer than ``T`` samples the LS velocity is returned instead,
    with covariance ``fallback_sigma**2 I``, and the third return value is
    ``True``.
    """
    f, w = (np.asarray(a, dtype=float) for a in imu_buffer)
    v_ls = ls_velocity(beams, geom)
    if len(f) < params.T or len(w) < params.T:
        sig = np.full(3, np.nan) if fallback_sigma is None else np.broadcast_to(fallback_sigma, 3)
        return v_ls, np.diag(np.asarray(sig, dtype=float) ** 2), True
    current = v_ls if params.head_input == "ls_velocity" else beams.beams
    head = np.concatenate([current, *(past or [])])
    inp = WindowedInput(f[-params.T :], w[-params.T :], head)
    v = forward(params, inp, training=False)
    return v, np.diag(params.residual_sigma**2), False


def save_params(path, params, adam_state=None, extra=None):
    meta = {
        "format": FORMAT_TAG,
        "T": params.T,
        "dropout_rate": params.dropout_rate,
        "head_input": params.head_input,
        "history": params.history,
        "conv_convention": "channels=xyz,filters=6,kernel=2,stride=1,valid",
        "hidden": [int(w.shape[1]) for w in params.dense_w],
        "seed": params.seed,
        "residual_sigma": [float(s) for s in params.residual_sigma],
        "tensors": params.tensor_names(),
    }
    if extra:
        meta.update(extra)
    arrays = dict(zip(params.tensor_names(), params.tensors()))
    for name in ("accel_mean", "accel_std", "gyro_mean", "gyro_std"):
        arrays[name] = getattr(params, name)
    if adam_state is not None:
        meta["adam_t"] = adam_state.t
        for i, (m, v) in enumerate(zip(adam_state.m, adam_state.v)):
            arrays[f"adam_m{i}"] = m
            arrays[f"adam_v{i}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_params(path):
    """Read an archive written by :func:`save_params`.

    Returns ``(params, adam_state_or_None, meta)``.
    """
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != FORMAT_TAG:
            raise ValueError(f"{path}: not a {FORMAT_TAG} archive")
        t = [z[name] for name in meta["tensors"]]
        n = len(meta["hidden"])
        params = NetworkParams(
            t[0], t[1], t[2], t[3],
            list(t[4 : 4 + 2 * n : 2]), list(t[5 : 5 + 2 * n : 2]),
            t[-2], t[-1],
            int(meta["T"]), float(meta["dropout_rate"]), meta["head_input"], int(meta["history"]),
            z["accel_mean"], z["accel_std"], z["gyro_mean"], z["gyro_std"],
            np.asarray(meta["residual_sigma"], dtype=float), int(meta["seed"]),
        )
        adam = None
        if "adam_t" in meta:
            k = len(t)
            adam = AdamState([z[f"adam_m{i}"] for i in range(k)], [z[f"adam_v{i}"] for i in range(k)], int(meta["adam_t"]))
    return params, adam, meta
