import logging
import math

from dataclasses import dataclass, field

import numpy as np

from numerize import numerize

from ..core import OuSchedule, SampleSet, ScoreField
from ..errors import PoisonedModelError, RejectedInputError, TrainingDivergedError
from ..fusion_utils import make_stream
from .ou_process import _decay_and_var, conditional_score

# Frequency range of the sinusoidal time features
OMEGA_RANGE = (1.0, 1000.0)


def time_embedding(t, dim: int = 16):
    """
    Sinusoidal time features [sin(w_j t), cos(w_j t)], w_j geometrically
    spaced over [1, 1000]

    Parameters
    ----------
    t : float or array-like, shape (n,)
        times.
    dim : int, optional
        feature count, even. The default is 16.

    Returns
    -------
    np.ndarray
        shape (dim,) for a scalar t, (n, dim) otherwise.

    """
    if dim < 2 or dim % 2:
        raise RejectedInputError("Time embedding dim must be even and positive, got {}".format(dim))
    t = np.asarray(t, dtype=float)
    omega = np.geomspace(*OMEGA_RANGE, dim // 2)
    phase = t[..., None] * omega
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


class MlpScoreNet(ScoreField):
    """
    Fully connected score network on [x, time_embedding(t)] with tanh hidden
    layers. The raw output is divided by the marginal transition std at
    max(t, t_floor), so the network regresses unit-scale noise.

    Parameters
    ----------
    dim : int
        data dimension.
    schedule : OuSchedule
        forward process the net was trained for.
    hidden : tuple, optional
        hidden layer widths. The default is (64, 64).
    embed_dim : int, optional
        time embedding size. The default is 16.
    t_floor : float, optional
        smallest evaluation time, 1e-3 T by default.
    params : array-like, optional
        flat parameter vector, zeros by default.

    """

    def __init__(
        self, dim: int, schedule: OuSchedule, hidden=(64, 64), embed_dim: int = 16,
        t_floor: float = None, params=None
    ):
        if int(dim) != dim or dim < 1:
            raise RejectedInputError("Net dimension must be a positive integer, got {}".format(dim))
        if embed_dim % 2 or embed_dim < 2:
            raise RejectedInputError("Time embedding dim must be even, got {}".format(embed_dim))
        self._dim = int(dim)
        self.schedule = schedule
        self.hidden = tuple(int(h) for h in hidden)
        self.embed_dim = int(embed_dim)
        self.t_floor = 1e-3 * schedule.horizon_T if t_floor is None else float(t_floor)
        if not self.t_floor > 0:
            raise RejectedInputError("t_floor must be positive, got {}".format(self.t_floor))

        sizes = [self._dim + self.embed_dim, *self.hidden, self._dim]
        self.shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.shapes.append(((fan_out, fan_in), (fan_out,)))
        self.n_params = sum(w[0] * w[1] + b[0] for w, b in self.shapes)

        params = np.zeros(self.n_params) if params is None else np.array(params, dtype=float)
        if params.shape != (self.n_params,):
            raise RejectedInputError(
                "Expected {} parameters for this architecture, got {}".format(self.n_params, params.shape)
            )
        params.setflags(write=False)
        self.params = params
        self.poisoned = not bool(np.all(np.isfinite(params)))

    @classmethod
    def initialize(cls, dim: int, schedule: OuSchedule, rng, **kwargs):
        """
        Fresh net with weights drawn N(0, 1/fan_in) and zero biases
        """
        stream = rng if isinstance(rng, np.random.Generator) else make_stream(rng)
        net = cls(dim, schedule, **kwargs)
        chunks = []
        for (fan_out, fan_in), (n_bias,) in net.shapes:
            chunks.append(stream.normal(0.0, 1.0 / math.sqrt(fan_in), size=fan_out * fan_in))
            chunks.append(np.zeros(n_bias))
        return net.with_params(np.concatenate(chunks))

    def with_params(self, params):
        return MlpScoreNet(
            self._dim, self.schedule, self.hidden, self.embed_dim, self.t_floor, params
        )

    @property
    def dim(self) -> int:
        return self._dim

    def layers(self, params=None):
        """
        Unpack a flat parameter vector into [(W, b), ...] views
        """
        params = self.params if params is None else params
        out, offset = [], 0
        for (fan_out, fan_in), (n_bias,) in self.shapes:
            W = params[offset:offset + fan_out * fan_in].reshape(fan_out, fan_in)
            offset += fan_out * fan_in
            b = params[offset:offset + n_bias]
            offset += n_bias
            out.append((W, b))
        return out

    def _inverse_std(self, t):
        _, var_t = _decay_and_var(self.schedule, np.maximum(t, self.t_floor))
        return 1.0 / np.sqrt(var_t)

    def _forward(self, params, t, x):
        z = np.concatenate([x, time_embedding(t, self.embed_dim)], axis=1)
        memory = [z]
        a = z
        layers = self.layers(params)
        for W, b in layers[:-1]:
            a = np.tanh(a @ W.T + b)
            memory.append(a)
        W, b = layers[-1]
        raw = a @ W.T + b
        inv_std = self._inverse_std(t)[:, None]
        return raw * inv_std, (memory, inv_std)

    def _evaluate_batch(self, t, x):
        if self.poisoned:
            raise PoisonedModelError("Score net has non-finite parameters!")
        out, _ = self._forward(self.params, t, x)
        return out

    def descriptor(self) -> dict:
        return {
            "kind": "mlp",
            "dim": self._dim,
            "hidden": list(self.hidden),
            "embed_dim": self.embed_dim,
            "activation": "tanh",
            "output_scaling": "inverse_marginal_std",
            "t_floor": self.t_floor,
            "schedule": self.schedule.to_dict(),
            "n_params": self.n_params,
            "params": self.params.tolist(),
        }

    @classmethod
    def from_descriptor(cls, data: dict):
        if data.get("kind") != "mlp" or data.get("activation", "tanh") != "tanh":
            raise RejectedInputError("Not an MLP checkpoint: {}".format(data.get("kind")))
        net = cls(
            int(data["dim"]),
            OuSchedule.from_dict(data["schedule"]),
            hidden=tuple(data["hidden"]),
            embed_dim=int(data["embed_dim"]),
            t_floor=float(data["t_floor"]),
            params=data["params"],
        )
        if net.n_params != int(data.get("n_params", net.n_params)):
            raise RejectedInputError("Checkpoint parameter count does not match its architecture!")
        return net


def net_forward(net: MlpScoreNet, t, x):
    """
    Evaluate the network, rejecting poisoned parameters
    """
    return net.evaluate(t, x)


def net_gradients(net: MlpScoreNet, t, x_t, target, weights=None, params=None):
    """
    Gradient of mean_n w_n |net(t_n, x_n) - target_n|^2 with respect to the
    flat parameter vector, by backpropagation

    Parameters
    ----------
    net : MlpScoreNet
        architecture, and parameters unless params is given.
    t : array-like, shape (n,)
        times.
    x_t : array-like, shape (n, dim)
        inputs.
    target : array-like, shape (n, dim)
        regression targets.
    weights : array-like, shape (n,), optional
        per-sample loss weights, ones by default.
    params : np.ndarray, optional
        evaluate at these parameters instead of net.params.

    Returns
    -------
    float, np.ndarray
        loss and gradient vector.

    """
    params = net.params if params is None else params
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x_t = np.asarray(x_t, dtype=float).reshape(len(t), net.dim)
    target = np.asarray(target, dtype=float).reshape(len(t), net.dim)
    if len(t) == 0:
        raise RejectedInputError("Gradient batch must not be empty!")
    weights = np.ones(len(t)) if weights is None else np.asarray(weights, dtype=float)

    out, (memory, inv_std) = net._forward(params, t, x_t)
    residual = out - target
    loss = float(np.mean(weights * np.sum(residual ** 2, axis=1)))

    d_out = 2.0 * weights[:, None] * residual / len(t)
    delta = d_out * inv_std
    grads = []
    layers = net.layers(params)
    for depth in range(len(layers) - 1, -1, -1):
        W, _ = layers[depth]
        a_in = memory[depth]
        grads.append((delta.T @ a_in, delta.sum(axis=0)))
        if depth > 0:
            delta = (delta @ W) * (1.0 - a_in ** 2)

    flat = []
    for dW, db in reversed(grads):
        flat.append(dW.ravel())
        flat.append(db)
    return loss, np.concatenate(flat)


@dataclass(frozen=True)
class DsmTrainConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    t_min: float = None
    val_fraction: float = 0.1
    gamma_weighting: str = "sigma_squared"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise RejectedInputError("DSM training needs positive epochs, batch_size and learning_rate!")
        if not 0 <= self.val_fraction < 1:
            raise RejectedInputError("val_fraction must lie in [0, 1), got {}".format(self.val_fraction))
        if self.gamma_weighting not in ("uniform", "sigma_squared"):
            raise RejectedInputError("Unknown gamma_weighting {}".format(self.gamma_weighting))

    def to_dict(self) -> dict:
        return {
            "epochs": int(self.epochs), "batch_size": int(self.batch_size),
            "learning_rate": self.learning_rate, "t_min": self.t_min,
            "val_fraction": self.val_fraction, "gamma_weighting": self.gamma_weighting,
            "seed": int(self.seed),
        }


@dataclass
class DsmResult:
    net: MlpScoreNet
    train_curve: list = field(default_factory=list)
    val_curve: list = field(default_factory=list)
    best_epoch: int = 0


class AdamOptimizer:

    def __init__(self, n_params: int, cfg: DsmTrainConfig):
        self.cfg = cfg
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step_count = 0

    def step(self, params, grad):
        cfg = self.cfg
        self.step_count += 1
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * grad ** 2
        m_hat = self.m / (1.0 - cfg.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - cfg.beta2 ** self.step_count)
        return params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


class DsmTrainer:
    """
    Denoising score-matching trainer for MlpScoreNet: t ~ U[t_min, T],
    x_t from the forward kernel, regression on the conditional score
    """

    def __init__(self, schedule: OuSchedule, cfg: DsmTrainConfig):
        cfg.validate()
        self.schedule = schedule
        self.cfg = cfg
        self.t_min = 1e-3 * schedule.horizon_T if cfg.t_min is None else float(cfg.t_min)
        if not 0 < self.t_min < schedule.horizon_T:
            raise RejectedInputError("Need 0 < t_min < T, got {}".format(self.t_min))
        self.log = logging.getLogger(self.__class__.__name__)

    def _draw(self, x0, stream):
        t = stream.uniform(self.t_min, self.schedule.horizon_T, size=len(x0))
        decay, var_t = _decay_and_var(self.schedule, t)
        x_t = decay[:, None] * x0 + np.sqrt(var_t)[:, None] * stream.standard_normal(x0.shape)
        target = conditional_score(x_t, x0, self.schedule, t)
        weights = var_t if self.cfg.gamma_weighting == "sigma_squared" else np.ones(len(t))
        return t, x_t, target, weights

    def _split(self, rows, stream):
        order = stream.permutation(len(rows))
        n_val = int(round(self.cfg.val_fraction * len(rows)))
        if len(rows) - n_val < 1:
            n_val = 0
        return rows[order[n_val:]], rows[order[:n_val]]

    def train(self, net: MlpScoreNet, data: SampleSet) -> DsmResult:
        """
        Adam on the denoising loss, keeping the parameters with the best
        validation loss (train loss when there is no validation split)

        Parameters
        ----------
        net : MlpScoreNet
            starting network.
        data : SampleSet
            training samples.

        Returns
        -------
        DsmResult

        """
        if data.n == 0:
            raise RejectedInputError("DSM training needs data!")
        if data.dim != net.dim:
            raise RejectedInputError("Data dim {} does not match net dim {}".format(data.dim, net.dim))

        cfg = self.cfg
        stream = make_stream(cfg.seed, 0)
        train_rows, val_rows = self._split(data.rows, stream)
        val_batch = self._draw(val_rows, make_stream(cfg.seed, 1)) if len(val_rows) else None

        self.log.info(
            "DSM training on {} samples ({} held out) for {} epochs".format(
                numerize.numerize(len(train_rows)), len(val_rows), cfg.epochs
            )
        )

        params = np.array(net.params)
        optimizer = AdamOptimizer(net.n_params, cfg)
        result = DsmResult(net)
        best_loss = math.inf

        for epoch in range(int(cfg.epochs)):
            order = stream.permutation(len(train_rows))
            epoch_loss, n_seen = 0.0, 0
            for start in range(0, len(train_rows), int(cfg.batch_size)):
                x0 = train_rows[order[start:start + int(cfg.batch_size)]]
                loss, grad = net_gradients(net, *self._draw(x0, stream), params=params)
                if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                    raise TrainingDivergedError(
                        "DSM training diverged at epoch {}".format(epoch), result.train_curve
                    )
                params = optimizer.step(params, grad)
                epoch_loss += loss * len(x0)
                n_seen += len(x0)

            result.train_curve.append(epoch_loss / n_seen)
            if val_batch is not None:
                val_loss, _ = net_gradients(net, *val_batch, params=params)
                result.val_curve.append(val_loss)
            else:
                val_loss = result.train_curve[-1]

            if not math.isfinite(val_loss):
                raise TrainingDivergedError(
                    "DSM validation loss became non-finite at epoch {}".format(epoch), result.train_curve
                )
            if val_loss < best_loss:
                best_loss = val_loss
                result.best_epoch = epoch
                result.net = net.with_params(params)

            if epoch % 50 == 0:
                self.log.debug("epoch {} train {:.5g} val {:.5g}".format(epoch, result.train_curve[-1], val_loss))

        self.log.info("Best epoch {} with loss {:.5g}".format(result.best_epoch, best_loss))
        return result


def dsm_train(net: MlpScoreNet, data: SampleSet, s: OuSchedule, cfg: DsmTrainConfig = None) -> DsmResult:
    return DsmTrainer(s, cfg or DsmTrainConfig()).train(net, data)
