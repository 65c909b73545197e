"""Weighted human-robot cotraining utilities and the interpolation study.

The loss over the combined dataset weights the robot-domain term by
alpha = n_human / (n_human + n_robot) and the human term by 1 - alpha, which
makes the two domains' total weight mass equal. Two equivalent realizations
are provided: a domain-balanced sampler (pick robot with probability alpha,
then uniform within the domain) and per-sample loss weights under uniform
sampling; both have the same expectation and are tested for it.

The toy policy is a small tanh MLP with hand-written analytic gradients (the
real policies this pipeline feeds are out of scope here); it powers a
desk-scale study of how a policy asked to perform a human-domain task in the
robot domain interpolates placement heights from the robot tasks it saw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .dataset import DatasetIndex, Domain

DIVERGENCE_LIMIT = 1e6


@dataclass
class CotrainWeights:
    alpha: float
    per_sample_weight: dict[Domain, float]
    counts: tuple[int, int]          # (n_human, n_robot)

    def __post_init__(self) -> None:
        h, r = self.counts
        if h <= 0 or r <= 0:
            raise ValueError("cotraining needs both domains populated")
        if self.alpha != h / (h + r):
            raise ValueError("alpha must equal n_human / (n_human + n_robot)")
        # under uniform sampling over the union, the expected weight mass per
        # domain matches the loss coefficients exactly
        mass_robot = (r / (h + r)) * self.per_sample_weight[Domain.ROBOT]
        mass_human = (h / (h + r)) * self.per_sample_weight[Domain.HUMAN]
        if abs(mass_robot - self.alpha) > 1e-12 or abs(mass_human - (1 - self.alpha)) > 1e-12:
            raise ValueError("per-sample weights do not realize the domain weighting")

    @staticmethod
    def from_counts(n_human: int, n_robot: int) -> "CotrainWeights":
        if n_human <= 0 or n_robot <= 0:
            raise ValueError("cotraining needs both domains populated")
        alpha = n_human / (n_human + n_robot)
        # mean per-sample weight is 1 over the combined set
        return CotrainWeights(
            alpha,
            {Domain.ROBOT: n_human / n_robot, Domain.HUMAN: n_robot / n_human},
            (n_human, n_robot),
        )


def compute_weights(index: DatasetIndex) -> CotrainWeights:
    return CotrainWeights.from_counts(index.n_human, index.n_robot)


def sample_batch(
    index: DatasetIndex,
    weights: CotrainWeights,
    batch_size: int,
    rng: np.random.Generator | int,
) -> list[str]:
    """Draw episode ids: robot with probability alpha, uniform within domain."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    human_ids = [e.id for e in index.episodes if e.domain is Domain.HUMAN]
    robot_ids = [e.id for e in index.episodes if e.domain is Domain.ROBOT]
    if not human_ids or not robot_ids:
        raise ValueError("sampler needs both domains populated")
    pick_robot = rng.random(batch_size) < weights.alpha
    idx_robot = rng.integers(0, len(robot_ids), size=batch_size)
    idx_human = rng.integers(0, len(human_ids), size=batch_size)
    return [
        robot_ids[idx_robot[i]] if pick_robot[i] else human_ids[idx_human[i]]
        for i in range(batch_size)
    ]


# ---------------------------------------------------------------------------
# toy policy: tanh MLP with analytic gradients
# ---------------------------------------------------------------------------

class ToyPolicy(BaseEstimator):
    """Small float64 tanh MLP regression head with hand-written backprop."""

    def __init__(self, layer_sizes=(64, 64), seed: int = 0):
        self.layer_sizes = tuple(layer_sizes)
        self.seed = seed

    def init(self, n_in: int, n_out: int) -> "ToyPolicy":
        rng = np.random.default_rng(self.seed)
        dims = [n_in, *self.layer_sizes, n_out]
        self.weights_, self.biases_ = [], []
        for a, b in zip(dims[:-1], dims[1:]):
            bound = math.sqrt(6.0 / (a + b))
            self.weights_.append(rng.uniform(-bound, bound, size=(a, b)))
            self.biases_.append(np.zeros(b))
        return self

    def _check_init(self):
        if not hasattr(self, "weights_"):
            raise ValueError("policy is not initialized; call init or fit first")

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._check_init()
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        for w, b in zip(self.weights_[:-1], self.biases_[:-1]):
            h = np.tanh(h @ w + b)
        return h @ self.weights_[-1] + self.biases_[-1]

    predict = forward

    def loss_and_grads(self, x, y, sample_weight=None):
        """Weighted MSE (mean over batch of w_i * ||f(x_i) - y_i||^2) and its
        gradients w.r.t. every weight and bias."""
        self._check_init()
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        n = x.shape[0]
        w_s = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)

        acts = [x]
        pre = []
        h = x
        for w, b in zip(self.weights_[:-1], self.biases_[:-1]):
            z = h @ w + b
            pre.append(z)
            h = np.tanh(z)
            acts.append(h)
        out = h @ self.weights_[-1] + self.biases_[-1]

        diff = out - y
        loss = float(np.mean(w_s * np.sum(diff * diff, axis=1)))
        # d loss / d out
        g = (2.0 / n) * diff * w_s[:, None]
        grads_w = [None] * len(self.weights_)
        grads_b = [None] * len(self.biases_)
        grads_w[-1] = acts[-1].T @ g
        grads_b[-1] = g.sum(axis=0)
        for layer in range(len(self.weights_) - 2, -1, -1):
            g = (g @ self.weights_[layer + 1].T) * (1.0 - np.tanh(pre[layer]) ** 2)
            grads_w[layer] = acts[layer].T @ g
            grads_b[layer] = g.sum(axis=0)
        return loss, grads_w, grads_b

    def fit(self, X, y, sample_weight=None, lr: float = 1e-3, steps: int = 5000,
            batch_size: int = 64, rng: np.random.Generator | int = 0):
        """Mini-batch SGD on the weighted MSE; returns self (loss_curve_ set)."""
        train_toy(self, np.asarray(X), np.asarray(y), sample_weight=sample_weight,
                  lr=lr, steps=steps, batch_size=batch_size, rng=rng)
        return self


def train_toy(
    policy: ToyPolicy,
    x: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray | None = None,
    domains: np.ndarray | None = None,
    weights: CotrainWeights | None = None,
    mode: str = "weighting",
    lr: float = 1e-3,
    steps: int = 5000,
    batch_size: int = 64,
    rng: np.random.Generator | int = 0,
) -> list[float]:
    """Train on a mixed-domain regression set; returns the loss curve.

    Domain weighting is realized either by per-sample loss weights under
    uniform batches (``mode="weighting"``) or by domain-balanced batch
    sampling with unit weights (``mode="sampling"``). With ``weights=None``
    the trainer runs single-domain style: uniform sampling, unit weights.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n = x.shape[0]
    if not hasattr(policy, "weights_"):
        policy.init(x.shape[1], y.shape[1])

    w_all = None
    idx_by_domain = None
    if weights is not None:
        if domains is None:
            raise ValueError("domain labels required with cotraining weights")
        domains = np.asarray(domains)
        if mode == "weighting":
            w_all = np.where(
                domains == Domain.ROBOT.value,
                weights.per_sample_weight[Domain.ROBOT],
                weights.per_sample_weight[Domain.HUMAN],
            )
        elif mode == "sampling":
            idx_by_domain = {
                "robot": np.nonzero(domains == Domain.ROBOT.value)[0],
                "human": np.nonzero(domains == Domain.HUMAN.value)[0],
            }
            if not len(idx_by_domain["robot"]) or not len(idx_by_domain["human"]):
                raise ValueError("sampling mode needs both domains populated")
        else:
            raise ValueError(f"unknown cotraining mode {mode!r}")
    if sample_weight is not None:
        extra = np.asarray(sample_weight, dtype=np.float64)
        w_all = extra if w_all is None else w_all * extra

    curve = []
    for step in range(steps):
        if idx_by_domain is not None:
            pick_robot = rng.random(batch_size) < weights.alpha
            ri = rng.integers(0, len(idx_by_domain["robot"]), size=batch_size)
            hi = rng.integers(0, len(idx_by_domain["human"]), size=batch_size)
            batch = np.where(pick_robot, idx_by_domain["robot"][ri], idx_by_domain["human"][hi])
            bw = None
        else:
            batch = rng.integers(0, n, size=batch_size)
            bw = None if w_all is None else w_all[batch]
        loss, gw, gb = policy.loss_and_grads(x[batch], y[batch], bw)
        if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise RuntimeError(f"training diverged at step {step}: loss {loss}")
        for k in range(len(policy.weights_)):
            policy.weights_[k] -= lr * gw[k]
            policy.biases_[k] -= lr * gb[k]
        curve.append(loss)
    policy.loss_curve_ = curve
    return curve


def expected_weighted_loss(losses: np.ndarray, domains: np.ndarray,
                           weights: CotrainWeights, mode: str) -> float:
    """Expectation of the per-draw weighted loss under either realization;
    used to verify the two modes agree."""
    losses = np.asarray(losses, dtype=np.float64)
    domains = np.asarray(domains)
    robot = domains == Domain.ROBOT.value
    if mode == "sampling":
        return float(
            weights.alpha * losses[robot].mean() + (1 - weights.alpha) * losses[~robot].mean()
        )
    if mode == "weighting":
        w = np.where(robot, weights.per_sample_weight[Domain.ROBOT],
                     weights.per_sample_weight[Domain.HUMAN])
        return float((w * losses).mean())
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# placement-height interpolation study
# ---------------------------------------------------------------------------

@dataclass
class HeightTask:
    task_id: str
    domain: Domain
    height_cm: float


@dataclass
class HeightTaskSpec:
    """Synthetic task family around one human task bracketed by robot tasks.

    The embodiment gap is an additive offset on the human domain's height cue
    plus the opposite domain flag; per-demo placement heights spread around
    each task's nominal height with ``noise_scale``.
    """

    tasks: list[HeightTask] = field(default_factory=lambda: [
        HeightTask("h_bucket", Domain.HUMAN, 15.3),
        HeightTask("r_pad", Domain.ROBOT, 0.3),
        HeightTask("r_platform", Domain.ROBOT, 20.7),
    ])
    samples_per_task: int = 256
    human_obs_offset: float = 8.0     # cm added to the human-domain cue
    noise_scale: float = 3.0          # per-demo placement-height spread, cm
    onehot_jitter: float = 0.1        # task-conditioning noise

    def __post_init__(self) -> None:
        if any(t.height_cm <= 0 for t in self.tasks):
            raise ValueError("placement heights must be positive")
        human = {t.task_id for t in self.tasks if t.domain is Domain.HUMAN}
        robot = {t.task_id for t in self.tasks if t.domain is Domain.ROBOT}
        if human & robot:
            raise ValueError("human and robot task ids must be disjoint")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate task ids")

    def task(self, task_id: str) -> HeightTask:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise ValueError(f"unknown task id {task_id!r}")

    def with_pp_set(self) -> "HeightTaskSpec":
        """Adds pick-and-place analog tasks at further heights (non-normative)."""
        extra = [
            HeightTask("pp_robot_low", Domain.ROBOT, 5.1),
            HeightTask("pp_robot_high", Domain.ROBOT, 12.4),
            HeightTask("pp_human_mid", Domain.HUMAN, 9.8),
            HeightTask("pp_human_high", Domain.HUMAN, 18.2),
        ]
        return HeightTaskSpec(self.tasks + extra, self.samples_per_task,
                              self.human_obs_offset, self.noise_scale, self.onehot_jitter)


STANDARD_SUBSETS = (
    ("h_bucket",),
    ("h_bucket", "r_pad"),
    ("h_bucket", "r_platform"),
    ("h_bucket", "r_pad", "r_platform"),
)


@dataclass
class MechanismResult:
    subset: tuple[str, ...]
    predicted_height_cm: float
    abs_error_cm: float
    n_human: int
    n_robot: int


def _build_observations(spec: HeightTaskSpec, subset: tuple[str, ...], rng):
    vocab = [t.task_id for t in spec.tasks]
    xs, ys, domains = [], [], []
    for task_id in subset:
        task = spec.task(task_id)
        heights = task.height_cm + rng.normal(scale=spec.noise_scale,
                                              size=spec.samples_per_task)
        flag = 1.0 if task.domain is Domain.ROBOT else -1.0
        offset = 0.0 if task.domain is Domain.ROBOT else spec.human_obs_offset
        onehot = np.zeros(len(vocab))
        onehot[vocab.index(task_id)] = 1.0
        for h in heights:
            row = np.concatenate((
                [flag],
                onehot + rng.normal(scale=spec.onehot_jitter, size=len(vocab)),
                [h + offset],
            ))
            xs.append(row)
            ys.append([h])
            domains.append(task.domain.value)
    return np.asarray(xs), np.asarray(ys), np.asarray(domains), vocab


def run_mechanism_experiment(
    spec: HeightTaskSpec,
    subset: tuple[str, ...] | list[str],
    seed: int = 0,
    steps: int = 4000,
    lr: float = 2e-3,
    hidden=(64, 64),
) -> MechanismResult:
    """Train on a task subset, then query the human task in the robot domain.

    The query observation carries the robot domain flag and the human task's
    conditioning, evaluated at the task's nominal scene cue without the
    human-domain offset; the report is the denormalized height prediction.
    """
    subset = tuple(subset)
    for task_id in subset:
        spec.task(task_id)  # raises on unknown ids
    if "h_bucket" not in subset and not any(
        spec.task(t).domain is Domain.HUMAN for t in subset
    ):
        raise ValueError("subset must include the human task under study")
    ss = np.random.SeedSequence([seed, len(subset)])
    data_rng, train_rng = (np.random.default_rng(c) for c in ss.spawn(2))
    x, y, domains, vocab = _build_observations(spec, subset, data_rng)

    # unified z-score normalization over the training subset
    x_mean, x_std = x.mean(axis=0), x.std(axis=0)
    x_std[x_std < 1e-9] = 1.0
    y_mean, y_std = y.mean(), y.std()
    if y_std < 1e-9:
        y_std = 1.0
    xn = (x - x_mean) / x_std
    yn = (y - y_mean) / y_std

    n_human = int(np.sum(domains == Domain.HUMAN.value))
    n_robot = int(np.sum(domains == Domain.ROBOT.value))
    policy = ToyPolicy(layer_sizes=hidden, seed=int(ss.generate_state(1)[0] % (2**31)))
    policy.init(xn.shape[1], 1)
    if n_human and n_robot:
        weights = CotrainWeights.from_counts(n_human, n_robot)
        train_toy(policy, xn, yn, domains=domains, weights=weights, mode="weighting",
                  lr=lr, steps=steps, rng=train_rng)
    else:
        # single-domain run (the human-only ablation)
        train_toy(policy, xn, yn, lr=lr, steps=steps, rng=train_rng)

    human_task = next(t for t in (spec.task(tid) for tid in subset) if t.domain is Domain.HUMAN)
    onehot = np.zeros(len(vocab))
    onehot[vocab.index(human_task.task_id)] = 1.0
    query = np.concatenate(([1.0], onehot, [human_task.height_cm]))  # robot flag, no offset
    pred_n = policy.forward(((query - x_mean) / x_std).reshape(1, -1))[0, 0]
    pred = pred_n * y_std + y_mean
    return MechanismResult(
        subset, float(pred), float(abs(pred - human_task.height_cm)), n_human, n_robot
    )


def run_mechanism_suite(
    spec: HeightTaskSpec | None = None,
    seeds=range(10),
    subsets=STANDARD_SUBSETS,
    **kw,
) -> dict[tuple[str, ...], list[MechanismResult]]:
    spec = spec or HeightTaskSpec()
    return {
        tuple(subset): [run_mechanism_experiment(spec, subset, seed, **kw) for seed in seeds]
        for subset in subsets
    }


def mean_abs_error(results: list[MechanismResult]) -> float:
    return float(np.mean([r.abs_error_cm for r in results]))
