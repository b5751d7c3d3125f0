"""DI-AA and the epsilon-ball baselines (FGSM, BIM, PGD).

DI-AA ranks input features by deep Taylor relevance, then enables them one at
a time.  After each enablement the inner generator takes up to ``iterations``
plain gradient steps on ``Z(x')[y] + c * ||x - x'||_2`` restricted to the
enabled features, stopping as soon as the prediction leaves ``y``.  Because
only enabled features ever move, the number of changed features is bounded by
the number of outer iterations.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .dtd import dtd_relevance, sort_saliency
from .errors import ClassIndexError, ConfigError
from .metrics import lp_norms
from .tensor import CrossEntropy, PerturbationObjective, as_tensor, forward, value_and_gradient


@dataclass
class AttackConfig:
    eps: float = 0.0032  # DI-AA step size
    iterations: int = 21  # inner steps T per enabled feature
    c: float = 1.0
    clip_min: float = 0.0
    clip_max: float = 1.0
    max_features: int | None = None  # None: every feature may be enabled
    targeted: bool = False
    target: int | None = None
    epsilon_ball: float = 0.1  # L-inf radius for the baselines
    baseline_step: float | None = None  # None: epsilon_ball / 10
    baseline_steps: int = 40
    seed: int = 0
    optimizer: str = "sgd"  # "adam" swaps the plain step for an Adam step

    def __post_init__(self):
        if not self.clip_min < self.clip_max:
            raise ConfigError(f"clip_min {self.clip_min} must be < clip_max {self.clip_max}")
        if int(self.iterations) < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        # c == 0 is accepted as the pure-logit degenerate case
        if not 0.0 <= self.c <= 1.0:
            raise ConfigError(f"c must be in [0, 1], got {self.c}")
        if self.eps < 0:
            raise ConfigError(f"eps must be >= 0, got {self.eps}")
        if self.epsilon_ball < 0:
            raise ConfigError(f"epsilon_ball must be >= 0, got {self.epsilon_ball}")
        if self.max_features is not None and int(self.max_features) < 1:
            raise ConfigError(f"max_features must be >= 1, got {self.max_features}")
        if int(self.baseline_steps) < 1:
            raise ConfigError(f"baseline_steps must be >= 1, got {self.baseline_steps}")
        if self.targeted and self.target is None:
            raise ConfigError("targeted attack needs a target label")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")

    @property
    def step(self):
        return self.epsilon_ball / 10.0 if self.baseline_step is None else self.baseline_step

    def to_dict(self):
        return asdict(self)


@dataclass
class AttackOutcome:
    x_adv: np.ndarray
    success: bool
    outer_iterations: int
    inner_iterations: int
    l0: int
    l1: float
    l2: float
    predicted: int


def clip_box(x, clip_min=0.0, clip_max=1.0):
    if not clip_min < clip_max:
        raise ConfigError(f"clip_min {clip_min} must be < clip_max {clip_max}")
    return np.clip(x, clip_min, clip_max)


def is_success(predicted, true_class, cfg):
    if cfg.targeted:
        return predicted == cfg.target
    return predicted != true_class


def _check_labels(network, true_class, cfg):
    for label in (true_class, cfg.target if cfg.targeted else 0):
        if not 0 <= int(label) < network.classes:
            raise ClassIndexError(f"class index {label} outside [0, {network.classes})")


def _outcome(x, x_adv, success, outer, inner, predicted):
    l0, l1, l2 = lp_norms(x, x_adv)
    return AttackOutcome(x_adv, bool(success), outer, inner, l0, l1, l2, int(predicted))


def _objective(x, true_class, cfg):
    index = cfg.target if cfg.targeted else true_class
    return PerturbationObjective(index, x, cfg.c, targeted=cfg.targeted)


def attack_objective(network, x, x_adv, true_class, cfg):
    """Value and x'-gradient of the relaxed objective, logits taken at ``x_adv``."""
    _check_labels(network, true_class, cfg)
    x = as_tensor(x, network.input_shape)
    return value_and_gradient(network, x_adv, _objective(x, true_class, cfg))


class AdamState:
    """Moment estimates for the optional Adam update of the inner loop."""

    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def direction(self, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def ae_gen(x_adv, x, true_class, network, cfg, mask, state=None):
    """Up to ``cfg.iterations`` masked gradient steps; returns ``(x_adv, success, steps)``.

    Success is tested before the first step and after every step.  Only
    coordinates where ``mask`` is set can change.
    """
    _check_labels(network, true_class, cfg)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x_adv.shape:
        mask = mask.reshape(x_adv.shape)
    objective = _objective(x, true_class, cfg)
    if state is None and cfg.optimizer == "adam":
        state = AdamState(x_adv.shape)

    trace = forward(network, x_adv)
    if is_success(trace.predicted, true_class, cfg):
        return x_adv, True, 0
    if not mask.any():
        return x_adv, False, 0
    for step in range(1, int(cfg.iterations) + 1):
        _, grad = value_and_gradient(network, x_adv, objective, trace=trace)
        direction = grad if state is None else state.direction(grad)
        moved = clip_box(x_adv - cfg.eps * direction, cfg.clip_min, cfg.clip_max)
        x_adv = np.where(mask, moved, x_adv)
        trace = forward(network, x_adv)
        if is_success(trace.predicted, true_class, cfg):
            return x_adv, True, step
    return x_adv, False, int(cfg.iterations)


def di_aa(x, true_class, network, cfg, rng=None):
    """Relevance-ordered, one-feature-at-a-time adversarial example search."""
    _check_labels(network, true_class, cfg)
    x = as_tensor(x, network.input_shape)
    x_adv = x.copy()
    predicted = forward(network, x).predicted
    if is_success(predicted, true_class, cfg):
        return _outcome(x, x_adv, True, 0, 0, predicted)

    saliency_class = cfg.target if cfg.targeted else true_class
    order = sort_saliency(dtd_relevance(network, x, saliency_class, cfg.clip_min, cfg.clip_max))
    limit = order.size if cfg.max_features is None else min(int(cfg.max_features), order.size)
    mask = np.zeros(x.shape, dtype=bool)
    flat_mask = mask.reshape(-1)
    state = AdamState(x.shape) if cfg.optimizer == "adam" else None
    inner = 0
    success = False
    outer = 0
    for outer in range(1, limit + 1):
        flat_mask[order[outer - 1]] = True
        x_adv, success, used = ae_gen(x_adv, x, true_class, network, cfg, mask, state)
        inner += used
        if success:
            break
    predicted = forward(network, x_adv).predicted
    return _outcome(x, x_adv, success, outer, inner, predicted)


def _ce_sign(network, x_adv, true_class, cfg):
    """Sign of the ascent direction for the baseline's loss."""
    if cfg.targeted:
        _, grad = value_and_gradient(network, x_adv, CrossEntropy(cfg.target))
        return -np.sign(grad)
    _, grad = value_and_gradient(network, x_adv, CrossEntropy(true_class))
    return np.sign(grad)


def fgsm(x, true_class, network, cfg, rng=None):
    """One signed-gradient step of size ``epsilon_ball``."""
    _check_labels(network, true_class, cfg)
    x = as_tensor(x, network.input_shape)
    predicted = forward(network, x).predicted
    if is_success(predicted, true_class, cfg):
        return _outcome(x, x.copy(), True, 0, 0, predicted)
    x_adv = x + cfg.epsilon_ball * _ce_sign(network, x, true_class, cfg)
    x_adv = project_ball(x_adv, x, cfg.epsilon_ball, cfg.clip_min, cfg.clip_max)
    predicted = forward(network, x_adv).predicted
    return _outcome(x, x_adv, is_success(predicted, true_class, cfg), 1, 1, predicted)


def project_ball(x_adv, x, radius, clip_min=0.0, clip_max=1.0):
    """Clip to the box, then to the L-inf ball so that ``|x_adv - x| <= radius`` holds in floating point."""
    out = np.clip(clip_box(x_adv, clip_min, clip_max), x - radius, x + radius)
    # x +- radius can round one ulp outside the ball; step those coordinates back toward x
    over = np.abs(out - x) > radius
    while over.any():
        out = np.where(over, np.nextafter(out, x), out)
        over = np.abs(out - x) > radius
    return out


def _iterate(x, x_adv, true_class, network, cfg):
    predicted = forward(network, x_adv).predicted
    steps = 0
    for steps in range(1, int(cfg.baseline_steps) + 1):
        x_adv = x_adv + cfg.step * _ce_sign(network, x_adv, true_class, cfg)
        x_adv = project_ball(x_adv, x, cfg.epsilon_ball, cfg.clip_min, cfg.clip_max)
        predicted = forward(network, x_adv).predicted
        if is_success(predicted, true_class, cfg):
            break
    return _outcome(x, x_adv, is_success(predicted, true_class, cfg), 1, steps, predicted)


def bim(x, true_class, network, cfg, rng=None):
    """Iterated FGSM projected onto the L-inf ball and the clip box."""
    _check_labels(network, true_class, cfg)
    x = as_tensor(x, network.input_shape)
    predicted = forward(network, x).predicted
    if is_success(predicted, true_class, cfg):
        return _outcome(x, x.copy(), True, 0, 0, predicted)
    return _iterate(x, x.copy(), true_class, network, cfg)


def pgd(x, true_class, network, cfg, rng=None):
    """BIM from a uniform random start inside the ball."""
    _check_labels(network, true_class, cfg)
    x = as_tensor(x, network.input_shape)
    predicted = forward(network, x).predicted
    if is_success(predicted, true_class, cfg):
        return _outcome(x, x.copy(), True, 0, 0, predicted)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    noise = rng.uniform(-cfg.epsilon_ball, cfg.epsilon_ball, size=x.shape)
    start = project_ball(x + noise, x, cfg.epsilon_ball, cfg.clip_min, cfg.clip_max)
    return _iterate(x, start, true_class, network, cfg)


ATTACKS = {"diaa": di_aa, "fgsm": fgsm, "bim": bim, "pgd": pgd}


def get_attack(name):
    try:
        return ATTACKS[name]
    except KeyError:
        raise ConfigError(f"unknown attack {name!r}; choose from {sorted(ATTACKS)}") from None
