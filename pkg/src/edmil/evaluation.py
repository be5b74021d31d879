"""Live-rollout returns, return scaling and action-matching metrics."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .env import rollout
from .errors import ContractError, ScalingError
from .policy import PolicyNet, action_probs, as_action_rule

REPORT_COLUMNS = ("algo", "env", "n_traj", "seed", "raw_return", "stderr", "scaled_return", "acc", "auc", "apr")


@dataclass
class EvalReport:
    raw_return: float = float("nan")
    stderr: float = float("nan")
    scaled_return: float = float("nan")
    n_episodes: int = 0
    acc: float = float("nan")
    auc: float = float("nan")
    apr: float = float("nan")
    seeds: tuple = ()
    tags: dict = field(default_factory=dict)

    def row(self):
        t = self.tags
        return [t.get("algo", ""), t.get("env", ""), t.get("n_traj", ""), t.get("seed", ""),
                *("%.17g" % v for v in (self.raw_return, self.stderr, self.scaled_return,
                                        self.acc, self.auc, self.apr))]


def average_return(policy, env, n_episodes=300, seed=0, label="eval"):
    """Mean undiscounted return and its standard error over independently seeded episodes."""
    if isinstance(policy, PolicyNet):
        policy = as_action_rule(policy, env)
    returns = np.array([t.ret for t in rollout(env, policy, n_episodes, seed=seed, label=label)])
    stderr = float(returns.std(ddof=1) / np.sqrt(n_episodes)) if n_episodes > 1 else 0.0
    return float(returns.mean()), stderr


def scaled_return(raw, header):
    """Affine rescaling so the demonstrator scores 1 and a uniform-random policy 0."""
    demo, rand = header.demo_return, header.random_return
    if not np.isfinite(demo) or not np.isfinite(rand) or demo == rand:
        raise ScalingError(f"reference returns {demo} and {rand} do not define a scale")
    return (raw - rand) / (demo - rand)


def roc_auc(scores, labels):
    """Trapezoidal area under the ROC curve; ties in score contribute half credit.

    Returns ``nan`` when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # one ROC point per distinct threshold
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def average_precision(scores, labels):
    """Step-wise precision-recall integral: sum over thresholds of (recall gain) x precision."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        return float("nan")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last]
    precision = tps / (last + 1)
    recall = tps / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _reduce(metric, probs, labels):
    n_actions = probs.shape[1]
    if n_actions == 2:
        return metric(probs[:, 1], labels == 1)
    vals = [metric(probs[:, k], labels == k) for k in range(n_actions)]
    vals = [v for v in vals if np.isfinite(v)]
    return float(np.mean(vals)) if vals else float("nan")


def action_matching_metrics(policy, heldout):
    """ACC, AUC and APR of ``policy`` against the actions in ``heldout``.

    ``policy`` is a :class:`PolicyNet` or a callable mapping a state batch to
    action probabilities. Argmax ties go to the lowest action index. AUC and APR
    use the positive class for two actions and a macro one-vs-rest average
    otherwise; they are ``nan`` when the held-out labels hold a single class.
    """
    states, actions, _, _ = heldout.arrays()
    if len(states) == 0:
        raise ContractError("held-out set is empty")
    probs = action_probs(policy, states) if isinstance(policy, PolicyNet) else np.asarray(policy(states))
    acc = float(np.mean(np.argmax(probs, axis=1) == actions))
    if len(np.unique(actions)) < 2:
        return acc, float("nan"), float("nan")
    return acc, _reduce(roc_auc, probs, actions), _reduce(average_precision, probs, actions)


def write_reports_csv(path_or_file, reports):
    close = False
    fh = path_or_file
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        fh = open(path_or_file, "w", newline="")
        close = True
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(r.row())
    finally:
        if close:
            fh.close()
