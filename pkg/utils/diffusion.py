"""Categorical diffusion over bond classes.

Only the unordered atom pairs (i < j) carry noise; entry (j, i) always
mirrors (i, j).  The forward kernel is the marginal-preserving one,

    Q(t) = alpha_t I + (1 - alpha_t) 1 m^T,

whose stationary distribution is the corpus bond-class marginal m.  These
kernels are closed under composition, so the kernel from step s to step t
has the same form with alpha_bar_t / alpha_bar_s, and the posterior of E_s
given E_t and E_0 is available in closed form for any s < t.  That is what
lets the sampler jump over steps.

"""

from dataclasses import dataclass
import logging
import math

import numpy as np

from molgraph import N_BOND_CLASSES, InvalidInputError, build_line_graph, matrix_from_pairs, \
    pair_values
import tensorcore as tc

DEFAULT_S_OFFSET = 0.008
ALPHA_MIN = 1e-6
ALPHA_MAX = 1 - 1e-6

logger = logging.getLogger('diffusion')


class ImpossibleTransitionError(ValueError):
    "A posterior was requested for an observation with zero probability."


@dataclass(frozen=True)
class NoiseSchedule:
    """Cosine schedule over T steps.

    alpha_bar has T + 1 entries with alpha_bar[0] == 1; alpha[t] is the
    per-step ratio alpha_bar[t] / alpha_bar[t - 1] (alpha[0] is 1 and unused).

    """
    T: int
    s_offset: float
    alpha_bar: np.ndarray
    alpha: np.ndarray


def build_schedule(T, s_offset=DEFAULT_S_OFFSET):
    """Cosine schedule alpha_bar(t) = f(t) / f(0), f(t) = cos^2(((t/T + s)/(1 + s)) pi/2).

    Per-step ratios are clamped into [1e-6, 1 - 1e-6] and alpha_bar is
    rebuilt as their running product, so alpha_bar is strictly decreasing
    and the last step does not reach exactly zero.

    """
    if int(T) != T or T < 1:
        raise InvalidInputError('T must be a positive integer, got %r' % (T,))
    if s_offset < 0:
        raise InvalidInputError('cosine offset must be >= 0, got %r' % (s_offset,))
    steps = np.arange(T + 1) / T
    f = np.cos((steps + s_offset) / (1 + s_offset) * math.pi / 2) ** 2
    raw = f / f[0]
    alpha = np.ones(T + 1)
    alpha[1:] = np.clip(raw[1:] / raw[:-1], ALPHA_MIN, ALPHA_MAX)
    alpha_bar = np.cumprod(alpha)
    alpha.setflags(write=False)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(int(T), float(s_offset), alpha_bar, alpha)


def _check_marginals(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 1 or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
        raise InvalidInputError('marginals must be a probability vector, got %s' % (m,))
    return m


def _kernel(keep, m):
    return keep * np.eye(len(m)) + (1 - keep) * np.outer(np.ones(len(m)), m)


def transition(t, schedule, m):
    """Unit-step matrix Q(t); row k is the distribution of E_t given E_{t-1} = k."""
    m = _check_marginals(m)
    if not 1 <= t <= schedule.T:
        raise InvalidInputError('step %d outside 1..%d' % (t, schedule.T))
    return _kernel(schedule.alpha[t], m)


def multi_step_transition(s, t, schedule, m):
    """Q_{s->t}, the product Q(s+1)...Q(t), in closed form."""
    m = _check_marginals(m)
    if not 0 <= s < t <= schedule.T:
        raise InvalidInputError('need 0 <= s < t <= %d, got s=%d t=%d' % (schedule.T, s, t))
    return _kernel(float(np.prod(schedule.alpha[s + 1:t + 1])), m)


def cumulative_transition(t, schedule, m):
    """Qbar(t) = Q_{0->t}; the identity at t = 0."""
    if t == 0:
        return np.eye(len(_check_marginals(m)))
    return multi_step_transition(0, t, schedule, m)


@dataclass(frozen=True)
class TransitionModel:
    """A schedule plus the bond-class marginals it preserves."""
    schedule: NoiseSchedule
    marginals: np.ndarray

    def __post_init__(self):
        marginals = _check_marginals(self.marginals).copy()
        marginals.setflags(write=False)
        object.__setattr__(self, 'marginals', marginals)

    @property
    def T(self):
        return self.schedule.T

    @property
    def n_classes(self):
        return len(self.marginals)

    def Q(self, t):
        return transition(t, self.schedule, self.marginals)

    def Qbar(self, t):
        return cumulative_transition(t, self.schedule, self.marginals)

    def Q_between(self, s, t):
        if s == t:
            return np.eye(self.n_classes)
        return multi_step_transition(s, t, self.schedule, self.marginals)

    def to_dict(self):
        return {'T': self.schedule.T,
                's_offset': self.schedule.s_offset,
                'marginals': self.marginals.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(build_schedule(data['T'], data['s_offset']), np.asarray(data['marginals']))


def estimate_marginals(graphs, n_classes=N_BOND_CLASSES):
    """Bond-class frequencies over the unordered pairs of a corpus,
    "no bond" included.

    """
    counts = np.zeros(n_classes)
    for g in graphs:
        if g.n_atoms < 2:
            continue
        values = pair_values(g.bonds, build_line_graph(g.n_atoms))
        counts += np.bincount(values, minlength=n_classes)[:n_classes]
    if counts.sum() == 0:
        raise InvalidInputError('no atom pairs to estimate marginals from')
    return counts / counts.sum()


def sample_categorical(probs, rng):
    """One class per row of a (rows x classes) probability matrix, by
    inverse CDF against a single uniform per row.

    """
    probs = np.asarray(probs)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1]) * cdf[..., -1]
    return np.minimum((u[..., None] >= cdf).sum(axis=-1), probs.shape[-1] - 1)


def forward_corrupt(bonds, t, model, rng):
    """Sample E_t given the clean N x N bond matrix E_0.

    Each pair i < j is drawn from row E_0[i, j] of Qbar(t) and mirrored, so
    the result is symmetric with a zero diagonal.

    """
    bonds = np.asarray(bonds)
    n = len(bonds)
    if n < 2:
        return bonds.copy()
    lg = build_line_graph(n)
    clean = pair_values(bonds, lg)
    noisy = sample_categorical(model.Qbar(t)[clean], rng)
    return matrix_from_pairs(noisy, lg)


def skipped_posterior(e_t, e0, s, t, model):
    """q(E_s | E_t = e_t, E_0 = e0) for any 0 <= s < t.

    Proportional to Q_{s->t}[k, e_t] Qbar(s)[e0, k] over classes k; the
    normalizer is Qbar(t)[e0, e_t].

    """
    if not 0 <= s < t <= model.T:
        raise InvalidInputError('need 0 <= s < t <= %d, got s=%d t=%d' % (model.T, s, t))
    weights = model.Q_between(s, t)[:, e_t] * model.Qbar(s)[e0]
    total = weights.sum()
    if total <= 0:
        raise ImpossibleTransitionError('E_t=%d cannot follow E_0=%d at t=%d' % (e_t, e0, t))
    return weights / total


def unit_step_posterior(e_t, e0, t, model):
    """The standard one-step reverse kernel q(E_{t-1} | E_t, E_0), built from
    Q(t) and Qbar(t-1) directly.

    """
    weights = model.Q(t)[:, e_t] * model.Qbar(t - 1)[e0]
    total = weights.sum()
    if total <= 0:
        raise ImpossibleTransitionError('E_t=%d cannot follow E_0=%d at t=%d' % (e_t, e0, t))
    return weights / total


def posterior_table(e_t, s, t, model):
    """Skipped posteriors for a vector of noisy classes.

    Returns (table, possible): table[p, e0, k] = q(E_s = k | e_t[p], e0),
    and possible[p, e0] is false where e0 cannot have produced e_t[p]
    (those rows of table are zero).

    """
    e_t = np.asarray(e_t, dtype=np.int64)
    weights = model.Q_between(s, t)[:, e_t].T[:, None, :] * model.Qbar(s)[None, :, :]
    totals = weights.sum(axis=-1)
    possible = totals > 0
    table = np.divide(weights, totals[..., None], out=np.zeros_like(weights),
                      where=possible[..., None])
    return table, possible


def model_posterior(clean, e_t, s, t, model, from_logits=True):
    """p(E_s | E_t) = sum over e0 of q(E_s | E_t, e0) p(E_0 = e0 | E_t), per pair.

    clean is an (M x classes) array of clean-bond logits (or probabilities
    with from_logits=False).  Clean classes that could not have produced
    the observed e_t are dropped and the rest renormalized.

    """
    clean = np.asarray(clean.data if isinstance(clean, tc.Tensor) else clean, dtype=np.float64)
    if from_logits:
        clean = np.exp(clean - clean.max(axis=-1, keepdims=True))
        clean = clean / clean.sum(axis=-1, keepdims=True)
    table, possible = posterior_table(e_t, s, t, model)
    weights = clean * possible
    mass = weights.sum(axis=-1, keepdims=True)
    if np.any(mass <= 0):
        raise ImpossibleTransitionError('prediction puts no mass on any clean class '
                                        'compatible with the noisy state')
    result = np.einsum('pe,pek->pk', weights / mass, table)
    return result / result.sum(axis=-1, keepdims=True)


def training_loss(pair_logits, targets, mask=None):
    """Mean cross-entropy of clean-bond logits (M x classes) against the
    clean classes, over the pairs selected by mask (all pairs by default).

    """
    targets = np.asarray(targets, dtype=np.int64)
    if mask is None:
        mask = np.ones(len(targets), dtype=bool)
    selected = np.flatnonzero(mask)
    if len(selected) == 0:
        raise InvalidInputError('training_loss: empty pair mask')
    return tc.cross_entropy(tc.take(pair_logits, selected, axis=0), targets[selected])
