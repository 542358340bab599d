"""Attention kernels for the bond (line-graph) stream.

exact_softmax_attention is ordinary scaled dot-product attention and costs
O(M^2) in the number of tokens.  linear_attention replaces the softmax
kernel exp(q.k / sqrt(d)) with an inner product of positive random
features, phi(q).phi(k), and never forms the M x M score matrix, so it costs
O(M R) for R features.

Both work on tensorcore Tensors of shape (..., tokens, head_dim), so they
are differentiable and batch over leading (head) axes.

"""

from collections import namedtuple
from dataclasses import dataclass
import logging
import math
import statistics
import time
import tracemalloc

import numpy as np
from scipy import stats

import tensorcore as tc

UNDERFLOW_LIMIT = 1e-30
BENCH_FIELDS = ('kernel', 'n_atoms', 'm_nodes', 'median_ms', 'peak_bytes')

logger = logging.getLogger('fastattn')


class NumericalUnderflowError(FloatingPointError):
    "The linear-attention normalizer fell below the underflow limit."


@dataclass(frozen=True)
class RandomFeatureMap:
    """R x head_dim projection with blockwise-orthogonal rows whose norms
    follow the chi distribution of a Gaussian vector's length.

    """
    features: np.ndarray
    seed: int

    @property
    def n_features(self):
        return self.features.shape[0]

    @property
    def head_dim(self):
        return self.features.shape[1]


def make_feature_map(n_features, head_dim, seed):
    """Draw a RandomFeatureMap; the same arguments give the same map."""
    rng = np.random.default_rng(seed)
    blocks = []
    remaining = n_features
    while remaining > 0:
        q, _ = np.linalg.qr(rng.standard_normal((head_dim, head_dim)))
        blocks.append(q.T[:min(remaining, head_dim)])
        remaining -= head_dim
    directions = np.concatenate(blocks)
    norms = stats.chi.rvs(df=head_dim, size=n_features, random_state=rng)
    features = directions * norms[:, None]
    features.setflags(write=False)
    return RandomFeatureMap(features, seed)


def _swap_last(t):
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tc.transpose(t, axes)


def feature_map(x, rf):
    """Positive features exp(w_r.x - |x|^2 / 2) / sqrt(R)."""
    x = tc.as_tensor(x)
    if x.shape[-1] != rf.head_dim:
        raise tc.InvalidShapeError('feature_map: head_dim %d, map built for %d'
                                   % (x.shape[-1], rf.head_dim))
    projected = tc.matmul(x, rf.features.T)
    half_norm = tc.sum(x * x, axis=-1, keepdims=True) * 0.5
    return tc.exp(projected - half_norm) * (1.0 / math.sqrt(rf.n_features))


def linear_attention(q, k, v, rf):
    """FAVOR+ attention: phi(Q) [phi(K)^T V] / (phi(Q) [phi(K)^T 1]).

    Queries and keys are each scaled by head_dim^(-1/4), so the kernel being
    approximated is the one exact_softmax_attention uses.

    """
    q, k, v = tc.as_tensor(q), tc.as_tensor(k), tc.as_tensor(v)
    scale = q.shape[-1] ** -0.25
    q_features = feature_map(q * scale, rf)
    k_features = feature_map(k * scale, rf)
    context = tc.matmul(_swap_last(k_features), v)
    k_total = tc.sum(k_features, axis=-2, keepdims=True)
    normalizer = tc.sum(q_features * k_total, axis=-1, keepdims=True)
    if np.min(normalizer.data) < UNDERFLOW_LIMIT:
        raise NumericalUnderflowError('linear attention normalizer %.3g below %.0e'
                                      % (np.min(normalizer.data), UNDERFLOW_LIMIT))
    return tc.matmul(q_features, context) / normalizer


def exact_softmax_attention(q, k, v, dropout_rate=0.0, rng=None):
    """softmax(Q K^T / sqrt(d)) V."""
    q, k, v = tc.as_tensor(q), tc.as_tensor(k), tc.as_tensor(v)
    scores = tc.matmul(q, _swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))
    weights = tc.softmax(scores, axis=-1)
    if rng is not None:
        weights = tc.dropout(weights, dropout_rate, rng)
    return tc.matmul(weights, v)


BenchRow = namedtuple('BenchRow', BENCH_FIELDS + ('ok',))


def _exact_peak_estimate(m_nodes):
    # scores, exponentials and weights are each M x M doubles
    return 3 * 8 * m_nodes * m_nodes


def bench_attention(n_atoms_list, kernels=('softmax', 'linear'), repeats=5, head_dim=16,
                    n_features=128, seed=0, memory_limit=2 * 1024 ** 3):
    """Time and measure single-head line-graph attention for each atom count.

    Returns a list of BenchRow.  A kernel/size whose estimated or actual
    allocation does not fit becomes a row with ok=False instead of an
    exception.

    """
    rows = []
    rf = make_feature_map(n_features, head_dim, seed)
    for n_atoms in n_atoms_list:
        m_nodes = n_atoms * (n_atoms - 1) // 2
        rng = np.random.default_rng([seed, n_atoms])
        q, k, v = (rng.standard_normal((m_nodes, head_dim)) for _ in range(3))
        for kernel in kernels:
            if kernel == 'softmax':
                run = lambda: exact_softmax_attention(q, k, v)
            elif kernel == 'linear':
                run = lambda: linear_attention(q, k, v, rf)
            else:
                raise ValueError('unknown kernel %s' % kernel)
            if kernel == 'softmax' and _exact_peak_estimate(m_nodes) > memory_limit:
                logger.warning('skipping %s at N=%d: estimated allocation over %d bytes',
                               kernel, n_atoms, memory_limit)
                rows.append(BenchRow(kernel, n_atoms, m_nodes, float('nan'), -1, False))
                continue
            try:
                rows.append(_bench_one(kernel, n_atoms, m_nodes, run, repeats))
            except MemoryError:
                logger.warning('out of memory for %s at N=%d', kernel, n_atoms)
                rows.append(BenchRow(kernel, n_atoms, m_nodes, float('nan'), -1, False))
    return rows


def _bench_one(kernel, n_atoms, m_nodes, run, repeats):
    with tc.no_grad():
        run()
        timings = []
        for _ in range(repeats):
            start = time.perf_counter()
            run()
            timings.append((time.perf_counter() - start) * 1000.0)
        tracemalloc.start()
        try:
            tracemalloc.reset_peak()
            run()
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
    median_ms = statistics.median(timings)
    logger.info('%s N=%d M=%d: %.3f ms, peak %d bytes', kernel, n_atoms, m_nodes, median_ms, peak)
    return BenchRow(kernel, n_atoms, m_nodes, median_ms, peak, True)


def write_bench_csv(rows, stream):
    print(','.join(BENCH_FIELDS), file=stream)
    for row in rows:
        if row.ok:
            print('%s,%d,%d,%.6f,%d' % row[:5], file=stream)
        else:
            print('%s,%d,%d,failed,failed' % row[:3], file=stream)
