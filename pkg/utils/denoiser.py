"""The dual-stream denoising network.

Two streams run side by side for K layers:

* the primal stream keeps one state per atom (h) and one per ordered atom
  pair (e, N x N, symmetric), updated by edge-modulated self-attention;
* the line stream keeps one state per unordered pair (z, M = N(N-1)/2 line
  nodes) and runs global self-attention over all of them, exact or linear.

After both streams have updated, they exchange information through
cross-attention restricted by the incidence matrix: an atom reads only the
pairs it belongs to and a pair reads only its two atoms.  A global vector y
collects pooled summaries of both streams and modulates the next layer
through FiLM.  The final line states are decoded into clean-bond logits.

Parameters live in a tensorcore.ParameterSet under dotted names
('layers.0.primal.q.weight' and so on); init_params() builds one for a
DenoiserConfig.

"""

from collections import namedtuple
from dataclasses import asdict, dataclass
import logging
import math

import numpy as np

import fastattn
from molgraph import N_BOND_CLASSES, InvalidInputError, build_line_graph
import tensorcore as tc

CROSS_MODES = ('both', 'atoms_from_bonds', 'bonds_from_atoms', 'none')
KERNELS = ('exact', 'linear')
SENTINEL_LOGIT = -1e4

logger = logging.getLogger('denoiser')


@dataclass(frozen=True)
class DenoiserConfig:
    """Network shape and the architectural switches used for ablations.

    The defaults are a desk-scale network; REFERENCE_CONFIG has the
    full-size shape.

    """
    n_layers: int = 3
    d_x: int = 64
    d_e: int = 32
    d_y: int = 128
    n_heads_primal: int = 4
    n_heads_line: int = 4
    n_heads_cross: int = 4
    n_atom_types: int = 5
    n_bond_classes: int = N_BOND_CLASSES
    d_cond: int = 2048
    d_time: int = 16
    ffn_mult: int = 2
    attention_kernel: str = 'exact'
    n_features: int = 128
    dropout: float = 0.1
    attn_dropout: float = 0.1
    drop_path: float = 0.1
    line_stream: bool = True
    cross_attention: str = 'both'
    incidence_mask: bool = True

    def __post_init__(self):
        if self.n_layers < 1:
            raise InvalidInputError('n_layers must be >= 1')
        checks = [('d_x', self.d_x, 'n_heads_primal', self.n_heads_primal),
                  ('d_e', self.d_e, 'n_heads_line', self.n_heads_line),
                  ('d_x', self.d_x, 'n_heads_cross', self.n_heads_cross),
                  ('d_e', self.d_e, 'n_heads_cross', self.n_heads_cross)]
        for dim_name, dim, heads_name, heads in checks:
            if heads < 1 or dim % heads:
                raise InvalidInputError('%s=%d is not divisible by %s=%d'
                                        % (dim_name, dim, heads_name, heads))
        if self.d_time % 2:
            raise InvalidInputError('d_time must be even')
        if self.attention_kernel not in KERNELS:
            raise InvalidInputError('attention_kernel must be one of %s' % (KERNELS,))
        if self.cross_attention not in CROSS_MODES:
            raise InvalidInputError('cross_attention must be one of %s' % (CROSS_MODES,))

    @property
    def atoms_from_bonds(self):
        return self.line_stream and self.cross_attention in ('both', 'atoms_from_bonds')

    @property
    def bonds_from_atoms(self):
        return self.line_stream and self.cross_attention in ('both', 'bonds_from_atoms')

    def to_dict(self):
        return asdict(self)


REFERENCE_CONFIG = DenoiserConfig(n_layers=5, d_x=256, d_e=64, d_y=1024,
                                  n_heads_primal=8, n_heads_line=8, n_heads_cross=8)

DenoiserOutput = namedtuple('DenoiserOutput', ['logits', 'pair_logits', 'attention'])


def _add_linear(params, name, d_in, d_out, rng):
    params.add(name + '.weight', rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out)))
    params.add(name + '.bias', np.zeros(d_out))


def _add_mlp(params, name, d_in, d_hidden, d_out, rng):
    _add_linear(params, name + '.0', d_in, d_hidden, rng)
    _add_linear(params, name + '.1', d_hidden, d_out, rng)


def init_params(config, rng):
    """Fresh parameters for config; the same rng state gives the same set."""
    c = config
    params = tc.ParameterSet()
    _add_linear(params, 'embed.atoms', c.n_atom_types, c.d_x, rng)
    _add_linear(params, 'embed.edges', c.n_bond_classes, c.d_e, rng)
    _add_linear(params, 'embed.global', c.d_cond + c.d_time, c.d_y, rng)
    if c.line_stream:
        _add_mlp(params, 'init_line', c.d_e + 2 * c.d_x, c.d_e, c.d_e, rng)
    for layer in range(c.n_layers):
        p = 'layers.%d' % layer
        _add_linear(params, p + '.film.gamma_p', c.d_y, c.d_x, rng)
        _add_linear(params, p + '.film.beta_p', c.d_y, c.d_x, rng)
        if c.line_stream:
            _add_linear(params, p + '.film.gamma_l', c.d_y, c.d_e, rng)
            _add_linear(params, p + '.film.beta_l', c.d_y, c.d_e, rng)
        for proj in ('q', 'k', 'v', 'out'):
            _add_linear(params, '%s.primal.%s' % (p, proj), c.d_x, c.d_x, rng)
        _add_linear(params, p + '.primal.edge_bias', c.d_e, c.n_heads_primal, rng)
        _add_linear(params, p + '.primal.edge_out', c.n_heads_primal, c.d_e, rng)
        _add_mlp(params, p + '.primal.ffn_x', c.d_x, c.ffn_mult * c.d_x, c.d_x, rng)
        _add_mlp(params, p + '.primal.ffn_e', c.d_e, c.ffn_mult * c.d_e, c.d_e, rng)
        _add_linear(params, p + '.primal.pool', c.d_x + c.d_e, c.d_y, rng)
        if c.line_stream:
            for proj in ('q', 'k', 'v', 'out'):
                _add_linear(params, '%s.line.%s' % (p, proj), c.d_e, c.d_e, rng)
            _add_mlp(params, p + '.line.ffn', c.d_e, c.ffn_mult * c.d_e, c.d_e, rng)
            _add_linear(params, p + '.line.pool_score', c.d_e, 1, rng)
            _add_linear(params, p + '.line.pool', c.d_e, c.d_y, rng)
        if c.atoms_from_bonds:
            _add_linear(params, p + '.cross_atoms.q', c.d_x, c.d_x, rng)
            _add_linear(params, p + '.cross_atoms.k', c.d_e, c.d_x, rng)
            _add_linear(params, p + '.cross_atoms.v', c.d_e, c.d_x, rng)
            _add_linear(params, p + '.cross_atoms.out', c.d_x, c.d_x, rng)
        if c.bonds_from_atoms:
            _add_linear(params, p + '.cross_bonds.q', c.d_e, c.d_e, rng)
            _add_linear(params, p + '.cross_bonds.k', c.d_x, c.d_e, rng)
            _add_linear(params, p + '.cross_bonds.v', c.d_x, c.d_e, rng)
            _add_linear(params, p + '.cross_bonds.out', c.d_e, c.d_e, rng)
        _add_linear(params, p + '.fuse', 2 * c.d_y + c.d_x + c.d_e, c.d_y, rng)
    _add_mlp(params, 'decode', c.d_e, c.d_e, c.n_bond_classes, rng)
    return params


def parameter_breakdown(params):
    """Parameter counts per component: embeddings, primal stream, line
    stream, cross-attention, global/FiLM and decoder.

    """
    groups = {'primal': 0, 'line': 0, 'cross': 0, 'global': 0, 'embed': 0, 'decode': 0}
    for name, param in params.items():
        parts = name.split('.')
        if parts[0] == 'layers':
            key = parts[2]
            group = {'primal': 'primal', 'line': 'line', 'cross_atoms': 'cross',
                     'cross_bonds': 'cross'}.get(key, 'global')
        elif parts[0] == 'init_line':
            group = 'line'
        else:
            group = parts[0]
        groups[group] += param.data.size
    return groups


def linear(params, name, x):
    return tc.matmul(x, params[name + '.weight']) + params[name + '.bias']


def mlp(params, name, x):
    """Two-layer map with GELU in between."""
    return linear(params, name + '.1', tc.gelu(linear(params, name + '.0', x)))


def _split_heads(x, n_heads):
    tokens, width = x.shape
    return tc.transpose(tc.reshape(x, (tokens, n_heads, width // n_heads)), (1, 0, 2))


def _merge_heads(x):
    n_heads, tokens, head_dim = x.shape
    return tc.reshape(tc.transpose(x, (1, 0, 2)), (tokens, n_heads * head_dim))


class _Regularizer:
    """Dropout and drop-path with the configured rates.  Without an rng
    (or under deterministic evaluation) everything passes through.

    """
    def __init__(self, config, rng):
        self.config = config
        self.rng = rng

    def attention(self, weights):
        if self.rng is None:
            return weights
        return tc.dropout(weights, self.config.attn_dropout, self.rng)

    def branch(self, x):
        if self.rng is None:
            return x
        x = tc.dropout(x, self.config.dropout, self.rng)
        return tc.drop_path(x, self.config.drop_path, self.rng)


def timestep_embedding(t, T, dim):
    """Sinusoidal embedding of the diffusion time t / T."""
    position = 1000.0 * t / T
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    return np.concatenate([np.sin(position * freqs), np.cos(position * freqs)])


def one_hot(values, n_classes):
    return np.eye(n_classes)[np.asarray(values, dtype=np.int64)]


def init_line_nodes(e_pairs, h0, lg, params, name='init_line'):
    """Initial line states from the pair embedding and both endpoint atoms.

    The two-layer map is applied to [e | h_i | h_j] and to [e | h_j | h_i]
    and the results averaged, so the state does not depend on which
    endpoint has the lower index.

    """
    e_pairs, h0 = tc.as_tensor(e_pairs), tc.as_tensor(h0)
    if e_pairs.shape[0] != lg.n_pairs or h0.shape[0] != lg.n_atoms:
        raise tc.InvalidShapeError('init_line_nodes: %s pair rows and %s atom rows for a '
                                   '%d-atom line graph' % (e_pairs.shape[0], h0.shape[0],
                                                           lg.n_atoms))
    h_i = tc.take(h0, lg.pairs[:, 0], axis=0)
    h_j = tc.take(h0, lg.pairs[:, 1], axis=0)
    forward = mlp(params, name, tc.concat([e_pairs, h_i, h_j], axis=-1))
    backward = mlp(params, name, tc.concat([e_pairs, h_j, h_i], axis=-1))
    return (forward + backward) * 0.5


def primal_layer(h, e, params, name, config, reg=None):
    """Edge-modulated multi-head self-attention over atoms.

    Every head's score q_i.k_j / sqrt(d) gets an additive bias projected
    from the pair state e_ij.  Atoms take a post-norm residual attention and
    FFN update; pair states take a residual update from the symmetrized
    per-head scores, then their own FFN.  Returns (h, e, y_P) where y_P
    projects the mean atom and pair states into the global width.

    """
    reg = reg or _Regularizer(config, None)
    n, width = h.shape
    heads = config.n_heads_primal
    q = _split_heads(linear(params, name + '.q', h), heads)
    k = _split_heads(linear(params, name + '.k', h), heads)
    v = _split_heads(linear(params, name + '.v', h), heads)
    scores = tc.matmul(q, tc.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(width // heads))
    scores = scores + tc.transpose(linear(params, name + '.edge_bias', e), (2, 0, 1))
    weights = reg.attention(tc.softmax(scores, axis=-1))
    attended = linear(params, name + '.out', _merge_heads(tc.matmul(weights, v)))
    h = tc.layer_norm(h + reg.branch(attended))
    h = tc.layer_norm(h + reg.branch(mlp(params, name + '.ffn_x', h)))

    pair_scores = tc.transpose(scores, (1, 2, 0))
    symmetric = (pair_scores + tc.transpose(pair_scores, (1, 0, 2))) * 0.5
    e = tc.layer_norm(e + reg.branch(linear(params, name + '.edge_out', symmetric)))
    e = tc.layer_norm(e + reg.branch(mlp(params, name + '.ffn_e', e)))

    pooled = tc.concat([tc.mean(h, axis=0),
                        tc.mean(tc.reshape(e, (n * n, e.shape[-1])), axis=0)], axis=-1)
    return h, e, linear(params, name + '.pool', pooled)


def line_layer(z, params, name, config, rf=None, reg=None):
    """Pre-norm self-attention and FFN over all line nodes.

    The exact kernel is used unless config asks for the linear one, which
    needs a RandomFeatureMap rf.  Returns (z, y_L); y_L projects an
    attention-pooled summary of z into the global width.

    """
    reg = reg or _Regularizer(config, None)
    heads = config.n_heads_line
    normed = tc.layer_norm(z)
    q = _split_heads(linear(params, name + '.q', normed), heads)
    k = _split_heads(linear(params, name + '.k', normed), heads)
    v = _split_heads(linear(params, name + '.v', normed), heads)
    if config.attention_kernel == 'linear':
        if rf is None:
            raise InvalidInputError('the linear kernel needs a random feature map')
        attended = fastattn.linear_attention(q, k, v, rf)
    elif reg.rng is None:
        attended = fastattn.exact_softmax_attention(q, k, v)
    else:
        attended = fastattn.exact_softmax_attention(q, k, v, config.attn_dropout, reg.rng)
    z = z + reg.branch(linear(params, name + '.out', _merge_heads(attended)))
    z = z + reg.branch(mlp(params, name + '.ffn', tc.layer_norm(z)))

    pool = tc.softmax(linear(params, name + '.pool_score', z), axis=0)
    pooled = tc.sum(pool * z, axis=0)
    return z, linear(params, name + '.pool', pooled)


def _cross_attention(queries, keys, mask, params, name, n_heads):
    """Masked multi-head attention of query rows over key rows, added back
    onto the queries.  Returns (updated queries, weights heads x Q x K).

    """
    width = params[name + '.q.weight'].shape[1]
    q = _split_heads(linear(params, name + '.q', queries), n_heads)
    k = _split_heads(linear(params, name + '.k', keys), n_heads)
    v = _split_heads(linear(params, name + '.v', keys), n_heads)
    scores = tc.matmul(q, tc.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(width // n_heads))
    weights = tc.masked_softmax(scores, mask[None, :, :], axis=-1)
    update = linear(params, name + '.out', _merge_heads(tc.matmul(weights, v)))
    return queries + update, weights


def cross_attn_atoms_from_bonds(h, z, incidence, params, name, n_heads):
    """Each atom attends over the line nodes marked in its incidence row.

    With no line nodes at all (a single atom) h comes back unchanged.

    """
    if z.shape[0] == 0:
        return h
    updated, _ = _cross_attention(h, z, np.asarray(incidence, dtype=bool), params, name, n_heads)
    return updated


def cross_attn_bonds_from_atoms(z, h, incidence, params, name, n_heads):
    """Each line node attends over the atoms marked in its incidence
    column, its two endpoints under the structural mask.

    Returns (z, weights) with weights shaped heads x M x N.

    """
    return _cross_attention(z, h, np.asarray(incidence, dtype=bool).T, params, name, n_heads)


def global_fusion(y, y_p, y_l, h, z, params, name):
    """y <- LN(y + W [y_P | y_L | mean(h) | mean(z)])."""
    joined = tc.concat([y_p, y_l, tc.mean(h, axis=0), tc.mean(z, axis=0)], axis=-1)
    return tc.layer_norm(y + linear(params, name, joined))


def film(h, z, y, params, name):
    """Feature-wise scale and shift of h (and z, if given) computed from y."""
    h = h * (1.0 + linear(params, name + '.gamma_p', y)) + linear(params, name + '.beta_p', y)
    if z is not None:
        z = z * (1.0 + linear(params, name + '.gamma_l', y)) + linear(params, name + '.beta_l', y)
    return h, z


def _sentinel(n_classes):
    row = np.full(n_classes, SENTINEL_LOGIT)
    row[0] = 0.0
    return row


def decode_edges(z, bonds_t, lg, params, name='decode'):
    """Clean-bond logits from the final line states.

    Each pair gets f_out(z) plus the one-hot of its noisy class.  Returns
    (logits, pair_logits): the symmetric N x N x classes matrix, whose
    diagonal holds a fixed "certainly no bond" row, and the M x classes
    per-pair logits in line-node order.

    """
    noisy = np.asarray(bonds_t)[lg.pairs[:, 0], lg.pairs[:, 1]]
    pair_logits = mlp(params, name, z)
    n_classes = pair_logits.shape[-1]
    pair_logits = pair_logits + one_hot(noisy, n_classes)
    rows = tc.concat([pair_logits, _sentinel(n_classes)[None, :]], axis=0)
    index = np.where(lg.pair_index < 0, lg.n_pairs, lg.pair_index).reshape(-1)
    logits = tc.reshape(tc.take(rows, index, axis=0), (lg.n_atoms, lg.n_atoms, n_classes))
    return logits, pair_logits


def forward(atom_types, bonds_t, y_cond, t, T, config, params, rng=None, feature_seed=0,
            capture_attention=False):
    """Predict clean-bond logits for a noisy graph at diffusion step t.

    atom_types are vocab indices and stay fixed; bonds_t is the noisy
    N x N class matrix; y_cond is the conditioning vector (length d_cond,
    None for none).  rng drives dropout while training; feature_seed draws
    the random feature map when the line stream uses the linear kernel.

    Returns a DenoiserOutput.  With capture_attention, its attention field
    holds the last layer's bonds-from-atoms weights, M x heads x 2, on
    (atom i, atom j) of each pair i < j.

    """
    c = config
    atom_types = np.asarray(atom_types, dtype=np.int64)
    bonds_t = np.asarray(bonds_t, dtype=np.int64)
    n = len(atom_types)
    if bonds_t.shape != (n, n):
        raise tc.InvalidShapeError('bond matrix %s for %d atoms' % (bonds_t.shape, n))
    if y_cond is None:
        y_cond = np.zeros(c.d_cond)
    y_cond = np.asarray(y_cond, dtype=np.float64)
    if y_cond.shape != (c.d_cond,):
        raise tc.InvalidShapeError('conditioning vector %s, expected (%d,)' % (y_cond.shape, c.d_cond))
    if n == 1:
        logits = tc.Tensor(_sentinel(c.n_bond_classes).reshape(1, 1, -1))
        return DenoiserOutput(logits, tc.Tensor(np.zeros((0, c.n_bond_classes))), None)

    reg = _Regularizer(c, rng)
    lg = build_line_graph(n)
    flat_pairs = lg.pairs[:, 0] * n + lg.pairs[:, 1]
    h = linear(params, 'embed.atoms', one_hot(atom_types, c.n_atom_types))
    e = linear(params, 'embed.edges', one_hot(bonds_t, c.n_bond_classes))
    y = linear(params, 'embed.global', np.concatenate([y_cond, timestep_embedding(t, T, c.d_time)]))

    def pair_states(e):
        return tc.take(tc.reshape(e, (n * n, c.d_e)), flat_pairs, axis=0)

    z = init_line_nodes(pair_states(e), h, lg, params) if c.line_stream else None
    incidence = lg.incidence if c.incidence_mask else np.ones_like(lg.incidence)
    rf = None
    if c.line_stream and c.attention_kernel == 'linear':
        rf = fastattn.make_feature_map(c.n_features, c.d_e // c.n_heads_line, feature_seed)

    attention = None
    for layer in range(c.n_layers):
        p = 'layers.%d' % layer
        h, z = film(h, z, y, params, p + '.film')
        h, e, y_p = primal_layer(h, e, params, p + '.primal', c, reg)
        if c.line_stream:
            z, y_l = line_layer(z, params, p + '.line', c, rf, reg)
        else:
            y_l = tc.Tensor(np.zeros(c.d_y))
        h_next, z_next = h, z
        if c.atoms_from_bonds:
            h_next = cross_attn_atoms_from_bonds(h, z, incidence, params, p + '.cross_atoms',
                                                 c.n_heads_cross)
        if c.bonds_from_atoms:
            z_next, weights = cross_attn_bonds_from_atoms(z, h, incidence, params,
                                                          p + '.cross_bonds', c.n_heads_cross)
            if capture_attention and layer == c.n_layers - 1:
                rows = np.arange(lg.n_pairs)
                attention = np.stack([weights.data[:, rows, lg.pairs[:, 0]],
                                      weights.data[:, rows, lg.pairs[:, 1]]], axis=-1)
                attention = attention.transpose(1, 0, 2)
        h, z = h_next, z_next
        y = global_fusion(y, y_p, y_l, h, z if c.line_stream else pair_states(e),
                          params, p + '.fuse')

    final = z if c.line_stream else pair_states(e)
    logits, pair_logits = decode_edges(final, bonds_t, lg, params)
    return DenoiserOutput(logits, pair_logits, attention)
