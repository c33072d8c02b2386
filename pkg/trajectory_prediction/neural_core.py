"""
Differentiable building blocks of the predictor, written directly against numpy.

Every forward function returns ``(output, cache)``. The matching ``*_backward`` function takes the gradient of the
output and that cache, accumulates parameter gradients into ``params.grads`` and returns the gradient of the input.
Caches are plain tuples/dicts and nothing is stored on the ParamStore during a forward pass, so forward passes over
different inputs may share one store.

Linear layers compute ``x @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``. Leading dimensions are batch
dimensions everywhere.
"""
import json
import math

import numpy as np

from trajectory_prediction.exceptions import CompatibilityError, EmptySequenceError, NumericError, ShapeError
from trajectory_prediction.helpers import write_npz

PARAMS_FORMAT_VERSION = 'trajectory-params/1'
LEAKY_SLOPE = 0.1
LAYER_NORM_EPS = 1e-5


class ParamStore:
    """
    Named parameter tensors with matching gradient accumulators.
    """

    def __init__(self):
        """
        Create an empty store.
        """
        self.values = {}
        self.grads = {}

    def add(self, name, value):
        """
        Register a parameter and a zero gradient buffer of the same shape.
        """
        if name in self.values:
            raise ShapeError(f'Parameter {name} is already registered.')
        self.values[name] = np.array(value)
        self.grads[name] = np.zeros_like(self.values[name])

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    @property
    def size(self):
        """
        Total number of scalar parameters.
        """
        return sum(value.size for value in self.values.values())

    def zero_grads(self):
        for grad in self.grads.values():
            grad.fill(0)

    def copy(self):
        """
        Deep copy of the values, with fresh zero gradients.
        """
        clone = ParamStore()
        for name, value in self.values.items():
            clone.add(name, value.copy())
        return clone

    def shapes(self):
        return {name: value.shape for name, value in self.values.items()}

    def save(self, file_path, config_hash='', metadata=None):
        """
        Write the store to an ``.npz`` container.

        Layout: ``param/<name>`` arrays, ``__names__`` (registration order), ``__version__``, ``__config_hash__`` and
        ``__metadata__`` (a JSON document). Values round-trip bit for bit.
        """
        arrays = {f'param/{name}': value for name, value in self.values.items()}
        arrays['__names__'] = np.array(list(self.values), dtype=str)
        arrays['__version__'] = np.array(PARAMS_FORMAT_VERSION)
        arrays['__config_hash__'] = np.array(config_hash)
        arrays['__metadata__'] = np.array(json.dumps(metadata or {}, sort_keys=True))
        write_npz(file_path, arrays)

    @classmethod
    def load(cls, file_path):
        """
        Read a store written by save().

        Returns:
            Tuple of (ParamStore, config hash, metadata dict)
        """
        with np.load(file_path, allow_pickle=False) as data:
            version = str(data['__version__'])
            if version != PARAMS_FORMAT_VERSION:
                raise CompatibilityError(f'{file_path} has version {version}, expected {PARAMS_FORMAT_VERSION}.')
            store = cls()
            for name in data['__names__']:
                store.add(str(name), data[f'param/{name}'])
            return store, str(data['__config_hash__']), json.loads(str(data['__metadata__']))


def _flat(array):
    return array.reshape(-1, array.shape[-1])


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def linear(x, params, prefix):
    """
    Affine map ``x @ W + b``.
    """
    weight = params[f'{prefix}.W']
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f'{prefix}: input has {x.shape[-1]} features, weight expects {weight.shape[0]}.')
    return x @ weight + params[f'{prefix}.b'], x


def linear_backward(d_out, cache, params, prefix):
    x = cache
    params.grads[f'{prefix}.W'] += _flat(x).T @ _flat(d_out)
    params.grads[f'{prefix}.b'] += _flat(d_out).sum(axis=0)
    return d_out @ params[f'{prefix}.W'].T


def embed(points, params, prefix='embed', slope=LEAKY_SLOPE):
    """
    Embed 2-D points: ``leaky_relu(points @ W + b)``.
    """
    pre_activation, linear_cache = linear(points, params, prefix)
    return leaky_relu(pre_activation, slope), (linear_cache, pre_activation)


def embed_backward(d_out, cache, params, prefix='embed', slope=LEAKY_SLOPE):
    linear_cache, pre_activation = cache
    d_pre = d_out * np.where(pre_activation > 0, 1.0, slope)
    return linear_backward(d_pre, linear_cache, params, prefix)


def lstm_cell(x, h, c, params, prefix='lstm'):
    """
    One LSTM step. ``W`` has shape ``(d_in + d_h, 4 d_h)`` with gate blocks ordered input, forget, cell, output.

    Returns:
        (h_next, c_next, cache)
    """
    weight = params[f'{prefix}.W']
    hidden = h.shape[-1]
    if c.shape != h.shape or weight.shape != (x.shape[-1] + hidden, 4 * hidden):
        raise ShapeError(
            f'{prefix}: x {x.shape}, h {h.shape} and c {c.shape} do not match weight {weight.shape}.'
        )

    xh = np.concatenate([x, h], axis=-1)
    gates = xh @ weight + params[f'{prefix}.b']
    i = sigmoid(gates[..., :hidden])
    f = sigmoid(gates[..., hidden:2 * hidden])
    g = np.tanh(gates[..., 2 * hidden:3 * hidden])
    o = sigmoid(gates[..., 3 * hidden:])

    c_next = f * c + i * g
    tanh_c = np.tanh(c_next)
    h_next = o * tanh_c
    return h_next, c_next, (xh, c, i, f, g, o, tanh_c)


def lstm_cell_backward(d_h, d_c, cache, params, prefix='lstm'):
    """
    Returns:
        (d_x, d_h_prev, d_c_prev)
    """
    xh, c, i, f, g, o, tanh_c = cache
    hidden = c.shape[-1]

    d_o = d_h * tanh_c
    d_c = d_c + d_h * o * (1.0 - tanh_c ** 2)
    d_gates = np.concatenate([
        d_c * g * i * (1.0 - i),
        d_c * c * f * (1.0 - f),
        d_c * i * (1.0 - g ** 2),
        d_o * o * (1.0 - o),
    ], axis=-1)

    params.grads[f'{prefix}.W'] += _flat(xh).T @ _flat(d_gates)
    params.grads[f'{prefix}.b'] += _flat(d_gates).sum(axis=0)
    d_xh = d_gates @ params[f'{prefix}.W'].T
    d_in = xh.shape[-1] - hidden
    return d_xh[..., :d_in], d_xh[..., d_in:], d_c * f


def lstm_encode(sequence, params, prefix='lstm'):
    """
    Run an LSTM over ``(..., T, d_in)`` from a zero state.

    Returns:
        ((..., T, d_h) hidden states, cache)
    """
    steps = sequence.shape[-2]
    if steps == 0:
        raise EmptySequenceError(f'{prefix}: cannot encode a sequence with no timesteps.')

    hidden = params[f'{prefix}.W'].shape[1] // 4
    h = np.zeros(sequence.shape[:-2] + (hidden,), dtype=sequence.dtype)
    c = np.zeros_like(h)
    states = []
    caches = []
    for t in range(steps):
        h, c, cache = lstm_cell(sequence[..., t, :], h, c, params, prefix)
        states.append(h)
        caches.append(cache)
    return np.stack(states, axis=-2), caches


def lstm_encode_backward(d_states, caches, params, prefix='lstm'):
    d_h = np.zeros_like(d_states[..., 0, :])
    d_c = np.zeros_like(d_h)
    d_inputs = [None] * len(caches)
    for t in reversed(range(len(caches))):
        d_inputs[t], d_h, d_c = lstm_cell_backward(d_states[..., t, :] + d_h, d_c, caches[t], params, prefix)
    return np.stack(d_inputs, axis=-2)


def softmax(scores):
    """
    Row-wise softmax over the last axis with max subtraction.

    Raises:
        NumericError on non-finite scores
    """
    if not np.all(np.isfinite(scores)):
        raise NumericError('Attention scores contain non-finite values.')
    shifted = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def _split_heads(x, heads):
    return np.swapaxes(x.reshape(x.shape[:-1] + (heads, x.shape[-1] // heads)), -2, -3)


def _merge_heads(x):
    merged = np.swapaxes(x, -2, -3)
    return merged.reshape(merged.shape[:-2] + (-1,))


def multi_head_attention(H, params, prefix='attn', heads=8):
    """
    Scaled dot-product self-attention over the T rows of ``(..., T, D)``.

    Returns:
        ((..., T, D) output, cache); ``cache['weights']`` holds the (..., heads, T, T) attention weights
    """
    width = H.shape[-1]
    if width % heads:
        raise ShapeError(f'{prefix}: model width {width} is not divisible by {heads} heads.')
    scale = 1.0 / math.sqrt(width // heads)

    q, _ = linear(H, params, f'{prefix}.q')
    k, _ = linear(H, params, f'{prefix}.k')
    v, _ = linear(H, params, f'{prefix}.v')
    q, k, v = (_split_heads(a, heads) for a in (q, k, v))

    weights = softmax(q @ np.swapaxes(k, -1, -2) * scale)
    merged = _merge_heads(weights @ v)
    out, _ = linear(merged, params, f'{prefix}.o')
    return out, {'H': H, 'q': q, 'k': k, 'v': v, 'weights': weights, 'merged': merged, 'scale': scale}


def multi_head_attention_backward(d_out, cache, params, prefix='attn'):
    q, k, v, weights = cache['q'], cache['k'], cache['v'], cache['weights']
    heads = q.shape[-3]

    d_context = _split_heads(linear_backward(d_out, cache['merged'], params, f'{prefix}.o'), heads)
    d_weights = d_context @ np.swapaxes(v, -1, -2)
    d_v = np.swapaxes(weights, -1, -2) @ d_context
    d_scores = weights * (d_weights - (d_weights * weights).sum(axis=-1, keepdims=True)) * cache['scale']
    d_q = d_scores @ k
    d_k = np.swapaxes(d_scores, -1, -2) @ q

    d_H = linear_backward(_merge_heads(d_q), cache['H'], params, f'{prefix}.q')
    d_H += linear_backward(_merge_heads(d_k), cache['H'], params, f'{prefix}.k')
    d_H += linear_backward(_merge_heads(d_v), cache['H'], params, f'{prefix}.v')
    return d_H


def layer_norm(x, params, prefix='norm', eps=LAYER_NORM_EPS):
    """
    Normalize the last axis to zero mean and unit variance, then apply ``gamma`` and ``beta``.
    """
    mean = x.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    normalized = (x - mean) * inv_std
    return normalized * params[f'{prefix}.gamma'] + params[f'{prefix}.beta'], (normalized, inv_std)


def layer_norm_backward(d_out, cache, params, prefix='norm'):
    normalized, inv_std = cache
    params.grads[f'{prefix}.gamma'] += _flat(d_out * normalized).sum(axis=0)
    params.grads[f'{prefix}.beta'] += _flat(d_out).sum(axis=0)

    d_norm = d_out * params[f'{prefix}.gamma']
    width = normalized.shape[-1]
    return inv_std / width * (
        width * d_norm
        - d_norm.sum(axis=-1, keepdims=True)
        - normalized * (d_norm * normalized).sum(axis=-1, keepdims=True)
    )


def feed_forward(x, params, prefix='ffn'):
    """
    Position-wise ``Linear -> ReLU -> Linear``.
    """
    pre_activation, hidden_cache = linear(x, params, f'{prefix}.hidden')
    activation = np.maximum(pre_activation, 0.0)
    out, out_cache = linear(activation, params, f'{prefix}.out')
    return out, (hidden_cache, pre_activation, out_cache)


def feed_forward_backward(d_out, cache, params, prefix='ffn'):
    hidden_cache, pre_activation, out_cache = cache
    d_activation = linear_backward(d_out, out_cache, params, f'{prefix}.out')
    return linear_backward(d_activation * (pre_activation > 0), hidden_cache, params, f'{prefix}.hidden')


def transformer_encoder_layer(H, params, prefix='transformer', heads=8):
    """
    Post-norm encoder layer: ``U = LN(H + MHA(H))``, ``Z = LN(U + FFN(U))``. No dropout, no positional encoding.
    """
    attended, attention_cache = multi_head_attention(H, params, f'{prefix}.attn', heads)
    U, norm1_cache = layer_norm(H + attended, params, f'{prefix}.norm1')
    fed, ffn_cache = feed_forward(U, params, f'{prefix}.ffn')
    Z, norm2_cache = layer_norm(U + fed, params, f'{prefix}.norm2')
    return Z, (attention_cache, norm1_cache, ffn_cache, norm2_cache)


def transformer_encoder_layer_backward(d_Z, cache, params, prefix='transformer'):
    attention_cache, norm1_cache, ffn_cache, norm2_cache = cache
    d_sum2 = layer_norm_backward(d_Z, norm2_cache, params, f'{prefix}.norm2')
    d_U = d_sum2 + feed_forward_backward(d_sum2, ffn_cache, params, f'{prefix}.ffn')
    d_sum1 = layer_norm_backward(d_U, norm1_cache, params, f'{prefix}.norm1')
    return d_sum1 + multi_head_attention_backward(d_sum1, attention_cache, params, f'{prefix}.attn')


def _stack_layout(prefix, config):
    embed_dim, hidden, ffn = config.embed_dim, config.hidden_dim, config.ffn_dim
    layout = [
        (f'{prefix}.embed.W', (2, embed_dim), 'weight'),
        (f'{prefix}.embed.b', (embed_dim,), 'bias'),
        (f'{prefix}.lstm.W', (embed_dim + hidden, 4 * hidden), 'weight'),
        (f'{prefix}.lstm.b', (4 * hidden,), 'lstm_bias'),
    ]
    for projection in ('q', 'k', 'v', 'o'):
        layout.append((f'{prefix}.transformer.attn.{projection}.W', (hidden, hidden), 'weight'))
        layout.append((f'{prefix}.transformer.attn.{projection}.b', (hidden,), 'bias'))
    layout += [
        (f'{prefix}.transformer.norm1.gamma', (hidden,), 'gain'),
        (f'{prefix}.transformer.norm1.beta', (hidden,), 'bias'),
        (f'{prefix}.transformer.ffn.hidden.W', (hidden, ffn), 'weight'),
        (f'{prefix}.transformer.ffn.hidden.b', (ffn,), 'bias'),
        (f'{prefix}.transformer.ffn.out.W', (ffn, hidden), 'weight'),
        (f'{prefix}.transformer.ffn.out.b', (hidden,), 'bias'),
        (f'{prefix}.transformer.norm2.gamma', (hidden,), 'gain'),
        (f'{prefix}.transformer.norm2.beta', (hidden,), 'bias'),
    ]
    return layout


def param_layout(config):
    """
    List ``(name, shape, kind)`` of every parameter of the model described by ``config`` (a ModelConfig).

    The neighbor stack only exists for the full variant.
    """
    layout = _stack_layout('target', config)
    if config.variant == 'full':
        layout += _stack_layout('neighbor', config)
    decoder = config.decoder_hidden
    layout += [
        ('decoder.lstm.W', (config.combined_dim + decoder, 4 * decoder), 'weight'),
        ('decoder.lstm.b', (4 * decoder,), 'lstm_bias'),
        ('decoder.head.W', (decoder, 2), 'weight'),
        ('decoder.head.b', (2,), 'bias'),
    ]
    return layout


def init_params(config, seed, dtype=np.float64):
    """
    Seeded initialization: uniform Glorot weights, zero biases, unit norm gains, LSTM forget-gate bias 1.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name, shape, kind in param_layout(config):
        if kind == 'weight':
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-limit, limit, size=shape)
        elif kind == 'gain':
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
            if kind == 'lstm_bias':
                hidden = shape[0] // 4
                value[hidden:2 * hidden] = 1.0
        store.add(name, value.astype(dtype))
    return store


def check_gradients(loss_fn, params, epsilon=1e-5, num_coordinates=200, seed=0, noise_floor=1e-8):
    """
    Compare reverse-mode gradients with central differences.

    Args:
        loss_fn: callable(params) -> scalar loss that also accumulates its gradient into ``params.grads``
        params: ParamStore in double precision
        epsilon: finite-difference step
        num_coordinates: coordinates to sample; every coordinate is checked when there are fewer
        seed: seed of the coordinate sample
        noise_floor: coordinates whose analytic and numeric gradients are both below this are counted as exact;
            a structurally zero gradient (a shift every softmax row ignores) only yields round-off from the
            central difference

    Returns:
        Maximum relative error ``|a - n| / max(1e-8, |a| + |n|)`` over the checked coordinates
    """
    params.zero_grads()
    loss_fn(params)
    analytic = {name: grad.copy() for name, grad in params.grads.items()}
    for name, grad in analytic.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f'Gradient of {name} contains non-finite values.')

    coordinates = [(name, index) for name in params for index in range(params[name].size)]
    if len(coordinates) > num_coordinates:
        picks = np.random.default_rng(seed).choice(len(coordinates), size=num_coordinates, replace=False)
        coordinates = [coordinates[i] for i in sorted(picks)]

    worst = 0.0
    for name, index in coordinates:
        value = params[name]
        original = value.flat[index]
        value.flat[index] = original + epsilon
        loss_plus = loss_fn(params)
        value.flat[index] = original - epsilon
        loss_minus = loss_fn(params)
        value.flat[index] = original

        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        exact = analytic[name].reshape(-1)[index]
        if max(abs(exact), abs(numeric)) < noise_floor:
            continue
        worst = max(worst, abs(exact - numeric) / max(1e-8, abs(exact) + abs(numeric)))

    params.zero_grads()
    return worst
