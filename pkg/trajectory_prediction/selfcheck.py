"""
Numerical self-checks: finite-difference gradient checks of every differentiable op and of the full model with its
loss, and a brute-force oracle for the masked scatter.
"""
from dataclasses import dataclass

import numpy as np

from trajectory_prediction.data_pipeline import NeighborHistory, TrajectorySample
from trajectory_prediction.model import ModelConfig, backward, collate, forward_batch
from trajectory_prediction.neural_core import (
    ParamStore,
    check_gradients,
    embed,
    embed_backward,
    feed_forward,
    feed_forward_backward,
    init_params,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    lstm_cell,
    lstm_cell_backward,
    lstm_encode,
    lstm_encode_backward,
    multi_head_attention,
    multi_head_attention_backward,
    transformer_encoder_layer,
    transformer_encoder_layer_backward
)
from trajectory_prediction.social_grid import masked_gather, masked_scatter
from trajectory_prediction.training import trajectory_loss, trajectory_loss_grad

GRADIENT_TOLERANCE = 1e-4

TINY_MODEL = {
    'history_steps': 3,
    'embed_dim': 4,
    'hidden_dim': 8,
    'ffn_dim': 16,
    'heads': 2,
    'decoder_hidden': 8,
    'grid_channels': 3,
    'grid_cells': 3,
}


@dataclass
class CheckResult:
    name: str
    value: float
    passed: bool


def _store(rng, **shapes):
    params = ParamStore()
    for name, shape in shapes.items():
        params.add(name.replace('__', '.'), rng.normal(scale=0.5, size=shape))
    return params


def _linear_case(rng):
    params = _store(rng, x=(4, 3), lin__W=(3, 5), lin__b=(5,))
    projection = rng.normal(size=(4, 5))

    def loss_fn(p):
        out, cache = linear(p['x'], p, 'lin')
        p.grads['x'] += linear_backward(projection, cache, p, 'lin')
        return float(np.sum(out * projection))
    return params, loss_fn


def _embed_case(rng):
    params = _store(rng, x=(2, 3, 2), embed__W=(2, 5), embed__b=(5,))
    projection = rng.normal(size=(2, 3, 5))

    def loss_fn(p):
        out, cache = embed(p['x'], p, 'embed')
        p.grads['x'] += embed_backward(projection, cache, p, 'embed')
        return float(np.sum(out * projection))
    return params, loss_fn


def _lstm_cell_case(rng):
    params = _store(rng, x=(2, 3), h=(2, 4), c=(2, 4), lstm__W=(7, 16), lstm__b=(16,))
    project_h = rng.normal(size=(2, 4))
    project_c = rng.normal(size=(2, 4))

    def loss_fn(p):
        h, c, cache = lstm_cell(p['x'], p['h'], p['c'], p, 'lstm')
        d_x, d_h, d_c = lstm_cell_backward(project_h, project_c, cache, p, 'lstm')
        p.grads['x'] += d_x
        p.grads['h'] += d_h
        p.grads['c'] += d_c
        return float(np.sum(h * project_h) + np.sum(c * project_c))
    return params, loss_fn


def _lstm_encode_case(rng):
    params = _store(rng, x=(2, 4, 3), lstm__W=(7, 16), lstm__b=(16,))
    projection = rng.normal(size=(2, 4, 4))

    def loss_fn(p):
        states, caches = lstm_encode(p['x'], p, 'lstm')
        p.grads['x'] += lstm_encode_backward(projection, caches, p, 'lstm')
        return float(np.sum(states * projection))
    return params, loss_fn


def _layer_norm_case(rng):
    params = _store(rng, x=(3, 6), norm__gamma=(6,), norm__beta=(6,))
    projection = rng.normal(size=(3, 6))

    def loss_fn(p):
        out, cache = layer_norm(p['x'], p, 'norm')
        p.grads['x'] += layer_norm_backward(projection, cache, p, 'norm')
        return float(np.sum(out * projection))
    return params, loss_fn


def _attention_case(rng):
    shapes = {'x': (2, 3, 4)}
    for projection_name in ('q', 'k', 'v', 'o'):
        shapes[f'attn__{projection_name}__W'] = (4, 4)
        shapes[f'attn__{projection_name}__b'] = (4,)
    params = _store(rng, **shapes)
    projection = rng.normal(size=(2, 3, 4))

    def loss_fn(p):
        out, cache = multi_head_attention(p['x'], p, 'attn', heads=2)
        p.grads['x'] += multi_head_attention_backward(projection, cache, p, 'attn')
        return float(np.sum(out * projection))
    return params, loss_fn


def _feed_forward_case(rng):
    params = _store(rng, x=(3, 4), ffn__hidden__W=(4, 6), ffn__hidden__b=(6,), ffn__out__W=(6, 4), ffn__out__b=(4,))
    projection = rng.normal(size=(3, 4))

    def loss_fn(p):
        out, cache = feed_forward(p['x'], p, 'ffn')
        p.grads['x'] += feed_forward_backward(projection, cache, p, 'ffn')
        return float(np.sum(out * projection))
    return params, loss_fn


def _transformer_case(rng):
    shapes = {'x': (2, 3, 4)}
    for projection_name in ('q', 'k', 'v', 'o'):
        shapes[f'layer__attn__{projection_name}__W'] = (4, 4)
        shapes[f'layer__attn__{projection_name}__b'] = (4,)
    shapes.update({
        'layer__norm1__gamma': (4,), 'layer__norm1__beta': (4,),
        'layer__ffn__hidden__W': (4, 8), 'layer__ffn__hidden__b': (8,),
        'layer__ffn__out__W': (8, 4), 'layer__ffn__out__b': (4,),
        'layer__norm2__gamma': (4,), 'layer__norm2__beta': (4,),
    })
    params = _store(rng, **shapes)
    projection = rng.normal(size=(2, 3, 4))

    def loss_fn(p):
        out, cache = transformer_encoder_layer(p['x'], p, 'layer', heads=2)
        p.grads['x'] += transformer_encoder_layer_backward(projection, cache, p, 'layer')
        return float(np.sum(out * projection))
    return params, loss_fn


def random_samples(rng, config, count):
    """
    Random samples shaped for ``config``, with 0 to 3 neighbors each outside the target's own cell.
    """
    target_cell = (config.grid_channels // 2, config.grid_cells // 2)
    cells = [
        (channel, cell)
        for channel in range(config.grid_channels)
        for cell in range(config.grid_cells)
        if (channel, cell) != target_cell
    ]
    samples = []
    for index in range(count):
        picks = sorted(rng.choice(len(cells), size=int(rng.integers(0, 4)), replace=False))
        neighbors = tuple(
            NeighborHistory(cells[i][0], cells[i][1], rng.normal(size=(config.history_steps, 2)))
            for i in picks
        )
        mask = np.zeros((config.grid_channels, config.grid_cells), dtype=np.uint8)
        for neighbor in neighbors:
            mask[neighbor.channel, neighbor.cell] = 1
        samples.append(TrajectorySample(
            target_history=rng.normal(size=(config.history_steps, 2)),
            neighbor_histories=neighbors,
            mask=mask,
            future=rng.normal(size=(config.horizon, 2)),
            vehicle_id=index + 1,
            anchor_frame=config.history_steps,
        ))
    return samples


def model_loss_case(config, seed=0, count=3):
    """
    Full model plus trajectory loss on random samples, as a check_gradients case.
    """
    rng = np.random.default_rng(seed)
    batch = collate(random_samples(rng, config, count), config)
    params = init_params(config, seed)
    for name in params:
        params.values[name] += rng.normal(scale=0.1, size=params[name].shape)

    def loss_fn(p):
        predictions, cache = forward_batch(batch, p, config)
        backward(trajectory_loss_grad(predictions, batch.future), cache, p, config)
        return trajectory_loss(predictions, batch.future)
    return params, loss_fn


OP_CASES = (
    ('linear', _linear_case),
    ('embed', _embed_case),
    ('lstm_cell', _lstm_cell_case),
    ('lstm_encode', _lstm_encode_case),
    ('layer_norm', _layer_norm_case),
    ('multi_head_attention', _attention_case),
    ('feed_forward', _feed_forward_case),
    ('transformer_encoder_layer', _transformer_case),
)


def gradient_suite(seed=0, num_coordinates=200):
    """
    Check every op and both model variants against central differences.

    Returns:
        List of CheckResult holding the max relative error of each case
    """
    cases = [(name, build(np.random.default_rng(seed))) for name, build in OP_CASES]
    for variant in ('full', 'naive_lstm'):
        config = ModelConfig(**TINY_MODEL, variant=variant)
        cases.append((f'model[{variant}] + loss', model_loss_case(config, seed)))

    results = []
    for name, (params, loss_fn) in cases:
        error = check_gradients(loss_fn, params, num_coordinates=num_coordinates, seed=seed)
        results.append(CheckResult(name=name, value=error, passed=error < GRADIENT_TOLERANCE))
    return results


def _brute_force_scatter(mask, encodings):
    social = np.zeros(mask.shape + (encodings.shape[1],))
    row = 0
    for channel in range(mask.shape[0]):
        for cell in range(mask.shape[1]):
            if mask[channel, cell]:
                social[channel, cell] = encodings[row]
                row += 1
    return social


def scatter_oracle(cases=1000, seed=0, channels=3, cells=13, dim=4):
    """
    Compare masked_scatter with a per-cell loop on random masks, and masked_gather with its inverse.

    Returns:
        CheckResult whose value is the number of failing cases
    """
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(cases):
        mask = (rng.random((channels, cells)) < rng.random()).astype(np.uint8)
        mask[channels // 2, cells // 2] = 0
        encodings = rng.normal(size=(int(mask.sum()), dim))
        social = masked_scatter(mask, encodings)
        expected = _brute_force_scatter(mask, encodings)
        if (not np.array_equal(social, expected) or np.any(social[mask == 0] != 0)
                or not np.array_equal(masked_gather(mask, social), encodings)):
            failures += 1
    return CheckResult(name=f'masked_scatter oracle ({cases} cases)', value=failures, passed=failures == 0)


def run_selfcheck(seed=0):
    """
    Run the gradient suite and the scatter oracle.
    """
    return gradient_suite(seed) + [scatter_oracle(seed=seed)]
