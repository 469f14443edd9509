import numpy as np
import pytest

import oracles
from codectok import nn
from codectok.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

def test_linear_identity_weights_pass_through():
    rng = rng_for(0)
    lin = nn.Linear(rng, 3, 3, "lin")
    lin.weight.data = np.eye(3)
    lin.bias.data = np.zeros(3)
    x = rng.normal(size=(4, 3))
    assert np.allclose(lin(nn.Tensor(x)).data, x)


def test_linear_hand_case():
    rng = rng_for(0)
    lin = nn.Linear(rng, 2, 2, "lin")
    lin.weight.data = np.array([[1.0, 0.0], [0.0, 1.0]])
    lin.bias.data = np.array([1.0, 1.0])
    out = lin(nn.Tensor(np.array([[1.0, 2.0]])))
    assert np.array_equal(out.data, np.array([[2.0, 3.0]]))


@pytest.mark.parametrize("seed", range(10))
def test_linear_gradients_match_finite_differences(seed):
    rng = rng_for(seed)
    lin = nn.Linear(rng, 5, 3, "lin")
    x = nn.Tensor(rng.normal(size=(4, 5)))
    err = oracles.fd_gradient_check(
        lambda: nn.sum_all(nn.tanh(lin(x))), lin.parameters()
    )
    assert err <= 1e-6


def test_linear_input_gradient():
    rng = rng_for(3)
    lin = nn.Linear(rng, 4, 4, "lin")
    x = nn.Parameter(rng.normal(size=(3, 4)), "x")
    err = oracles.fd_gradient_check(lambda: nn.sum_all(nn.gelu(lin(x))), [x])
    assert err <= 1e-6


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def test_attention_single_token_reduces_to_projections():
    rng = rng_for(1)
    att = nn.MultiHeadAttention(rng, 8, 2, "att")
    x = rng.normal(size=(1, 8))
    out = att(nn.Tensor(x))
    direct = (x @ att.v.weight.data + att.v.bias.data) @ att.out.weight.data \
        + att.out.bias.data
    assert np.allclose(out.data, direct, atol=1e-12)


def test_attention_is_permutation_equivariant():
    rng = rng_for(2)
    att = nn.MultiHeadAttention(rng, 8, 4, "att")
    x = rng.normal(size=(5, 8))
    perm = rng.permutation(5)
    out = att(nn.Tensor(x)).data
    out_perm = att(nn.Tensor(x[perm])).data
    assert np.allclose(out[perm], out_perm, atol=1e-12)


def test_attention_rejects_indivisible_heads():
    with pytest.raises(ValueError, match="divisible"):
        nn.MultiHeadAttention(rng_for(0), 8, 3, "att")


@pytest.mark.parametrize("seed", range(10))
def test_attention_gradients(seed):
    rng = rng_for(seed)
    att = nn.MultiHeadAttention(rng, 8, 2, "att")
    x = nn.Tensor(rng.normal(size=(4, 8)))
    err = oracles.fd_gradient_check(
        lambda: nn.sum_all(nn.tanh(att(x))), att.parameters()
    )
    assert err <= 1e-5


# ---------------------------------------------------------------------------
# prenorm block
# ---------------------------------------------------------------------------

def test_prenorm_zeroed_projections_is_identity():
    rng = rng_for(4)
    stack = nn.TransformerStack(rng, 8, 2, 2, "stack")
    stack.zero_output_projections()
    x = rng.normal(size=(5, 8))
    assert np.array_equal(stack(nn.Tensor(x)).data, x)


def test_prenorm_shift_invariance_of_update():
    rng = rng_for(5)
    block = nn.PreNormBlock(rng, 8, 2, "blk")
    x = rng.normal(size=(3, 8))
    update = block(nn.Tensor(x)).data - x
    shifted = x + 2.5
    update_shifted = block(nn.Tensor(shifted)).data - shifted
    assert np.allclose(update, update_shifted, atol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_prenorm_gradients(seed):
    rng = rng_for(seed)
    block = nn.PreNormBlock(rng, 8, 2, "blk")
    x = nn.Tensor(rng.normal(size=(3, 8)))
    err = oracles.fd_gradient_check(
        lambda: nn.sum_all(nn.tanh(block(x))), block.parameters(), max_coords=6,
        rng=rng_for(seed + 100),
    )
    assert err <= 1e-5


def test_layer_norm_gradients():
    rng = rng_for(6)
    ln = nn.LayerNorm(8, "ln")
    x = nn.Parameter(rng.normal(size=(4, 8)), "x")
    err = oracles.fd_gradient_check(
        lambda: nn.sum_all(nn.mul(ln(x), nn.tanh(x))), ln.parameters() + [x]
    )
    assert err <= 1e-5


# ---------------------------------------------------------------------------
# conv
# ---------------------------------------------------------------------------

def test_conv_delta_kernel_downsamples():
    rng = rng_for(7)
    conv = nn.Conv2dStride2(rng, 1, 1, "conv")
    kernel = np.zeros((3, 3, 1, 1))
    kernel[1, 1, 0, 0] = 1.0  # pick the window center: output = x[::2, ::2]
    conv.kernel.data = kernel
    conv.bias.data = np.zeros(1)
    x = rng.normal(size=(8, 8, 1))
    out = conv(nn.Tensor(x))
    assert np.allclose(out.data, x[::2, ::2])


def test_conv_all_ones_hand_case():
    rng = rng_for(8)
    conv = nn.Conv2dStride2(rng, 1, 1, "conv")
    conv.kernel.data = np.ones((3, 3, 1, 1))
    conv.bias.data = np.zeros(1)
    out = conv(nn.Tensor(np.ones((4, 4, 1))))
    # padded corners see 4 ones, edges 6, interior 9
    assert np.array_equal(out.data[:, :, 0], np.array([[4.0, 6.0], [6.0, 9.0]]))


def test_conv_rejects_odd_dims():
    conv = nn.Conv2dStride2(rng_for(0), 1, 1, "conv")
    with pytest.raises(ValueError, match="even"):
        conv(nn.Tensor(np.zeros((5, 4, 1))))


@pytest.mark.parametrize("seed", range(10))
def test_conv_gradients(seed):
    rng = rng_for(seed)
    conv = nn.Conv2dStride2(rng, 2, 3, "conv")
    x = nn.Parameter(rng.normal(size=(6, 6, 2)), "x")
    err = oracles.fd_gradient_check(
        lambda: nn.sum_all(nn.tanh(conv(x))), conv.parameters() + [x]
    )
    assert err <= 1e-5


# ---------------------------------------------------------------------------
# engine behaviour
# ---------------------------------------------------------------------------

def test_forward_is_bitwise_deterministic():
    def run():
        rng = rng_for(9)
        block = nn.PreNormBlock(rng, 16, 4, "blk")
        x = nn.Tensor(rng.normal(size=(6, 16)))
        return block(x).data

    a, b = run(), run()
    assert np.array_equal(a, b)


def test_non_finite_inputs_raise():
    x = nn.Tensor(np.array([1.0, 2.0]))
    with pytest.raises(nn.NonFiniteError):
        nn.mul(x, np.array([np.inf, 1.0]))


def test_backward_requires_scalar():
    x = nn.Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        x.backward()


def test_gradient_accumulates_across_reuse():
    p = nn.Parameter(np.array([2.0]), "p")
    loss = nn.sum_all(nn.mul(p, p))  # d(p^2)/dp = 2p
    loss.backward()
    assert np.allclose(p.grad, [4.0])


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params_unchanged():
    p = nn.Parameter(np.array([1.0, -2.0]), "p")
    opt = nn.AdamW([p], lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    p = nn.Parameter(np.array([0.0]), "p")
    opt = nn.AdamW([p], lr=0.01)
    p.grad = np.array([1.0])
    opt.step()
    assert abs(p.data[0] + 0.01) < 1e-8  # bias-corrected unit update


def test_adam_descends_convex_quadratic():
    p = nn.Parameter(np.array([5.0]), "p")
    opt = nn.AdamW([p], lr=0.05)
    losses = []
    for _ in range(100):
        loss = nn.sum_all(nn.mul(p, p))
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_adamw_weight_decay_shrinks_weights():
    p = nn.Parameter(np.array([1.0]), "p")
    opt = nn.AdamW([p], lr=0.1, weight_decay=0.5)
    p.grad = np.zeros(1)
    opt.step()
    assert p.data[0] == pytest.approx(0.95)


def test_cosine_warmup_schedule_shape():
    lrs = [nn.cosine_warmup_lr(s, 1.0, warmup_steps=10, total_steps=100) for s in range(1, 101)]
    assert lrs[0] == pytest.approx(0.1)
    assert lrs[9] == pytest.approx(1.0)
    assert all(b <= a + 1e-12 for a, b in zip(lrs[9:], lrs[10:]))  # decays after warmup
    assert lrs[-1] == pytest.approx(0.0, abs=1e-9)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = rng_for(10)
    state = {
        "a.weight": rng.normal(size=(3, 4)),
        "b.bias": rng.normal(size=(7,)),
        "scalar": np.array(3.25),
    }
    path = str(tmp_path / "model.cpnn")
    save_checkpoint(state, path)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(state)
    for k in state:
        assert np.array_equal(loaded[k], state[k])
        assert loaded[k].dtype == np.float64


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.cpnn"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="not a CPNN"):
        load_checkpoint(str(path))


def test_checkpoint_rejects_truncation(tmp_path):
    path = str(tmp_path / "model.cpnn")
    save_checkpoint({"w": np.ones((4, 4))}, path)
    blob = open(path, "rb").read()
    trunc = tmp_path / "trunc.cpnn"
    trunc.write_bytes(blob[:-9])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(str(trunc))


def test_checkpoint_bytes_are_little_endian(tmp_path):
    import struct

    path = str(tmp_path / "one.cpnn")
    save_checkpoint({"x": np.array([1.5])}, path)
    blob = open(path, "rb").read()
    expected = b"CPNN" + struct.pack("<H", 1) + struct.pack("<H", 1) + b"x" \
        + struct.pack("<B", 1) + struct.pack("<I", 1) + struct.pack("<d", 1.5)
    assert blob == expected
