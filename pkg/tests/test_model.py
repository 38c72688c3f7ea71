import pytest
import torch
from torch import nn

from reactgen.errors import CheckpointError, ConfigError, LabelOutOfRange, ShapeMismatch
from reactgen.model import (
    NULL_LABEL,
    DenoiserConfig,
    ReactionDenoiser,
    build_offline_encoder,
    directional_mask,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
    sinusoidal_encoding,
)
from reactgen.rotations import default_skeleton

D = 39  # desk5 skeleton feature width


def small(mode="online", **kw):
    torch.manual_seed(0)
    cfg = DenoiserConfig(feature_dim=D, d=32, layers=2, heads=4, ffn_width=64, mode=mode, **kw)
    return ReactionDenoiser(cfg).eval()


def inputs(n=10, b=1, seed=1):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(b, n, D, generator=g), torch.randn(b, n, D, generator=g)


# --- mask ------------------------------------------------------------------

def test_mask_examples():
    assert directional_mask(3, "online").int().tolist() == [[1, 0, 0], [1, 1, 0], [1, 1, 1]]
    assert directional_mask(3, "offline").all()
    for mode in ("online", "offline"):
        assert directional_mask(1, mode).tolist() == [[True]]


@pytest.mark.parametrize("n", [1, 2, 7, 33])
def test_mask_rule_and_idempotence(n):
    m = directional_mask(n, "online")
    for i in range(n):
        for j in range(n):
            assert bool(m[i, j]) == (j <= i)
    assert torch.equal(m & m, m)


def test_mask_rejects_empty():
    with pytest.raises(ConfigError):
        directional_mask(0, "online")


# --- tokens and condition --------------------------------------------------

def test_single_frame_token_shape():
    m = small()
    x, y = inputs(n=1)
    assert m.build_tokens(x, y).shape == (1, 1, 32)


def test_zero_projections_leave_positional_encoding():
    m = small()
    with torch.no_grad():
        for lin in (m.in_x, m.in_y, m.fuse):
            lin.weight.zero_()
            lin.bias.zero_()
    x, y = inputs(n=6)
    want = sinusoidal_encoding(torch.arange(6), 32).float()
    assert torch.equal(m.build_tokens(x, y)[0], want)


def test_swapping_actor_frames_is_local_before_attention():
    m = small()
    x, y = inputs(n=8)
    y2 = y.clone()
    y2[0, [2, 5]] = y[0, [5, 2]]
    diff = (m.build_tokens(x, y) - m.build_tokens(x, y2)).abs().amax(-1)[0]
    assert diff[2] > 0 and diff[5] > 0
    assert diff[[0, 1, 3, 4, 6, 7]].max() == 0


def test_token_shape_mismatch():
    m = small()
    with pytest.raises(ShapeMismatch):
        m.build_tokens(torch.zeros(1, 4, D), torch.zeros(1, 5, D))
    with pytest.raises(ShapeMismatch):
        m.build_tokens(torch.zeros(1, 4, D + 1), torch.zeros(1, 4, D + 1))


def test_cond_token_unconstrained_is_time_only():
    m = small()
    t = torch.tensor([0])
    want = m.time_mlp(sinusoidal_encoding(t, 32).float())
    assert torch.equal(m.cond_token(t), want)
    assert torch.equal(m.cond_token(t, torch.tensor([2])), want)  # label ignored


def test_cond_token_labels():
    m = small(constrained=True, num_classes=4)
    t = torch.tensor([5, 5])
    z = m.cond_token(t, torch.tensor([0, 1]))
    assert not torch.allclose(z[0], z[1])
    base = m.time_mlp(sinusoidal_encoding(t[:1], 32).float())
    null = m.cond_token(t[:1], torch.tensor([NULL_LABEL]))
    assert torch.allclose(null, base + m.label_embed.weight[4])
    assert torch.equal(m.cond_token(t[:1]), null)  # missing label means dropped label


@pytest.mark.parametrize("bad", [4, -2, 100])
def test_label_out_of_range(bad):
    m = small(constrained=True, num_classes=4)
    with pytest.raises(LabelOutOfRange):
        m.cond_token(torch.tensor([1]), torch.tensor([bad]))


# --- denoise ---------------------------------------------------------------

@pytest.mark.parametrize("mode", ["online", "offline"])
def test_output_shape(mode):
    m = small(mode)
    x, y = inputs(n=12, b=3)
    assert m(x, y, torch.tensor([0, 5, 9])).shape == (3, 12, D)
    assert m(x[0], y[0], 3).shape == (12, D)


def perturb_future(x, y, i, seed=7):
    g = torch.Generator().manual_seed(seed)
    x2, y2 = x.clone(), y.clone()
    x2[:, i + 1:] = torch.randn(x2[:, i + 1:].shape, generator=g) * 5
    y2[:, i + 1:] = 0
    return x2, y2


@pytest.mark.parametrize("i", [0, 3, 10, 18])
def test_online_model_is_causal(i):
    m = small("online", constrained=True, num_classes=3)
    x, y = inputs(n=20, b=2)
    t, a = torch.tensor([3, 400]), torch.tensor([1, NULL_LABEL])
    with torch.no_grad():
        base = m(x, y, t, a)
        x2, y2 = perturb_future(x, y, i)
        out = m(x2, y2, t, a)
    assert (out[:, : i + 1] - base[:, : i + 1]).abs().max() < 1e-6
    assert (out[:, i + 1:] - base[:, i + 1:]).abs().max() > 1e-3


@pytest.mark.parametrize("build", ["decoder", "encoder"])
def test_offline_model_sees_the_future(build):
    m = small("offline") if build == "decoder" else build_offline_encoder(small("offline").cfg).eval()
    x, y = inputs(n=20)
    with torch.no_grad():
        base = m(x, y, 10)
        x2, y2 = perturb_future(x, y, 5)
        out = m(x2, y2, 10)
    assert (out[:, :6] - base[:, :6]).abs().max() > 1e-3


def test_offline_encoder_layout():
    cfg = DenoiserConfig(feature_dim=D, d=32, layers=8, heads=4, ffn_width=64, mode="offline")
    enc = build_offline_encoder(cfg)
    assert isinstance(enc.backbone, nn.TransformerEncoder)
    assert len(enc.backbone.layers) == 8
    seen = []
    hook = enc.backbone.layers[0].register_forward_pre_hook(lambda mod, args: seen.append(args[0].shape[1]))
    enc(torch.zeros(1, 5, D), torch.zeros(1, 5, D), 0)
    hook.remove()
    assert seen == [6]
    with pytest.raises(ConfigError):
        build_offline_encoder(DenoiserConfig(feature_dim=D, d=32, heads=4))


def test_determinism():
    m = small()
    x, y = inputs(n=9)
    with torch.no_grad():
        assert torch.equal(m(x, y, 4), m(x, y, 4))


# --- config and parameter count -------------------------------------------

def test_config_invariants():
    with pytest.raises(ConfigError):
        DenoiserConfig(feature_dim=D, d=30, heads=8).validate()
    with pytest.raises(ConfigError):
        DenoiserConfig(feature_dim=D, layers=0).validate()
    with pytest.raises(ConfigError):
        DenoiserConfig(feature_dim=D, constrained=True).validate()
    with pytest.raises(ConfigError):
        DenoiserConfig(feature_dim=D, mode="sideways").validate()


def n_params(m):
    return sum(p.numel() for p in m.parameters())


@pytest.mark.parametrize("kw", [
    dict(),
    dict(mode="offline"),
    dict(mode="offline", arch="encoder"),
    dict(constrained=True, num_classes=5),
    dict(layers=3, ffn_width=48),
])
def test_parameter_count_matches_module(kw):
    base = dict(feature_dim=D, d=32, layers=2, heads=4, ffn_width=64)
    cfg = DenoiserConfig(**{**base, **kw})
    assert parameter_count(cfg) == n_params(ReactionDenoiser(cfg))


def test_golden_parameter_count():
    # d=512, 8 decoder layers, 8 heads, ffn 1024, D=333 (K=54), unconstrained
    cfg = DenoiserConfig(feature_dim=333, d=512, layers=8, heads=8, ffn_width=1024)
    d, f, D_ = 512, 1024, 333
    per_layer = 2 * (4 * d * d + 4 * d) + (2 * d * f + f + d) + 6 * d
    hand = 2 * (D_ * d + d) + (2 * d * d + d) + 2 * (d * d + d) + 8 * per_layer + 2 * d + (d * D_ + D_)
    assert hand == 26_799_437
    assert parameter_count(cfg) == 26_799_437
    assert n_params(ReactionDenoiser(cfg)) == 26_799_437


# --- checkpoints -----------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    m = small(constrained=True, num_classes=3)
    save_checkpoint(tmp_path / "m.pt", m, 1000, default_skeleton(), {"step": 7})
    back, T, skel, extra = load_checkpoint(tmp_path / "m.pt")
    assert T == 1000 and skel == default_skeleton() and extra == {"step": 7}
    assert back.cfg == m.cfg
    x, y = inputs(n=5)
    with torch.no_grad():
        assert torch.equal(back(x, y, 3, torch.tensor([1])), m(x, y, 3, torch.tensor([1])))


def test_checkpoint_rejects_mismatch(tmp_path):
    m = small()
    save_checkpoint(tmp_path / "m.pt", m, 1000, default_skeleton())
    blob = torch.load(tmp_path / "m.pt", weights_only=True)
    blob["config"]["d"] = 64
    torch.save(blob, tmp_path / "bad.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.pt")
    (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.pt")
