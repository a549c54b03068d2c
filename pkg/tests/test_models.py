"""Autoencoders: loss formula, shapes, determinism, training, checkpoints."""

import numpy as np
import pytest
import torch

from beetsense.errors import (
    DivergedLoss,
    EmptyStore,
    InvalidSpec,
    ShapeMismatch,
    VariantMismatch,
)
from beetsense.models import (
    AutoencoderSpec,
    TrainConfig,
    build,
    encode_batch,
    load_features,
    load_model,
    mse_loss,
    save_features,
    save_model,
    train,
)
from beetsense.models import _to_model_layout


def make_records(n=24, c=2, seed=0, constant=None):
    rng = np.random.default_rng(seed)
    if constant is None:
        tensors = rng.uniform(0, 1, size=(n, 7, c, 4, 4)).astype(np.float32)
    else:
        tensors = np.full((n, 7, c, 4, 4), constant, dtype=np.float32)
    dates = np.tile(np.array([160, 175, 190, 200, 215, 230, 250]), (n, 1))
    index = {
        "records": [
            {"field_id": i // 4 + 1, "grid_row": i % 4, "grid_col": 0, "dates": dates[i].tolist()}
            for i in range(n)
        ]
    }
    return tensors, dates, index


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def test_mse_loss_hand_values():
    assert mse_loss(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]])) == 5.0
    x = np.array([[1.0, 2.0], [1.0, 1.0]])       # norms^2: 5 and 3 vs targets
    x_hat = np.array([[0.0, 0.0], [0.0, np.sqrt(2.0) + 1.0]])
    assert abs(mse_loss(x, x_hat) - 4.0) <= 1e-12
    x = np.random.default_rng(0).normal(size=(5, 3, 2))
    assert mse_loss(x, x.copy()) == 0.0


def test_mse_loss_brute_force_oracle():
    rng = np.random.default_rng(1)
    for trial in range(50):
        n = int(rng.integers(1, 6))
        shape = (n,) + tuple(rng.integers(1, 4, size=int(rng.integers(1, 4))))
        x = rng.normal(size=shape)
        y = rng.normal(size=shape)
        oracle = np.mean([np.sum((x[i] - y[i]) ** 2) for i in range(n)])
        assert abs(mse_loss(x, y) - oracle) <= 1e-7
        got = mse_loss(torch.from_numpy(x), torch.from_numpy(y))
        assert abs(got.item() - oracle) <= 1e-7


def test_mse_loss_shape_guards():
    with pytest.raises(ShapeMismatch):
        mse_loss(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ShapeMismatch):
        mse_loss(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(ShapeMismatch):
        mse_loss(torch.zeros(2, 3), torch.zeros(3, 2))


def test_loss_nonnegative_zero_iff_equal():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 6))
    y = x + rng.normal(scale=1e-3, size=(4, 6))
    assert mse_loss(x, y) > 0.0
    assert mse_loss(x, x) == 0.0


# ---------------------------------------------------------------------------
# Architecture
# ---------------------------------------------------------------------------

def test_ae3d_shapes():
    model = build(AutoencoderSpec(kind="ae3d", in_channels=10), seed=0)
    x = torch.randn(3, 7, 10, 4, 4)
    xm = _to_model_layout(x, "ae3d")
    assert xm.shape == (3, 10, 7, 4, 4)
    z = model.encode(xm)
    assert z.shape == (3, 64)
    out = model(xm)
    assert out.shape == xm.shape
    # flattened encoder body is 64 * 7 * 4 * 4 = 7168
    assert model.fc_enc.in_features == 7168


def test_ae2d_shapes():
    model = build(AutoencoderSpec(kind="ae2d", in_channels=70), seed=0)
    x = torch.randn(3, 7, 10, 4, 4)
    xm = _to_model_layout(x, "ae2d")
    assert xm.shape == (3, 70, 4, 4)
    assert model.encode(xm).shape == (3, 64)
    assert model(xm).shape == xm.shape


def test_build_seed_determinism():
    a = build(AutoencoderSpec(kind="ae3d", in_channels=4), seed=5)
    b = build(AutoencoderSpec(kind="ae3d", in_channels=4), seed=5)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    c = build(AutoencoderSpec(kind="ae3d", in_channels=4), seed=6)
    assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))


def test_invalid_specs():
    for spec in (
        AutoencoderSpec(kind="ae4d", in_channels=4),
        AutoencoderSpec(kind="ae3d", in_channels=0),
        AutoencoderSpec(kind="ae3d", in_channels=4, conv_widths=[]),
        AutoencoderSpec(kind="ae3d", in_channels=4, conv_widths=[8, -1]),
        AutoencoderSpec(kind="ae3d", in_channels=4, latent_dim=0),
    ):
        with pytest.raises(InvalidSpec):
            build(spec, seed=0)


def loss_and_signs(model, x, target):
    """Loss plus the sign pattern of every intermediate activation.

    Central differences are only valid if both evaluations stay inside the
    same linear region of the ReLU network, so the caller compares sign
    patterns and skips parameters whose perturbation crosses a kink.
    """
    signs = []
    hooks = [
        m.register_forward_hook(lambda _m, _i, out: signs.append(out.detach() > 0))
        for m in model.modules()
        if isinstance(m, (torch.nn.Conv3d, torch.nn.ConvTranspose3d, torch.nn.Linear))
    ]
    try:
        loss = mse_loss(target, model(x)).item()
    finally:
        for h in hooks:
            h.remove()
    return loss, signs


def test_gradient_matches_finite_differences():
    # miniature AE3D in double precision; central differences, step 1e-4
    torch.manual_seed(0)
    model = build(AutoencoderSpec(kind="ae3d", in_channels=2, conv_widths=[3, 4],
                                  latent_dim=5), seed=0).double()
    x = torch.randn(4, 2, 7, 4, 4, dtype=torch.float64)
    target = torch.randn(4, 2, 7, 4, 4, dtype=torch.float64)

    model.zero_grad()
    mse_loss(target, model(x)).backward()

    rng = np.random.default_rng(3)
    params = [p for p in model.parameters()]
    checked = 0
    attempts = 0
    step = 1e-4
    while checked < 10:
        attempts += 1
        assert attempts < 200, "too many kink-crossing parameters"
        p = params[int(rng.integers(len(params)))]
        flat = p.data.view(-1)
        idx = int(rng.integers(flat.numel()))
        original = flat[idx].item()
        with torch.no_grad():
            flat[idx] = original + step
            loss_plus, signs_plus = loss_and_signs(model, x, target)
            flat[idx] = original - step
            loss_minus, signs_minus = loss_and_signs(model, x, target)
            flat[idx] = original
        if any(not torch.equal(a, b) for a, b in zip(signs_plus, signs_minus)):
            continue  # perturbation crossed a ReLU kink: FD is invalid there
        fd = (loss_plus - loss_minus) / (2 * step)
        analytic = p.grad.view(-1)[idx].item()
        rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
        assert rel < 1e-3, f"param grad mismatch: fd={fd}, analytic={analytic}"
        checked += 1


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def test_train_constant_dataset_converges():
    tensors, dates, _ = make_records(n=30, c=2, constant=0.3)
    model = build(AutoencoderSpec(kind="ae3d", in_channels=2, conv_widths=[4, 8],
                                  latent_dim=4), seed=0)
    cfg = TrainConfig(epochs=200, batch_size=16, learning_rate=1e-2, seed=0)
    history = train(model, tensors, dates, cfg)
    assert len(history) == 200
    assert history[-1]["train_loss"] < 0.01
    assert history[-1]["train_loss"] < 1e-3 * history[0]["train_loss"]


def test_train_history_bit_reproducible():
    tensors, dates, _ = make_records(n=24, c=2, seed=4)
    histories = []
    for run in range(2):
        model = build(AutoencoderSpec(kind="ae3d", in_channels=2, conv_widths=[3, 4],
                                      latent_dim=4), seed=1)
        cfg = TrainConfig(epochs=3, batch_size=8, seed=1)
        histories.append(train(model, tensors, dates, cfg))
    assert histories[0] == histories[1]


def test_train_empty_and_tiny_store():
    tensors, dates, _ = make_records(n=24, c=2)
    model = build(AutoencoderSpec(kind="ae3d", in_channels=2, conv_widths=[3, 4],
                                  latent_dim=4), seed=0)
    with pytest.raises(EmptyStore):
        train(model, tensors[:0], dates[:0], TrainConfig(epochs=1))
    with pytest.raises(EmptyStore):
        train(model, tensors[:1], dates[:1], TrainConfig(epochs=1))


def test_train_diverged_loss():
    tensors, dates, _ = make_records(n=24, c=2)
    tensors[0, 0, 0, 0, 0] = np.nan
    model = build(AutoencoderSpec(kind="ae3d", in_channels=2, conv_widths=[3, 4],
                                  latent_dim=4), seed=0)
    with pytest.raises(DivergedLoss):
        train(model, tensors, dates, TrainConfig(epochs=1, batch_size=32))


def test_train_variant_mismatch():
    tensors, dates, _ = make_records(n=24, c=3)
    model = build(AutoencoderSpec(kind="ae3d", in_channels=2, conv_widths=[3, 4],
                                  latent_dim=4), seed=0)
    with pytest.raises(VariantMismatch):
        train(model, tensors, dates, TrainConfig(epochs=1))


def test_encodings_affect_inputs_not_targets():
    # training on a zero dataset with encodings on: the target stays zero, so
    # the model must learn to undo the date offsets; the training loss at
    # epoch 1 is far from zero only because inputs are encoded
    tensors, dates, _ = make_records(n=24, c=2, constant=0.0)
    model = build(AutoencoderSpec(kind="ae3d", in_channels=2, conv_widths=[3, 4],
                                  latent_dim=4), seed=0)
    history_enc = train(model, tensors, dates, TrainConfig(epochs=1, batch_size=8, seed=0),
                        use_encodings=True)
    model2 = build(AutoencoderSpec(kind="ae3d", in_channels=2, conv_widths=[3, 4],
                                   latent_dim=4), seed=0)
    history_raw = train(model2, tensors, dates, TrainConfig(epochs=1, batch_size=8, seed=0),
                        use_encodings=False)
    assert history_enc[0]["train_loss"] != history_raw[0]["train_loss"]


# ---------------------------------------------------------------------------
# Latent extraction and files
# ---------------------------------------------------------------------------

def trained_mini(tensors, dates, use_encodings=False):
    model = build(AutoencoderSpec(kind="ae3d", in_channels=2, conv_widths=[3, 4],
                                  latent_dim=4), seed=0)
    train(model, tensors, dates, TrainConfig(epochs=2, batch_size=8, seed=0),
          use_encodings=use_encodings)
    return model


def test_encode_batch_order_and_shapes():
    tensors, dates, index = make_records(n=24, c=2, seed=6)
    model = trained_mini(tensors, dates)
    feats = encode_batch(model, tensors, dates, index)
    assert len(feats) == 24
    for i, f in enumerate(feats):
        rec = index["records"][i]
        assert (f.field_id, f.grid_row, f.grid_col) == (
            rec["field_id"], rec["grid_row"], rec["grid_col"]
        )
        assert f.z.shape == (4,)
        assert np.isfinite(f.z).all()


def test_encode_batch_identical_records_identical_z():
    tensors, dates, index = make_records(n=8, c=2, constant=0.4)
    model = trained_mini(tensors, dates)
    feats = encode_batch(model, tensors, dates, index)
    for f in feats[1:]:
        assert np.array_equal(f.z, feats[0].z)


def test_encode_batch_encoding_toggle_changes_z():
    tensors, dates, index = make_records(n=8, c=2, seed=8)
    model = trained_mini(tensors, dates)
    z_off = encode_batch(model, tensors, dates, index, use_encodings=False)[0].z
    z_on = encode_batch(model, tensors, dates, index, use_encodings=True)[0].z
    assert not np.array_equal(z_off, z_on)


def test_encode_batch_variant_mismatch():
    tensors, dates, index = make_records(n=8, c=3)
    model = build(AutoencoderSpec(kind="ae3d", in_channels=2, conv_widths=[3, 4],
                                  latent_dim=4), seed=0)
    with pytest.raises(VariantMismatch):
        encode_batch(model, tensors, dates, index)


def test_checkpoint_round_trip(tmp_path):
    tensors, dates, index = make_records(n=16, c=2, seed=9)
    model = trained_mini(tensors, dates)
    save_model(model, tmp_path / "model", sidecar={"temporal_encodings": False,
                                                   "encoding_mode": "split"})
    loaded, sidecar = load_model(tmp_path / "model")
    assert sidecar["spec"]["kind"] == "ae3d"
    assert sidecar["temporal_encodings"] is False
    a = encode_batch(model, tensors, dates, index)
    b = encode_batch(loaded, tensors, dates, index)
    for fa, fb in zip(a, b):
        assert np.array_equal(fa.z, fb.z)


def test_features_file_round_trip(tmp_path):
    tensors, dates, index = make_records(n=16, c=2, seed=10)
    model = trained_mini(tensors, dates)
    feats = encode_batch(model, tensors, dates, index)
    save_features(feats, tmp_path / "features.f32", meta={"method": "ae3d"})
    loaded = load_features(tmp_path / "features.f32")
    assert len(loaded) == len(feats)
    for fa, fb in zip(feats, loaded):
        assert (fa.field_id, fa.grid_row, fa.grid_col) == (fb.field_id, fb.grid_row, fb.grid_col)
        assert np.array_equal(fa.z.astype(np.float32), fb.z)
    raw = np.fromfile(tmp_path / "features.f32", dtype="<f4")
    assert raw.size == 16 * 4
    (tmp_path / "features.f32").write_bytes(raw.tobytes()[:-4])
    with pytest.raises(ShapeMismatch):
        load_features(tmp_path / "features.f32")
