import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from fd import fd_agreement
from oldphoto.detect import (
    UNet,
    alpha_weight,
    build_detector,
    detection_loss,
    focal_loss,
    predict_mask,
    roc_auc,
    train_detector,
    weighted_ce,
)
from oldphoto.errors import ConfigurationError, UndefinedMetricError

EPS = 1e-7


def oracle_terms(pred, y, gamma, invert=False):
    """Scalar loops over a small fixture: (weighted CE, focal), both pixel means."""
    flat_p = [min(max(v, EPS), 1 - EPS) for v in np.ravel(pred).tolist()]
    flat_y = np.ravel(y).tolist()
    n = len(flat_p)
    alpha = sum(1 for v in flat_y if v == 1) / n
    alpha = min(max(alpha, 1e-6), 1 - 1e-6)
    if invert:
        alpha = 1 - alpha
    ce = fl = 0.0
    for p, t in zip(flat_p, flat_y):
        if t == 1:
            ce -= alpha * math.log(p)
            fl -= (1 - p) ** gamma * math.log(p)
        else:
            ce -= (1 - alpha) * math.log(1 - p)
            fl -= p ** gamma * math.log(1 - p)
    return ce / n, fl / n


def test_alpha_weight_fixtures():
    assert alpha_weight(torch.tensor([[1, 0], [0, 0]])).item() == pytest.approx(0.25)
    assert alpha_weight(torch.zeros(3, 3)).item() == pytest.approx(1e-6)
    assert alpha_weight(torch.ones(3, 3)).item() == pytest.approx(1 - 1e-6)


@given(st.integers(0, 10_000))
def test_alpha_weight_property(seed):
    y = (np.random.default_rng(seed).random((5, 7)) < 0.3).astype(np.float64)
    a = alpha_weight(torch.from_numpy(y)).item()
    assert 0 < a < 1
    if 0 < y.sum() < y.size:
        assert a == pytest.approx(y.mean(), abs=1e-12)


def test_weighted_ce_fixtures():
    y = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    assert weighted_ce(y.clone(), y).item() <= 1e-5
    single = weighted_ce(torch.tensor([[0.5]], dtype=torch.float64), torch.tensor([[1.0]], dtype=torch.float64))
    assert single.item() == pytest.approx((1 - 1e-6) * math.log(2), abs=1e-9)


def test_weighted_ce_monotone_in_positive_predictions():
    y = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    values = []
    for q in (0.2, 0.4, 0.6, 0.8, 0.95):
        pred = torch.tensor([[q, 0.3], [0.3, q]], dtype=torch.float64)
        values.append(weighted_ce(pred, y).item())
    assert all(b < a for a, b in zip(values, values[1:]))


def test_focal_fixtures():
    assert focal_loss(torch.ones(2, 2), torch.ones(2, 2)).item() == pytest.approx(0, abs=1e-6)
    single = focal_loss(torch.tensor([[0.5]], dtype=torch.float64), torch.tensor([[1.0]], dtype=torch.float64), 0.2)
    assert single.item() == pytest.approx(0.5 ** 0.2 * math.log(2), abs=1e-9)
    # the commonly quoted rounding 0.60339 agrees to four decimals only
    assert single.item() == pytest.approx(0.60339, abs=1e-4)


@given(st.integers(0, 10_000))
def test_focal_gamma_zero_is_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    p = torch.from_numpy(rng.uniform(0.01, 0.99, (4, 4)))
    y = torch.from_numpy((rng.random((4, 4)) < 0.5).astype(np.float64))
    ce = -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()
    assert abs(focal_loss(p, y, 0.0).item() - ce.item()) < 1e-9


@pytest.mark.parametrize("invert", [False, True])
def test_detection_loss_matches_scalar_oracle(invert):
    rng = np.random.default_rng(3)
    for shape in [(2, 2), (3, 4), (4, 4)]:
        pred = rng.uniform(0.001, 0.999, shape)
        y = (rng.random(shape) < 0.4).astype(np.float64)
        total, comps = detection_loss(torch.from_numpy(pred), torch.from_numpy(y), 0.2, 10.0, invert)
        ce, fl = oracle_terms(pred, y, 0.2, invert)
        assert set(comps) == {"ce", "fl"}
        assert comps["ce"].item() == pytest.approx(ce, abs=1e-6)
        assert comps["fl"].item() == pytest.approx(fl, abs=1e-6)
        assert total.item() == pytest.approx(ce + 10 * fl, abs=1e-6)


def test_detection_loss_perfect_prediction():
    y = torch.tensor([[1.0, 0.0], [0.0, 0.0]])
    total, comps = detection_loss(y.clone(), y)
    assert total.item() < 1e-4 and comps["ce"].item() < 1e-5


def test_detection_loss_is_per_sample_in_batch():
    rng = np.random.default_rng(0)
    pred = rng.uniform(0.05, 0.95, (2, 1, 3, 3))
    y = (rng.random((2, 1, 3, 3)) < 0.5).astype(np.float64)
    batch = detection_loss(torch.from_numpy(pred), torch.from_numpy(y))[0].item()
    each = [detection_loss(torch.from_numpy(pred[i]), torch.from_numpy(y[i]))[0].item() for i in range(2)]
    assert batch == pytest.approx(np.mean(each), abs=1e-9)


def test_detection_loss_gradient_wrt_logits():
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(2, 1, 4, 4, dtype=torch.float64, generator=g).requires_grad_(True)
    y = (torch.rand(2, 1, 4, 4, generator=g) < 0.4).double()

    def loss():
        return detection_loss(torch.sigmoid(logits), y)[0]

    frac, _ = fd_agreement(loss, [logits], n_samples=32, step=1e-3)
    assert frac >= 0.95


def test_unet_preserves_size():
    net = UNet(3, base=4, depth=3)
    for h, w in [(32, 32), (30, 45), (9, 9)]:
        assert net(torch.zeros(1, 3, h, w)).shape == (1, 1, h, w)


def test_predict_mask_contract():
    torch.manual_seed(0)
    net = UNet(3, base=4, depth=2)
    img = torch.rand(3, 20, 24) * 2 - 1
    prob, mask = predict_mask(net, img)
    assert prob.shape == mask.shape == (20, 24)
    assert prob.min() >= 0 and prob.max() <= 1
    assert set(mask.unique().tolist()) <= {0, 1}
    assert predict_mask(net, img, 0.0)[1].all()
    assert not predict_mask(net, img, 1.0)[1].any()
    with pytest.raises(ConfigurationError):
        predict_mask(None, img)


def test_roc_auc_extremes():
    gt = (np.random.default_rng(0).random((8, 8)) < 0.3).astype(np.uint8)
    assert roc_auc([gt.astype(float)], [gt])[1] == pytest.approx(1.0)
    assert roc_auc([1.0 - gt], [gt])[1] == pytest.approx(0.0)
    with pytest.raises(UndefinedMetricError):
        roc_auc([np.random.rand(4, 4)], [np.ones((4, 4))])


def test_roc_auc_random_is_half():
    rng = np.random.default_rng(1)
    auc = roc_auc([rng.random(10_000)], [rng.random(10_000) < 0.5])[1]
    assert abs(auc - 0.5) <= 0.02


@given(st.integers(0, 10_000))
def test_roc_auc_equals_mann_whitney(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 40))
    scores = np.round(rng.random(n), 1)  # ties on purpose
    labels = rng.random(n) < 0.5
    if labels.all() or not labels.any():
        labels[0] = not labels[0]
    pos, neg = scores[labels], scores[~labels]
    wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
    assert roc_auc([scores], [labels])[1] == pytest.approx(wins / (len(pos) * len(neg)), abs=1e-12)


def _toy_masks(n, size, seed):
    rng = np.random.default_rng(seed)
    imgs = rng.random((n, 3, size, size)).astype(np.float32) * 0.4 - 0.2
    masks = np.zeros((n, 1, size, size), dtype=np.float32)
    for i in range(n):
        r = int(rng.integers(size))
        masks[i, 0, r, :] = 1
        imgs[i, :, r, :] = 0.9
    return torch.from_numpy(imgs), torch.from_numpy(masks)


def test_train_detector_phases(micro_cfg, tmp_path):
    imgs, masks = _toy_masks(4, 16, 0)
    _, logs = train_detector(imgs, masks, micro_cfg)
    assert len(logs) == 1
    _, logs = train_detector(imgs, masks, micro_cfg, imgs[:2], masks[:2],
                             log_path=tmp_path / "det.csv", ckpt_path=tmp_path / "detector.pt")
    assert len(logs) == 2
    assert (tmp_path / "det_finetune.csv").is_file() and (tmp_path / "detector_finetune.pt").is_file()


def test_train_detector_deterministic(micro_cfg):
    imgs, masks = _toy_masks(4, 16, 0)
    a, _ = train_detector(imgs, masks, micro_cfg)
    b, _ = train_detector(imgs, masks, micro_cfg)
    for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(pa, pb)


def test_detector_learns_lines(micro_cfg):
    imgs, masks = _toy_masks(16, 16, 1)
    cfg = micro_cfg.replace(max_steps=300, batch_size=4, lr=2e-3, invert_alpha=True)
    unet, logs = train_detector(imgs, masks, cfg)
    series = [a + 10 * b for a, b in zip(logs[0].series("ce"), logs[0].series("fl"))]
    assert np.mean(series[-10:]) < 0.5 * np.mean(series[:10])


def test_build_detector_uses_config(micro_cfg):
    net = build_detector(micro_cfg)
    assert net.depth == micro_cfg.unet_depth


def test_step_budget_longer_than_epochs_keeps_lr_positive(micro_cfg):
    imgs, masks = _toy_masks(4, 16, 0)
    from oldphoto.training import StageRunner, adam
    net = build_detector(micro_cfg)
    opt = adam(net.parameters(), micro_cfg)
    runner = StageRunner("detector", micro_cfg.replace(max_steps=40), {"d": net}, {"g": opt}, {"s": 4})
    for _ in range(40):
        runner._next_indices()
        assert opt.param_groups[0]["lr"] >= 0
