import numpy as np
import pytest

from periodnet import numcore as nc
from periodnet.attention import (
    MaskError,
    MhaParams,
    PamConfig,
    build_neighborhood_mask,
    init_mha,
    init_router,
    mha,
    pam_forward,
    router_forward,
    spam_forward,
)
from periodnet.numcore import Tensor

from conftest import weighted_sum

LP_GRID = [(L, P) for L in (6, 12, 24) for P in (2, 3, 8) if L % P == 0]


def random_mha(rng, D=8, heads=2, std=0.5):
    return init_mha(D, heads, rng, std)


def loop_mha_oracle(q_in, k_in, v_in, p: MhaParams, mask=None):
    """Unfused reference: explicit per-head, per-query loops."""
    Wq, Wk, Wv, Wo = (t.data for t in (p.Wq, p.Wk, p.Wv, p.Wo))
    Q, K, V = q_in @ Wq, k_in @ Wk, v_in @ Wv
    hd = p.head_dim
    out = np.zeros((q_in.shape[0], p.dim))
    for h in range(p.heads):
        sl = slice(h * hd, (h + 1) * hd)
        for i in range(q_in.shape[0]):
            keys = [j for j in range(k_in.shape[0]) if mask is None or mask[i, j]]
            s = np.array([Q[i, sl] @ K[j, sl] / np.sqrt(hd) for j in keys])
            w = np.exp(s - s.max())
            w /= w.sum()
            out[i, sl] = sum(wj * V[j, sl] for wj, j in zip(w, keys))
    return out @ Wo


# ---------------------------------------------------------------- mha


def test_mha_identical_keys_gives_projected_value(rng):
    p = random_mha(rng)
    row = rng.normal(size=8)
    kv = Tensor(np.tile(row, (5, 1)))
    out = mha(Tensor(rng.normal(size=(3, 8))), kv, kv, p).data
    expected = row @ p.Wv.data @ p.Wo.data
    np.testing.assert_allclose(out, np.tile(expected, (3, 1)), atol=1e-12)


def test_mha_delta_mask(rng):
    p = random_mha(rng)
    q, kv = rng.normal(size=(4, 8)), rng.normal(size=(6, 8))
    mask = np.zeros((4, 6), dtype=bool)
    mask[:, 2] = True
    out = mha(Tensor(q), Tensor(kv), Tensor(kv), p, mask).data
    expected = kv[2] @ p.Wv.data @ p.Wo.data
    np.testing.assert_allclose(out, np.tile(expected, (4, 1)), atol=1e-12)


def test_mha_matches_per_head_loop(rng):
    p = random_mha(rng)
    q, k, v = rng.normal(size=(4, 8)), rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    out = mha(Tensor(q), Tensor(k), Tensor(v), p).data
    assert np.max(np.abs(out - loop_mha_oracle(q, k, v, p))) < 1e-10


def test_mha_masked_matches_loop(rng):
    p = random_mha(rng)
    z = rng.normal(size=(12, 8))
    mask = build_neighborhood_mask(12, 3, "pam")
    out = mha(Tensor(z), Tensor(z), Tensor(z), p, mask).data
    assert np.max(np.abs(out - loop_mha_oracle(z, z, z, p, mask))) < 1e-10


def test_mha_fully_masked_row_raises(rng):
    p = random_mha(rng)
    z = Tensor(rng.normal(size=(3, 8)))
    mask = np.ones((3, 3), dtype=bool)
    mask[1] = False
    with pytest.raises(MaskError, match=r"\[1\]"):
        mha(z, z, z, p, mask)


def test_mha_rejects_bad_heads(rng):
    with pytest.raises(ValueError):
        init_mha(6, 4, rng)


def test_mha_key_value_length_mismatch(rng):
    p = random_mha(rng)
    with pytest.raises(nc.ShapeError):
        mha(Tensor(np.ones((2, 8))), Tensor(np.ones((3, 8))), Tensor(np.ones((4, 8))), p)


# ---------------------------------------------------------------- masks


def test_dense_mask_examples():
    m = build_neighborhood_mask(6, 2, "pam")
    assert set(np.flatnonzero(m[0])) == {0, 1, 2, 3}
    assert set(np.flatnonzero(m[2])) == set(range(6))


def test_sparse_mask_examples():
    m = build_neighborhood_mask(6, 2, "spam")
    assert set(np.flatnonzero(m[2])) == {0, 2, 4}
    assert set(np.flatnonzero(m[1])) == {1, 3}
    assert set(np.flatnonzero(m[3])) == {1, 3, 5}


def test_interior_key_counts():
    L, P = 24, 8
    dense, sparse = build_neighborhood_mask(L, P, "pam"), build_neighborhood_mask(L, P, "spam")
    interior = range(P, 2 * P)
    assert all(dense[t].sum() == 3 * P for t in interior)
    assert all(sparse[t].sum() == 3 for t in interior)
    assert dense[0].sum() == 2 * P and dense[-1].sum() == 2 * P
    assert sparse[0].sum() == 2 and sparse[-1].sum() == 2


def test_mask_rejects_misaligned_length():
    with pytest.raises(nc.ShapeError):
        build_neighborhood_mask(10, 3)


# ---------------------------------------------------------------- PAM / SPAM


@pytest.mark.parametrize("L,P", LP_GRID)
def test_pam_equals_masked_attention(L, P, rng):
    p = random_mha(rng)
    z = Tensor(rng.normal(size=(L, 8)))
    oracle = mha(z, z, z, p, build_neighborhood_mask(L, P, "pam")).data
    assert np.max(np.abs(pam_forward(z, p, PamConfig(P)).data - oracle)) < 1e-10


@pytest.mark.parametrize("L,P", LP_GRID)
def test_spam_equals_masked_attention(L, P, rng):
    p = random_mha(rng)
    z = Tensor(rng.normal(size=(L, 8)))
    oracle = mha(z, z, z, p, build_neighborhood_mask(L, P, "spam")).data
    assert np.max(np.abs(spam_forward(z, p, PamConfig(P, "spam")).data - oracle)) < 1e-10


def test_pam_single_block_is_self_attention(rng):
    p = random_mha(rng)
    z = Tensor(rng.normal(size=(4, 8)))
    np.testing.assert_allclose(pam_forward(z, p, PamConfig(4)).data, mha(z, z, z, p).data, atol=1e-12)


def test_pam_batched_matches_per_sequence(rng):
    p = random_mha(rng)
    z = rng.normal(size=(2, 3, 12, 8))
    out = pam_forward(Tensor(z), p, PamConfig(3)).data
    for idx in np.ndindex(2, 3):
        np.testing.assert_allclose(out[idx], pam_forward(Tensor(z[idx]), p, PamConfig(3)).data, atol=1e-13)


def test_pam_locality_is_exact(rng):
    L, P = 12, 3
    p = random_mha(rng)
    z = rng.normal(size=(L, 8))
    base = pam_forward(Tensor(z), p, PamConfig(P)).data
    z2 = z.copy()
    z2[2 * P + 1] += 10.0  # a token in block 2
    out = pam_forward(Tensor(z2), p, PamConfig(P)).data
    assert np.array_equal(out[:P], base[:P])  # block 0 cannot see block 2
    assert not np.array_equal(out[P : 2 * P], base[P : 2 * P])


def test_spam_phase_isolation(rng):
    L, P = 24, 8
    p = random_mha(rng)
    z = rng.normal(size=(L, 8))
    base = spam_forward(Tensor(z), p, PamConfig(P, "spam")).data
    s = 11
    for t in range(L):
        if t % P == s % P:
            continue
        z2 = z.copy()
        z2[t] += 5.0
        assert np.array_equal(spam_forward(Tensor(z2), p, PamConfig(P, "spam")).data[s], base[s])


def test_pam_rejects_misaligned_length(rng):
    with pytest.raises(nc.ShapeError):
        pam_forward(Tensor(np.ones((10, 8))), random_mha(rng), PamConfig(3))
    with pytest.raises(nc.ShapeError):
        spam_forward(Tensor(np.ones((10, 8))), random_mha(rng), PamConfig(3, "spam"))


@pytest.mark.parametrize("mode", ["pam", "spam"])
def test_mixer_gradients(mode, rng):
    p = random_mha(rng, D=4, heads=2)
    z0 = rng.normal(size=(6, 4))
    w = rng.normal(size=(6, 4))
    fwd = pam_forward if mode == "pam" else spam_forward
    z = Tensor(z0, requires_grad=True)
    params = {"Wq": p.Wq, "Wk": p.Wk, "Wv": p.Wv, "Wo": p.Wo, "Z": z}
    report = nc.finite_diff_check(lambda: weighted_sum(fwd(z, p, PamConfig(2, mode)), w), params)
    assert report.passed, report.lines()


# ---------------------------------------------------------------- router


def test_router_shapes(rng):
    rp = init_router(8, 2, 4, rng, std=0.5)
    z = Tensor(rng.normal(size=(12, 8)))
    routed = mha(rp.M, z, z, rp.query_mha)
    assert routed.shape == (4, 8)
    assert router_forward(z, rp).shape == (12, 8)


def test_router_single_slot_is_constant_over_time(rng):
    rp = init_router(8, 2, 1, rng, std=0.5)
    out = router_forward(Tensor(rng.normal(size=(12, 8))), rp).data
    np.testing.assert_allclose(out, np.tile(out[0], (12, 1)), atol=1e-14)


def test_router_is_global(rng):
    rp = init_router(8, 2, 4, rng)  # default 0.02 init
    z = rng.normal(size=(12, 8))
    h = 1e-5
    z_up, z_dn = z.copy(), z.copy()
    z_up[-1, 0] += h
    z_dn[-1, 0] -= h
    sens = (router_forward(Tensor(z_up), rp).data[0] - router_forward(Tensor(z_dn), rp).data[0]) / (2 * h)
    assert np.max(np.abs(sens)) > 1e-8


def test_router_gradients(rng):
    rp = init_router(4, 2, 2, rng, std=0.5)
    z = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    w = rng.normal(size=(6, 4))
    params = {**nc.named_parameters(rp), "Z": z}
    report = nc.finite_diff_check(lambda: weighted_sum(router_forward(z, rp), w), params)
    assert report.passed, report.lines()
    assert {"M", "query_mha.Wq", "answer_mha.Wo"} <= set(report.errors)
