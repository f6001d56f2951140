import numpy as np
import pytest

from mei.model import (SITES, CheckpointError, ConfigError, FixedCore, ModelConfig, Site,
                       SiteConfig, forward_score, forward_scores_1N, forward_scores_heads,
                       init_model, load_checkpoint, make_fixed_core, save_checkpoint,
                       score_all_tails, score_triples)
from mei.scoring import matching_matrix, mei_score, trilinear_score

import oracles


def lookup_score(state, h, t, r):
    cfg = state.config
    return mei_score(state.params["entity"][h].reshape(cfg.K, cfg.Ce),
                     state.params["entity"][t].reshape(cfg.K, cfg.Ce),
                     state.params["relation"][r].reshape(cfg.K, cfg.Cr),
                     list(state.params["core"]))


def all_bn(**kw):
    return {s: SiteConfig(batchnorm=True, **kw) for s in SITES}


def perturb_bn(state, rng):
    for k in state.params:
        if k.startswith("bn."):
            state.params[k] = state.params[k] + rng.normal(scale=0.3, size=state.params[k].shape)
    for k in state.running:
        state.running[k] = state.running[k] + rng.uniform(0, 0.5, size=state.running[k].shape)


# init

def test_init_deterministic():
    cfg = ModelConfig(K=2, Ce=3, Cr=2, sites=all_bn())
    a, b = init_model(cfg, (5, 2), seed=7), init_model(cfg, (5, 2), seed=7)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    c = init_model(cfg, (5, 2), seed=8)
    assert not np.array_equal(a.params["entity"], c.params["entity"])


def test_init_ranges_and_bn_defaults():
    cfg = ModelConfig(K=2, Ce=3, init_scale=0.05, sites=all_bn())
    s = init_model(cfg, (6, 2), seed=0)
    assert s.params["entity"].shape == (6, 6) and s.params["relation"].shape == (2, 6)
    assert s.params["core"].shape == (1, 3, 3, 3)
    assert np.abs(s.params["entity"]).max() <= 0.05
    assert s.params["bn.matching_matrix.scale"].shape == (9,)
    assert np.all(s.running["bn.h_input.var"] == 1) and np.all(s.running["bn.h_input.mean"] == 0)


def test_init_scale_zero_gives_zero_scores():
    s = init_model(ModelConfig(K=2, Ce=2, init_scale=0.0), (4, 2))
    assert not forward_scores_1N(s, 1, 0).any()


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(K=0)
    with pytest.raises(ConfigError):
        ModelConfig(sites={Site.H_INPUT: SiteConfig(dropout=1.0)})
    with pytest.raises(ConfigError):
        ModelConfig(K=2, Ce=3, fixed_core="complex")
    with pytest.raises(ConfigError):
        ModelConfig(K=2, Ce=2, fixed_core="complex", shared_core=False)


def test_config_dict_round_trip():
    cfg = ModelConfig(K=2, Ce=3, Cr=4, shared_core=False,
                      sites={Site.MATCHING_MATRIX: SiteConfig(dropout=0.2, batchnorm=True)})
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# forward pass

def test_plain_forward_is_mei_score(rng):
    s = init_model(ModelConfig(K=3, Ce=2, Cr=3, shared_core=False, init_scale=1.0), (6, 3), seed=1)
    for _ in range(20):
        h, t, r = rng.integers(0, 6), rng.integers(0, 6), rng.integers(0, 3)
        assert forward_score(s, h, t, r) == pytest.approx(lookup_score(s, h, t, r), rel=1e-12)
        s.training = True
        assert forward_score(s, h, t, r) == pytest.approx(lookup_score(s, h, t, r), rel=1e-12)
        s.training = False


def test_hand_computed_single_partition():
    s = init_model(ModelConfig(K=1, Ce=2, Cr=2), (2, 1))
    s.params["entity"][:] = [[1.0, 2.0], [3.0, -1.0]]
    s.params["relation"][:] = [[0.5, 2.0]]
    w = np.arange(1.0, 9.0).reshape(1, 2, 2, 2)  # w[x, y, z] = 1 + 4x + 2y + z
    s.params["core"][:] = w
    # m_xy = 0.5 w_xy0 + 2 w_xy1 = 4.5 + 10x + 5y -> M = [[4.5, 9.5], [14.5, 19.5]]
    # h^T M t = 1 * (13.5 - 9.5) + 2 * (43.5 - 19.5) = 52
    expected = 52.0
    assert forward_score(s, 0, 1, 0) == pytest.approx(expected, rel=1e-15)


def test_training_mode_without_regularisation_equals_inference(rng):
    cfg = ModelConfig(K=2, Ce=3, Cr=2, sites={s: SiteConfig(dropout=0.0) for s in SITES})
    s = init_model(cfg, (5, 2), seed=3)
    inf = score_all_tails(s, [0, 1, 2], [0, 1, 1], training=False)[0]
    tr = score_all_tails(s, [0, 1, 2], [0, 1, 1], training=True)[0]
    np.testing.assert_array_equal(inf, tr)


def test_1n_consistency(rng):
    cfg = ModelConfig(K=2, Ce=3, Cr=2, sites=all_bn())
    s = init_model(cfg, (30, 3), seed=2)
    perturb_bn(s, rng)
    scores = forward_scores_1N(s, 4, 2)
    for t in rng.choice(30, 20, replace=False):
        assert scores[t] == pytest.approx(forward_score(s, 4, t, 2), rel=1e-12, abs=1e-14)


def test_1n_consistency_under_shared_dropout_draw(rng):
    cfg = ModelConfig(K=2, Ce=3, Cr=2, sites={s: SiteConfig(dropout=0.4) for s in SITES})
    s = init_model(cfg, (12, 2), seed=2)
    row, cache = score_all_tails(s, [3], [1], training=True, rng=rng)
    for t in range(12):
        one, _ = score_triples(s, [3], [t], [1], training=True, masks=cache["masks"])
        assert one[0] == pytest.approx(row[0, t], rel=1e-12, abs=1e-14)


def test_1n_edge_cases():
    s = init_model(ModelConfig(K=2, Ce=2), (1, 1))
    assert forward_scores_1N(s, 0, 0).shape == (1,)
    s = init_model(ModelConfig(K=2, Ce=2), (5, 1))
    s.params["core"][:] = 0
    assert not forward_scores_1N(s, 0, 0).any()


def test_head_scores_match_per_triple(rng):
    cfg = ModelConfig(K=3, Ce=2, Cr=3, shared_core=False, sites=all_bn())
    s = init_model(cfg, (9, 2), seed=5)
    perturb_bn(s, rng)
    heads = forward_scores_heads(s, 4, 1)
    for e in range(9):
        assert heads[e] == pytest.approx(forward_score(s, e, 4, 1), rel=1e-12, abs=1e-14)


def test_ids_out_of_range():
    s = init_model(ModelConfig(), (3, 1))
    with pytest.raises(IndexError):
        forward_score(s, 0, 3, 0)
    with pytest.raises(IndexError):
        forward_scores_1N(s, 0, 1)


def test_inference_batchnorm_identity_with_zero_epsilon(rng):
    cfg = ModelConfig(K=2, Ce=2, sites=all_bn(epsilon=0.0))
    s = init_model(cfg, (6, 2), seed=1)
    for h, t, r in rng.integers(0, 2, (10, 3)):
        assert forward_score(s, h, t, r) == pytest.approx(lookup_score(s, h, t, r), rel=1e-12)


def test_inference_batchnorm_epsilon_factor():
    # only the head input normalised: the score shrinks by exactly 1/sqrt(1 + eps)
    eps = 1e-3
    cfg = ModelConfig(K=2, Ce=2, sites={Site.H_INPUT: SiteConfig(batchnorm=True, epsilon=eps)})
    s = init_model(cfg, (4, 1), seed=1)
    assert forward_score(s, 0, 1, 0) == pytest.approx(lookup_score(s, 0, 1, 0) / np.sqrt(1 + eps),
                                                      rel=1e-12)


def test_inference_is_pure(rng):
    cfg = ModelConfig(K=2, Ce=2, sites={s: SiteConfig(dropout=0.5, batchnorm=True) for s in SITES})
    s = init_model(cfg, (5, 2), seed=0)
    assert forward_score(s, 1, 2, 1) == forward_score(s, 1, 2, 1)


def test_training_dropout_needs_randomness():
    cfg = ModelConfig(sites={Site.R_INPUT: SiteConfig(dropout=0.5)})
    s = init_model(cfg, (3, 1))
    with pytest.raises(ValueError):
        score_triples(s, [0], [1], [0], training=True)


# fixed cores

def test_fixed_core_matching_matrices(rng):
    r = rng.normal(size=2)
    np.testing.assert_array_equal(matching_matrix(make_fixed_core("complex"), r),
                                  [[r[0], -r[1]], [r[1], r[0]]])
    np.testing.assert_array_equal(matching_matrix(make_fixed_core("simple"), r),
                                  [[0, r[0]], [r[1], 0]])
    np.testing.assert_array_equal(matching_matrix(make_fixed_core("cp"), r), [[0, r[0]], [0, 0]])
    assert make_fixed_core("distmult").tolist() == [[[1.0]]]


def test_fixed_core_is_frozen():
    w = make_fixed_core(FixedCore.SIMPLE)
    with pytest.raises(ValueError):
        w[0, 0, 0] = 3.0
    s = init_model(ModelConfig(K=3, Ce=2, fixed_core="simple"), (4, 2))
    assert "core" not in s.trainable_names()


@pytest.mark.parametrize("pattern, oracle", [
    ("distmult", oracles.distmult), ("complex", oracles.complex_score),
    ("simple", oracles.simple_score), ("cp", oracles.cp_score)])
def test_fixed_core_reduces_to_classic_model(rng, pattern, oracle):
    K = 6 if pattern == "distmult" else 3
    ce = 1 if pattern == "distmult" else 2
    s = init_model(ModelConfig(K=K, Ce=ce, fixed_core=pattern, init_scale=1.0), (8, 3), seed=4)
    E, R = s.params["entity"], s.params["relation"]
    for h, t, r in rng.integers(0, 3, (50, 3)):
        assert forward_score(s, h, t, r) == pytest.approx(oracle(E[h], E[t], R[r]), rel=1e-12, abs=1e-15)


def test_distmult_core_is_trilinear(rng):
    w = make_fixed_core("distmult")
    h, t, r = rng.normal(size=(3, 7))
    assert mei_score(h[:, None], t[:, None], r[:, None], [w]) == pytest.approx(
        trilinear_score(h, t, r), rel=1e-12)


def test_complex_core_conjugation_swaps_roles(rng):
    w = make_fixed_core("complex")
    for _ in range(100):
        H, T, R = rng.normal(size=(3, 4, 2))
        Rc = R * [1, -1]
        assert mei_score(H, T, R, [w]) == pytest.approx(mei_score(T, H, Rc, [w]), rel=1e-12, abs=1e-15)


# checkpoints

def make_checkpointable(rng):
    cfg = ModelConfig(K=2, Ce=3, Cr=2, shared_core=False,
                      sites={Site.MATCHING_MATRIX: SiteConfig(batchnorm=True, dropout=0.1),
                             Site.HIDDEN_OUTPUT: SiteConfig(batchnorm=True)})
    s = init_model(cfg, (5, 4), seed=9)
    perturb_bn(s, rng)
    return s


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    s = make_checkpointable(rng)
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, s, extra={"note": "x"})
    back, header = load_checkpoint(p)
    assert back.config == s.config
    assert (back.num_entities, back.num_relations, back.seed) == (5, 4, 9)
    assert header["extra"] == {"note": "x"}
    for store in ("params", "running"):
        a, b = getattr(s, store), getattr(back, store)
        assert a.keys() == b.keys()
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()


def test_checkpoint_fixed_core_round_trip(tmp_path):
    s = init_model(ModelConfig(K=2, Ce=2, fixed_core="complex"), (3, 1))
    save_checkpoint(tmp_path / "c.ckpt", s)
    back, _ = load_checkpoint(tmp_path / "c.ckpt")
    np.testing.assert_array_equal(back.params["core"][0], make_fixed_core("complex"))
    assert "core" not in back.trainable_names()


def test_checkpoint_corruption_detected(tmp_path, rng):
    s = make_checkpointable(rng)
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, s)
    raw = bytearray(p.read_bytes())

    bad = tmp_path / "magic.ckpt"
    bad.write_bytes(b"NOTACKPT" + bytes(raw[8:]))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)

    header = raw.copy()
    header[20] ^= 0xFF  # inside the JSON header
    (tmp_path / "hdr.ckpt").write_bytes(bytes(header))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "hdr.ckpt")

    payload = raw.copy()
    payload[-3] ^= 0x01
    (tmp_path / "data.ckpt").write_bytes(bytes(payload))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path / "data.ckpt")
