import numpy as np
import pytest

from pcekit.data import Vocab
from pcekit.encoding import (
    amplify,
    caption_tokens,
    decode_sequence,
    dump_matrix_csv,
    encode_sequence,
    sequence_bias,
    token_aoi_map,
    token_bias,
    transition_matrix,
)

from oracles import transition_pairs

EWCX_AMPLIFIED = np.array([[0, 5, 0, 0], [5, 0, 5, 5], [0, 5, 0, 5], [0, 5, 5, 0]])


def test_ewcx_worked_example(ewcx):
    t = transition_matrix(ewcx.samples[0].sequence)
    assert t.order == ("vis_wall", "txt_wall", "off", "txt_rock")
    assert t.m.tolist() == [[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [0, 1, 0, 0]]
    a = amplify(t, 5)
    assert np.array_equal(a, EWCX_AMPLIFIED)


@pytest.mark.parametrize("counted", [False, True])
def test_transition_oracle(counted):
    r = np.random.default_rng(counted)
    pool = ["off", "vis_a", "vis_b", "txt_a", "txt_b", "txt_c"]
    for _ in range(300):
        seq = list(r.choice(pool, size=int(r.integers(1, 25))))
        t = transition_matrix(seq, counted=counted)
        order, m = transition_pairs(seq, counted)
        assert list(t.order) == order
        assert np.array_equal(t.m, m)


def test_amplify_properties():
    r = np.random.default_rng(0)
    t = transition_matrix(list(r.choice(["vis_a", "txt_a", "off"], 20)))
    a = amplify(t, 3.0)
    assert np.array_equal(a, a.T)
    assert np.array_equal(amplify(t, 6.0), 2 * a)
    assert not amplify(t, 0).any()
    with pytest.raises(ValueError):
        amplify(t, -1)


def test_self_transition_on_diagonal():
    t = transition_matrix(["vis_a", "vis_a", "txt_b"])
    assert t.m[0, 0] == 1 and amplify(t, 2)[0, 0] == 4


def test_single_fixation():
    t = transition_matrix(["vis_a"])
    assert t.m.shape == (1, 1) and t.m.sum() == 0


def test_encode_roundtrip():
    v = Vocab(["off", "vis_a", "txt_a"])
    idx = encode_sequence(["vis_a", "off", "txt_a"], v)
    assert idx.tolist() == [1, 0, 2]
    assert decode_sequence(idx, v) == ["vis_a", "off", "txt_a"]
    with pytest.raises(KeyError):
        encode_sequence(["vis_zz"], v)
    with pytest.raises(ValueError):
        encode_sequence([], v)


def test_token_map_ewcx(ewcx):
    st = ewcx.stimuli["2412873"]
    words = [w for w, _, _ in caption_tokens(st.caption)]
    assert words == "A man leans on a rock next to a wall".split()
    tmap = token_aoi_map(st)
    assert tmap[0] is None
    assert tmap[1:11] == (None, "txt_man", None, None, None, "txt_rock", None, None, None, "txt_wall")
    assert tmap[11:] == ("vis_wall", "vis_rock", "vis_man")


def test_sequence_bias_ewcx(ewcx):
    s = ewcx.samples[0]
    bias = sequence_bias(ewcx.stimuli[s.stimulus_id], s.sequence, 5)
    assert bias.shape == (14, 14)
    wall_txt, rock_txt, wall_vis, man_vis = 10, 6, 11, 13
    assert bias[wall_vis, wall_txt] == 5 and bias[wall_txt, wall_vis] == 5
    assert bias[wall_txt, rock_txt] == 5 and bias[rock_txt, wall_txt] == 5
    # never fixated or off-caption positions get no bias
    assert not bias[0].any() and not bias[man_vis].any() and not bias[2].any()
    assert np.array_equal(bias, bias.T)


def test_token_bias_shape_check():
    with pytest.raises(ValueError):
        token_bias(np.zeros((2, 2)), ["vis_a"], (None, "vis_a"))


def test_dump_matrix_csv(tmp_path, ewcx):
    t = transition_matrix(ewcx.samples[0].sequence)
    p = dump_matrix_csv(amplify(t, 5), t.order, tmp_path / "m.csv")
    rows = p.read_text().splitlines()
    assert rows[0] == ",vis_wall,txt_wall,off,txt_rock"
    assert rows[2] == "txt_wall,5,0,5,5"
