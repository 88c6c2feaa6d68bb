import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latent_invert import numcore as nc
from latent_invert.errors import DimensionError, SpecError
from latent_invert.models import (
    Layer, NetworkSpec, ParameterStore, discriminator_forward, discriminator_spec, init_network,
    mapping_spec, mlp_forward, projector_forward, projector_spec,
)


def dense_spec(i, o):
    return NetworkSpec((Layer("dense", o),), (i,), (o,))


class TestInit:
    def test_deterministic(self):
        a = init_network(projector_spec(), 3, "P")
        b = init_network(projector_spec(), 3, "P")
        assert a.checksum() == b.checksum()

    def test_seed_matters(self):
        assert init_network(projector_spec(), 3, "P").checksum() != init_network(projector_spec(), 4, "P").checksum()

    def test_biases_zero(self):
        store = init_network(projector_spec(), 0)
        for name, t in store.items():
            if name.endswith(".b"):
                assert not t.data.any(), name

    def test_dense_bound(self):
        w = init_network(dense_spec(4, 4), 11)["dense0.w"].data
        assert np.all(np.abs(w) < np.sqrt(6 / 8))

    def test_conv_bound_uses_receptive_field(self):
        store = init_network(projector_spec(), 0)
        k = store["conv0.w"].data  # 1 -> 8 channels
        assert np.abs(k).max() < np.sqrt(6 / (9 * 1 + 9 * 8))

    def test_names_in_layer_order(self):
        names = list(init_network(projector_spec(), 0))
        assert names == ["conv0.w", "conv0.b", "conv2.w", "conv2.b", "conv4.w", "conv4.b", "dense7.w", "dense7.b"]

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**63 - 1))
    def test_depends_only_on_spec_and_seed(self, seed):
        spec = mapping_spec()
        assert init_network(spec, seed).checksum() == init_network(mapping_spec(), seed).checksum()


class TestSpec:
    def test_shapes_compose(self):
        assert projector_spec().shapes()[-1] == (8,)
        assert projector_spec().shapes()[0] == (8, 16, 16)

    def test_bad_spec_names_layer(self):
        spec = NetworkSpec((Layer("conv", 4, stride=2), Layer("dense", 3)), (1, 8, 8), (3,))
        with pytest.raises(SpecError, match="layer 1"):
            init_network(spec, 0)

    def test_declared_output_mismatch(self):
        with pytest.raises(SpecError):
            NetworkSpec((Layer("dense", 3),), (4,), (5,)).shapes()


class TestStore:
    def test_duplicate_rejected(self):
        s = ParameterStore()
        s.add("a", np.zeros(2))
        with pytest.raises(KeyError):
            s.add("a", np.zeros(2))

    def test_copy_is_deep(self):
        s = init_network(mapping_spec(), 0)
        c = s.copy()
        c["dense0.w"].data[0, 0] += 1.0
        assert s.checksum() != c.checksum()

    def test_every_tensor_gets_gradient(self):
        p = init_network(projector_spec(), 0, "P").trainable()
        x = np.random.default_rng(0).uniform(size=(2, 32, 32))
        with nc.Tape():
            nc.backward(nc.mean(nc.square(projector_forward(p, x))))
        for name, t in p.items():
            assert t.grad is not None and t.grad.shape == t.shape, name


class TestMlp:
    def test_zero_in_zero_out(self):
        f = init_network(mapping_spec(), 5)
        assert not mlp_forward(f, np.zeros((3, 16))).data.any()

    def test_rows_independent(self):
        f = init_network(mapping_spec(), 5)
        row = np.random.default_rng(1).normal(size=16)
        out = mlp_forward(f, np.tile(row, (4, 1))).data
        assert np.all(out == out[0])

    def test_identity_dense(self):
        s = init_network(dense_spec(3, 3), 0)
        s["dense0.w"].data = np.eye(3)
        x = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(mlp_forward(s, x).data, x)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            mlp_forward(init_network(mapping_spec(), 0), np.zeros((1, 15)))


class TestProjector:
    def test_shape_and_determinism(self):
        p = init_network(projector_spec(), 2)
        x = np.random.default_rng(2).uniform(size=(5, 32, 32))
        a, b = projector_forward(p, x).data, projector_forward(p, x).data
        assert a.shape == (5, 8)
        assert a.tobytes() == b.tobytes()

    def test_zero_head(self):
        p = init_network(projector_spec(), 2)
        p["dense7.w"].data[:] = 0.0
        assert not projector_forward(p, np.zeros((2, 32, 32))).data.any()

    def test_resolution_mismatch_says_resize(self):
        p = init_network(projector_spec(), 0)
        with pytest.raises(DimensionError, match="resize"):
            projector_forward(p, np.zeros((1, 16, 16)))

    def test_forward_does_not_mutate(self):
        p = init_network(projector_spec(), 0)
        before = p.checksum()
        projector_forward(p, np.ones((2, 32, 32)))
        assert p.checksum() == before


class TestDiscriminator:
    def test_taps_and_logits(self):
        d = init_network(discriminator_spec(), 0, "D")
        x = np.random.default_rng(3).uniform(size=(3, 32, 32))
        logits, feats = discriminator_forward(d, x)
        assert logits.shape == (3, 1)
        assert [f.shape[1:] for f in feats] == [(8, 16, 16), (16, 8, 8), (32, 4, 4)]
        logits2, feats2 = discriminator_forward(d, x)
        assert logits.data.tobytes() == logits2.data.tobytes()
        assert all(a.data.tobytes() == b.data.tobytes() for a, b in zip(feats, feats2))

    def test_logits_unbounded(self):
        d = init_network(discriminator_spec(), 0, "D")
        d["dense7.b"].data[:] = 50.0
        logits, _ = discriminator_forward(d, np.zeros((1, 32, 32)))
        assert logits.data[0, 0] == 50.0
