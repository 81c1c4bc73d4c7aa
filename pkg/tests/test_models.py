import numpy as np
import pytest

from stpgsr import autodiff as ad
from stpgsr.autodiff import Tensor
from stpgsr.errors import ShapeError, ValidationError
from stpgsr.graphs import validate_connectome
from stpgsr.models import (
    AutoencoderModel,
    DirectSrModel,
    StpGsrModel,
    build_model,
    shared_dual_topology,
)
from stpgsr.training import Adam

from conftest import random_connectome


def assert_valid_connectome(w):
    validate_connectome(w)
    assert np.array_equal(w, w.T)
    assert np.all(np.diag(w) == 0)
    assert w.min() >= 0


class TestTargetEdgeInit:
    def test_gram_of_identity_is_identity_after_scaling(self):
        # min-max has fixed points 0 and 1, so a Gram matrix that is exactly
        # the identity passes through the scaling unchanged
        scaled = ad.minmax_scale(ad.matmul(ad.transpose(Tensor(np.eye(5))), Tensor(np.eye(5))))
        assert np.array_equal(scaled.values, np.eye(5))

    def test_symmetric_and_unit_range(self, rng):
        model = StpGsrModel(6, 8, seed=3)
        a_s = random_connectome(rng, 6)
        init = model.target_edge_init(a_s).values
        assert np.allclose(init, init.T, atol=1e-12)
        assert init.min() >= 0.0 and init.max() <= 1.0

    def test_gram_is_positive_semidefinite(self, rng):
        # eigen-solver oracle on the unscaled Gram product
        model = StpGsrModel(6, 8, seed=3)
        a_s = random_connectome(rng, 6)
        from stpgsr.layers import gtb_forward
        from stpgsr.models import complete_arcs, _arc_weights

        x0 = Tensor(a_s)
        src, dst = complete_arcs(6)
        x1 = gtb_forward(model.node_gtb, x0, src, dst, _arc_weights(x0, src, dst))
        gram = x1.values.T @ x1.values
        assert np.linalg.eigvalsh(gram).min() >= -1e-9

    def test_wrong_size_rejected(self, rng):
        model = StpGsrModel(6, 8, seed=0)
        with pytest.raises(ShapeError):
            model.target_edge_init(random_connectome(rng, 5))


class TestStpGsrForward:
    def test_output_is_valid_connectome(self, rng):
        model = StpGsrModel(6, 9, seed=1)
        out = model.forward(random_connectome(rng, 6))
        assert out.matrix.shape == (9, 9)
        assert_valid_connectome(out.matrix)

    def test_deterministic_given_seed_and_input(self, rng):
        a_s = random_connectome(rng, 6)
        one = StpGsrModel(6, 8, seed=5).forward(a_s).matrix
        two = StpGsrModel(6, 8, seed=5).forward(a_s).matrix
        assert np.array_equal(one, two)

    def test_dual_stage_instrumentation(self, rng):
        n_t = 9
        model = StpGsrModel(5, n_t, seed=0)
        model.forward(random_connectome(rng, 5))
        m = n_t * (n_t - 1) // 2
        assert model.last_dual_stats["dual_feature_rows"] == m
        assert model.last_dual_stats["dual_directed_arcs"] == n_t * (n_t - 1) * (n_t - 2)

    def test_dual_topology_is_shared_across_models(self):
        assert StpGsrModel(4, 7, seed=0).dual_topology is shared_dual_topology(7)

    def test_upper_loss_equals_offdiagonal_matrix_mean(self, rng):
        model = StpGsrModel(6, 8, seed=2)
        a_s = random_connectome(rng, 6)
        a_t = random_connectome(rng, 8)
        out = model.forward(a_s)
        upper_loss = float(model.loss(out, a_t, a_s).values)
        diff = np.abs(out.matrix - a_t)
        off = ~np.eye(8, dtype=bool)
        assert abs(upper_loss - diff[off].mean()) < 1e-12


class TestDirectSr:
    def test_output_is_valid_connectome(self, rng):
        model = DirectSrModel(6, 9, seed=1)
        out = model.forward(random_connectome(rng, 6))
        assert_valid_connectome(out.matrix)
        assert out.matrix.max() <= 1.0

    def test_zero_parameter_stub_predicts_zeros(self, rng):
        model = DirectSrModel(5, 7, seed=0)
        for p in model.parameters():
            p.values[...] = 0.0
        out = model.forward(random_connectome(rng, 5))
        assert np.array_equal(out.matrix, np.zeros((7, 7)))


class TestAutoencoder:
    def test_both_outputs_valid(self, rng):
        model = AutoencoderModel(6, 9, seed=1)
        out = model.forward(random_connectome(rng, 6))
        assert out.matrix.shape == (9, 9)
        assert out.recon_matrix.shape == (6, 6)
        assert_valid_connectome(out.matrix)
        assert_valid_connectome(out.recon_matrix)

    def test_zero_parameter_stub_predicts_zeros(self, rng):
        model = AutoencoderModel(5, 7, seed=0)
        for p in model.parameters():
            p.values[...] = 0.0
        out = model.forward(random_connectome(rng, 5))
        assert np.array_equal(out.matrix, np.zeros((7, 7)))
        assert np.array_equal(out.recon_matrix, np.zeros((5, 5)))

    def test_combined_loss_decreases_on_toy_set(self, rng):
        model = AutoencoderModel(5, 7, seed=4)
        dataset = [(random_connectome(rng, 5), random_connectome(rng, 7)) for _ in range(3)]
        optimizer = Adam(model.parameters())

        def total_loss():
            losses = []
            for a_s, a_t in dataset:
                out = model.forward(a_s)
                losses.append(float(model.loss(out, a_t, a_s).values))
            return float(np.mean(losses))

        before = total_loss()
        for _ in range(30):
            model.zero_grad()
            for a_s, a_t in dataset:
                out = model.forward(a_s)
                loss = model.loss(out, a_t, a_s)
                out.tape.backward(loss)
            for p in model.parameters():
                p.grad /= len(dataset)
            optimizer.step(0.005)
        assert total_loss() < before


class TestStructuralGuarantee:
    def test_random_parameters_always_produce_valid_connectomes(self):
        rng = np.random.default_rng(99)
        kinds = ("stp_gsr", "direct_sr", "autoencoder")
        for trial in range(30):
            model = build_model(kinds[trial % 3], 5, 7, seed=trial)
            scale = 10.0 ** rng.uniform(-2, 2)
            for p in model.parameters():
                p.values[...] = rng.standard_normal(p.values.shape) * scale
            out = model.forward(random_connectome(rng, 5))
            assert_valid_connectome(out.matrix)


class TestParameterCounts:
    def test_counts_are_reported(self):
        for kind in ("stp_gsr", "direct_sr", "autoencoder"):
            model = build_model(kind, 8, 12, seed=0)
            total = sum(p.values.size for p in model.parameters())
            assert model.parameter_count() == total > 0

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            build_model("mystery", 4, 6)
