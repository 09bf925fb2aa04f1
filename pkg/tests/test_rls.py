import copy

import numpy as np
import pytest
import torch

from latentsr import degrade as dg, flow as fl, generator as G, rls
from latentsr.errors import (DimensionMismatchError, InvalidParameterError,
                             NonFiniteError)


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    m = G.StyleGenerator(channels=(32, 24, 16, 12, 8))
    m.eval()
    return m


@pytest.fixture(scope="module")
def identity_flow():
    torch.manual_seed(1)
    return fl.FlowModel(64, hidden=64)


@pytest.fixture(scope="module")
def spec16():
    return dg.DegradationSpec(16)


class TestConfig:
    def test_variant_lambda_resolution(self):
        cfg = rls.RLSConfig(variant="no_regu")
        assert cfg.effective_lambda_w == 0.0 and cfg.effective_lambda_c == 0.0
        cfg = rls.RLSConfig(variant="no_pw")
        assert cfg.effective_lambda_w == 0.0 and cfg.effective_lambda_c > 0.0
        cfg = rls.RLSConfig(variant="no_pcross")
        assert cfg.effective_lambda_w > 0.0 and cfg.effective_lambda_c == 0.0

    def test_invalid_values_rejected(self):
        with pytest.raises(InvalidParameterError):
            rls.RLSConfig(lambda_w=-1.0)
        with pytest.raises(InvalidParameterError):
            rls.RLSConfig(iterations=0)
        with pytest.raises(InvalidParameterError):
            rls.RLSConfig(variant="bogus")


class TestPriorCross:
    def test_equal_rows_zero(self):
        w = np.random.default_rng(0).normal(size=64)
        assert rls.prior_cross(np.tile(w, (5, 1))) == 0.0

    def test_two_rows_unit_distance(self):
        wp = np.zeros((2, 64))
        wp[1, 7] = 1.0
        assert rls.prior_cross(wp) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            wp = rng.normal(size=(5, 16)) * rng.uniform(0.1, 3)
            brute = 0.0
            for i in range(5):
                for j in range(i + 1, 5):
                    brute -= float(((wp[i] - wp[j]) ** 2).sum())
            assert rls.prior_cross(wp) == pytest.approx(brute, abs=1e-9)

    def test_nonpositive(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            assert rls.prior_cross(rng.normal(size=(5, 8))) <= 0.0

    def test_needs_two_rows(self):
        with pytest.raises(DimensionMismatchError):
            rls.prior_cross(np.zeros((1, 8)))


class TestPriorW:
    def test_identical_rows_equal_row_density(self, identity_flow):
        w = np.random.default_rng(3).normal(size=64)
        wp = np.tile(w, (5, 1))
        expected = fl.flow_log_density(identity_flow, w)
        assert rls.prior_w(wp, identity_flow) == pytest.approx(expected, rel=1e-12)

    def test_row_permutation_invariant(self, identity_flow):
        wp = np.random.default_rng(4).normal(size=(5, 64))
        permuted = wp[[3, 1, 4, 0, 2]]
        assert rls.prior_w(wp, identity_flow) == pytest.approx(
            rls.prior_w(permuted, identity_flow), rel=1e-12)

    def test_nonfinite_rejected(self, identity_flow):
        wp = np.zeros((5, 64))
        wp[2, 2] = np.inf
        with pytest.raises(NonFiniteError):
            rls.prior_w(wp, identity_flow)


class TestDataTerm:
    def test_self_consistency_is_zero(self, model, spec16):
        wp = np.random.default_rng(5).normal(size=(5, 64)).astype(np.float32)
        ds = dg.TorchDownscaler(64, 16)
        with torch.no_grad():
            y = ds(model.synthesis(torch.from_numpy(wp)[None]))
        y_img = y[0].permute(1, 2, 0).numpy()
        assert rls.data_term(y_img, wp, model, spec16) == 0.0

    def test_links_to_laplace_loglik(self, model, spec16):
        rng = np.random.default_rng(6)
        wp = rng.normal(size=(5, 64)).astype(np.float32)
        y = rng.random((4, 4, 3)).astype(np.float32)
        sr = G.synthesize(model, wp)
        residual = y - dg.downscale_bicubic(sr, 16)
        assert rls.data_term(y, wp, model, spec16) == pytest.approx(
            -dg.laplace_loglik(residual), rel=1e-4)

    def test_shape_error(self, model, spec16):
        with pytest.raises(DimensionMismatchError):
            rls.data_term(np.zeros((8, 8, 3)), np.zeros((5, 64)), model, spec16)


class TestObjective:
    def test_no_regu_equals_data_term(self, model, identity_flow, spec16):
        rng = np.random.default_rng(7)
        wp = rng.normal(size=(5, 64)).astype(np.float32)
        y = rng.random((4, 4, 3)).astype(np.float32)
        cfg = rls.RLSConfig(variant="no_regu")
        assert rls.objective(y, wp, model, identity_flow, spec16, cfg) == (
            rls.data_term(y, wp, model, spec16))

    def test_zero_lambdas_equal_no_regu(self, model, identity_flow, spec16):
        rng = np.random.default_rng(8)
        wp = rng.normal(size=(5, 64)).astype(np.float32)
        y = rng.random((4, 4, 3)).astype(np.float32)
        a = rls.objective(y, wp, model, identity_flow, spec16,
                          rls.RLSConfig(lambda_w=0.0, lambda_c=0.0))
        b = rls.objective(y, wp, model, identity_flow, spec16,
                          rls.RLSConfig(variant="no_regu"))
        assert a == b

    def test_full_gradient_matches_finite_differences(self, model,
                                                      identity_flow, spec16):
        # float64 end to end; central-difference oracle on 10 coordinates
        dmodel = copy.deepcopy(model).double()
        ds = dg.TorchDownscaler(64, 16)
        gen = torch.Generator().manual_seed(9)
        wp = torch.randn(5, 64, dtype=torch.float64, generator=gen)
        y = torch.rand(1, 3, 4, 4, dtype=torch.float64, generator=gen)
        lam_w, lam_c = 5e-5, 0.01

        def objective_t(w):
            data = rls._data_term_t(y, w[None], dmodel, ds)[0]
            pw = rls._prior_w_t(w[None], identity_flow)[0]
            pc = rls._prior_cross_t(w[None])[0]
            return data - lam_w * pw - lam_c * pc

        wp_g = wp.clone().requires_grad_(True)
        objective_t(wp_g).backward()
        analytic = wp_g.grad.numpy()

        rng = np.random.default_rng(10)
        h = 1e-4
        for _ in range(10):
            i, j = rng.integers(5), rng.integers(64)
            plus, minus = wp.clone(), wp.clone()
            plus[i, j] += h
            minus[i, j] -= h
            fd = (float(objective_t(plus)) - float(objective_t(minus))) / (2 * h)
            denom = max(abs(fd), abs(analytic[i, j]), 1e-6)
            assert abs(fd - analytic[i, j]) / denom <= 1e-3


class TestSuperresolve:
    def test_trajectory_identity_and_best_iterate(self, model, identity_flow,
                                                  spec16):
        y = np.random.default_rng(11).random((4, 4, 3)).astype(np.float32)
        cfg = rls.RLSConfig(iterations=20, init_n=50, seed=1)
        res = rls.superresolve(y, model, identity_flow, spec16, cfg)
        assert len(res.trajectory) == 20
        for e in res.trajectory:
            recomputed = (e["data_term"] - cfg.lambda_w * e["prior_w"]
                          - cfg.lambda_c * e["prior_cross"])
            assert e["total"] == pytest.approx(recomputed, rel=1e-12)
        best = min(e["total"] for e in res.trajectory)
        assert best <= res.trajectory[0]["total"]
        np.testing.assert_array_equal(
            res.sr_image, G.synthesize(model, res.w_plus_hat))
        assert len(res.per_row_log_density) == model.num_layers

    def test_deterministic(self, model, identity_flow, spec16):
        y = np.random.default_rng(12).random((4, 4, 3)).astype(np.float32)
        cfg = rls.RLSConfig(iterations=10, init_n=50, seed=3)
        a = rls.superresolve(y, model, identity_flow, spec16, cfg)
        b = rls.superresolve(y, model, identity_flow, spec16, cfg)
        assert np.array_equal(a.w_plus_hat, b.w_plus_hat)
        assert np.array_equal(a.sr_image, b.sr_image)
        assert a.trajectory == b.trajectory

    def test_batch_matches_individual_runs(self, model, identity_flow, spec16):
        rng = np.random.default_rng(13)
        ys = rng.random((3, 4, 4, 3)).astype(np.float32)
        cfg = rls.RLSConfig(iterations=8, init_n=50, seed=4)
        batched = rls.superresolve_batch(ys, model, identity_flow, spec16, cfg)
        for i in range(3):
            single = rls.superresolve(ys[i], model, identity_flow, spec16, cfg)
            np.testing.assert_allclose(single.w_plus_hat,
                                       batched[i].w_plus_hat, atol=1e-5)

    def test_nonfinite_objective_aborts_with_payload(self, model,
                                                     identity_flow, spec16):
        y = np.full((4, 4, 3), np.inf, dtype=np.float32)
        cfg = rls.RLSConfig(iterations=5, init_n=50)
        with pytest.raises(NonFiniteError) as err:
            rls.superresolve(y, model, identity_flow, spec16, cfg)
        assert "iteration" in err.value.payload

    def test_variant_zeroes_logged_contribution(self, model, identity_flow,
                                                spec16):
        y = np.random.default_rng(14).random((4, 4, 3)).astype(np.float32)
        cfg = rls.RLSConfig(iterations=5, init_n=50, variant="no_pw")
        res = rls.superresolve(y, model, identity_flow, spec16, cfg)
        assert all(e["prior_w"] == 0.0 for e in res.trajectory)
        assert any(e["prior_cross"] != 0.0 for e in res.trajectory)

    def test_given_init_requires_w_init(self, model, identity_flow, spec16):
        y = np.zeros((4, 4, 3), dtype=np.float32)
        with pytest.raises(InvalidParameterError):
            rls.superresolve(y, model, identity_flow, spec16,
                             rls.RLSConfig(iterations=2, init="given"))


class TestPersistence:
    def test_result_round_trip_files(self, model, identity_flow, spec16,
                                     tmp_path):
        y = np.random.default_rng(15).random((4, 4, 3)).astype(np.float32)
        cfg = rls.RLSConfig(iterations=4, init_n=50)
        res = rls.superresolve(y, model, identity_flow, spec16, cfg)
        json_path = rls.save_result(res, tmp_path, "img0")
        assert json_path.exists()
        assert (tmp_path / "img0_sr.png").exists()
        manifest = rls.write_batch_manifest([("img0", res)], tmp_path / "m.csv")
        text = manifest.read_text()
        assert "img0" in text and "full" in text
