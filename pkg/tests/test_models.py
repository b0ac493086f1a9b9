"""Model-level tests: forward invariants, gradients, scoring contracts."""

import numpy as np
import pytest

from conftest import build_model, fd_worst_rel_err
from reuserec import selfattn_model
from reuserec.errors import ContractViolationError
from reuserec.model_common import ModelHyper, zero_grads
from reuserec.models import MODEL_KINDS, SequenceModel
from reuserec.numerics import Rng

SLOTS = (0, 0, 3, 7, 1, 5)


def zero_block_weights(model):
    for name in model.params:
        if name.startswith("b"):
            model.params[name][:] = 0.0


class TestReuseForward:
    def test_h0_is_last_row_of_E(self):
        m = build_model("ram")
        _, trace = m.forward(2, SLOTS)
        assert np.array_equal(trace.hs[0], trace.E[-1:])

    def test_E_is_untouched_across_blocks(self):
        m = build_model("ram", n_b=4)
        _, trace = m.forward(1, SLOTS)
        E2 = m.params["V"][np.asarray(SLOTS)] + m.params["P"]
        assert np.array_equal(trace.E, E2)

    def test_betas_are_masked_distributions(self):
        m = build_model("ram")
        _, trace = m.forward(1, SLOTS)
        valid = np.asarray(SLOTS) != 0
        for block in trace.betas:
            for beta in block:
                assert (beta >= 0).all()
                assert (beta[~valid] == 0.0).all()
                assert abs(beta.sum() - 1.0) < 1e-9

    def test_zero_weights_residual_identity(self):
        m = build_model("ram", n_b=3)
        zero_block_weights(m)
        h, trace = m.forward(1, SLOTS)
        assert np.array_equal(h, trace.E[-1:])

    def test_output_shape(self):
        m = build_model("ram")
        h, _ = m.forward(1, SLOTS)
        assert h.shape == (1, m.hyper.d)


class TestSelfAttnForward:
    def test_causality_exact(self):
        m = build_model("sa", n_b=3)
        _, trace = m.forward(1, SLOTS)
        for A in trace.maps:
            assert (A[np.triu_indices_from(A, k=1)] == 0.0).all()

    def test_nonpadding_rows_are_distributions(self):
        m = build_model("sa")
        _, trace = m.forward(1, SLOTS)
        valid = np.asarray(SLOTS) != 0
        for A in trace.maps:
            sums = A.sum(axis=1)
            assert np.allclose(sums[valid], 1.0, atol=1e-9)
            assert (sums[~valid] == 0.0).all()

    def test_zero_weights_identity(self):
        m = build_model("sa", n_b=2)
        zero_block_weights(m)
        h, trace = m.forward(1, SLOTS)
        assert np.array_equal(trace.hs[-1], trace.E)
        assert np.array_equal(h, trace.E[-1:])

    def test_stacking_equals_manual_chaining(self):
        m = build_model("sa", n_b=2)
        h, trace = m.forward(1, SLOTS)
        key_mask = selfattn_model.causal_key_mask(SLOTS, m.hyper)
        H = trace.E
        for blk in range(2):
            H, _, _, _ = selfattn_model.sa_block(H, m.params, f"b{blk}",
                                                 key_mask, m.hyper)
        assert np.array_equal(h, H[-1:])


class TestGradients:
    @pytest.mark.parametrize("kind", ["ram", "sa"])
    def test_fd_small(self, kind):
        assert fd_worst_rel_err(kind, seed=0) < 1e-4

    @pytest.mark.parametrize("kind", ["ram", "ram-u", "sa"])
    def test_zero_upstream_zero_grads(self, kind):
        m = build_model(kind)
        _, trace = m.forward(1, SLOTS)
        grads = m.backward(np.zeros((1, m.hyper.d)), trace)
        assert all((g == 0.0).all() for g in grads.values())

    @pytest.mark.parametrize("kind", ["ram", "sa"])
    def test_padding_row_frozen(self, kind):
        m = build_model(kind)
        _, trace = m.forward(1, SLOTS)
        grads = m.backward(np.ones((1, m.hyper.d)), trace)
        assert (grads["V"][0] == 0.0).all()

    def test_trace_mismatch(self):
        m = build_model("ram", n_b=2)
        _, trace = m.forward(1, SLOTS)
        other = build_model("ram", n_b=3)
        with pytest.raises(ContractViolationError):
            other.backward(np.ones((1, 8)), trace)


class TestScoring:
    def test_score_all_matches_item_by_item(self):
        m = build_model("ram")
        h, _ = m.forward(2, SLOTS)
        vec = m.score_all(h, 2)
        for j in range(1, m.n_items + 1):
            assert vec[j - 1] == pytest.approx(m.score(h, 2, j), abs=1e-12)

    def test_padding_item_not_scorable(self):
        m = build_model("ram")
        h, _ = m.forward(1, SLOTS)
        with pytest.raises(ContractViolationError):
            m.score(h, 1, 0)

    def test_positive_scaling_of_V_scales_scores(self):
        # for a fixed representation h, scores are linear in the item rows
        m = build_model("ram-u")
        h, _ = m.forward(1, SLOTS)
        before = m.score_all(h, 1)
        m.params["V"] *= 3.0
        after = m.score_all(h, 1)
        assert np.allclose(after, 3.0 * before)
        assert np.array_equal(np.argsort(-after, kind="stable"),
                              np.argsort(-before, kind="stable"))

    def test_user_embedding_linearity(self):
        ram = build_model("ram", seed=5)
        ram_u = SequenceModel("ram-u", ModelHyper(**{**ram.hyper.to_dict(),
                                                     "use_user_embedding": False}),
                              {k: v.copy() for k, v in ram.params.items() if k != "U"},
                              ram.n_items, ram.n_users)
        for user in range(1, ram.n_users + 1):
            h, _ = ram.forward(user, SLOTS)
            h2, _ = ram_u.forward(user, SLOTS)
            assert np.array_equal(h, h2)
            for j in range(1, ram.n_items + 1):
                uv = float(np.dot(ram.params["U"][user - 1],
                                  ram.params["V"][j]))
                # exact bit-level identity, not approximate:
                assert ram.score(h, user, j) == ram_u.score(h2, user, j) + uv


class TestKinds:
    def test_kind_tokens(self):
        assert MODEL_KINDS == ("ram", "ram-u", "sa")
        with pytest.raises(ValueError):
            build_model("nope")

    def test_user_row_only_for_ram(self):
        assert build_model("ram").user_row(1) is not None
        assert build_model("ram-u").user_row(1) is None
        assert build_model("sa").user_row(1) is None


class TestDropout:
    def test_dropout_changes_output_and_is_seeded(self):
        m = build_model("ram", dropout=0.5)
        r1 = Rng(3).stream("drop")
        r2 = Rng(3).stream("drop")
        h1, _ = m.forward(1, SLOTS, dropout_rng=r1)
        h2, _ = m.forward(1, SLOTS, dropout_rng=r2)
        h3, _ = m.forward(1, SLOTS)  # no dropout
        assert np.array_equal(h1, h2)
        assert not np.array_equal(h1, h3)

    def test_dropout_grads_still_match_fd(self):
        # with a fixed dropout mask the composed function is deterministic
        m = build_model("ram", dropout=0.3, n_b=1)
        user, tgt = 1, 4

        def run(collect):
            rng = Rng(7).stream("drop")
            h, tr = m.forward(user, SLOTS, dropout_rng=rng)
            if collect:
                return h, tr
            return float(h.sum())

        h, tr = run(True)
        grads = m.backward(np.ones((1, m.hyper.d)), tr)
        name = "b0.C"
        flat = m.params[name].reshape(-1)
        i = 5
        old = flat[i]
        flat[i] = old + 1e-6
        lp = run(False)
        flat[i] = old - 1e-6
        lm = run(False)
        flat[i] = old
        fd = (lp - lm) / 2e-6
        assert abs(fd - grads[name].reshape(-1)[i]) < 1e-5
