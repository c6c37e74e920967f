import json
import math

import numpy as np
import pytest

from hyperpolicy import autodiff as ad
from hyperpolicy.autodiff import Tensor, backward, tape
from hyperpolicy.config import RunConfig, parse_config
from hyperpolicy.models import build_model, scheme_from_config
from hyperpolicy.rng import RngPool


def cfg_for(arch="hypernetwork", scheme="bias_hyperinit", encoder="onehot", size="XS", **kw):
    raw = {
        "architecture": arch,
        "base_size": size,
        "encoder": encoder,
        "init": {"scheme": scheme},
    }
    raw.update(kw)
    return parse_config(raw)


class TestSchemeResolution:
    def test_onehot_hfi_embedding_moment(self):
        scheme = scheme_from_config(cfg_for(scheme="hfi"), n_tasks=24)
        assert scheme.embedding_second_moment == pytest.approx(1.0 / 24)

    def test_recurrent_hfi_unit_moment(self):
        scheme = scheme_from_config(cfg_for(scheme="hfi", encoder="recurrent"), n_tasks=24)
        assert scheme.embedding_second_moment == 1.0

    def test_explicit_moment_overrides(self):
        cfg = cfg_for(scheme="hfi")
        cfg.init.embedding_second_moment = 0.5
        assert scheme_from_config(cfg, n_tasks=24).embedding_second_moment == 0.5

    def test_base_carried_for_hyperinit(self):
        scheme = scheme_from_config(cfg_for(scheme="bias_hyperinit"), n_tasks=24)
        assert scheme.base is not None
        assert scheme.base.kind == "normc"
        assert scheme.base.actor_head_gain == pytest.approx(math.sqrt(2.0))


class TestBuildModel:
    def test_reinit_same_seed_bitwise(self):
        cfg = cfg_for()
        m1, _ = build_model(cfg, 24, 3, 5, seed=11)
        m2, _ = build_model(cfg, 24, 3, 5, seed=11)
        for name, p in m1.params().items():
            assert np.array_equal(p.data, m2.params()[name].data), name

    def test_reinit_other_seed_differs(self):
        cfg = cfg_for()
        m1, _ = build_model(cfg, 24, 3, 5, seed=11)
        m2, _ = build_model(cfg, 24, 3, 5, seed=12)
        assert not np.array_equal(m1.hyper.head_b.data, m2.params()["hypernet/head_b"].data)

    def test_manifest_contents(self):
        cfg = cfg_for(scheme="hfi", encoder="recurrent")
        model, manifest = build_model(cfg, 24, 3, 5, seed=0)
        assert manifest["architecture"] == "hypernetwork"
        assert manifest["scheme"] == "hfi"
        assert manifest["e_dim"] == 10
        groups = {g["group"]: g for g in manifest["groups"]}
        assert "hypernet/head" in groups
        assert groups["hypernet/head"]["bias_rows"] == "zeroed"
        # encoder defaults follow kaiming-uniform with an orthogonal recurrent kernel
        assert groups["encoder"]["scheme"] == "kaiming_uniform+orthogonal_rnn"
        json.dumps(manifest)  # serializable

    def test_param_count_closed_form_hypernetwork(self):
        cfg = cfg_for()
        model, manifest = build_model(cfg, 24, 3, 5, seed=0)
        from hyperpolicy.layout import BaseNetSpec, layout_for

        spec = BaseNetSpec.from_size("XS", input_dim=3, action_dim=5)
        total_len = layout_for(spec).total_len
        assert manifest["param_count"] == total_len * 24 + total_len

    def test_param_count_standard(self):
        cfg = cfg_for(arch="standard")
        model, manifest = build_model(cfg, 24, 3, 5, seed=0)
        d = [3 + 24, 64, 64, 32]
        actor = sum(d[i] * d[i + 1] + d[i + 1] for i in range(3)) + d[3] * 5 + 5
        critic = sum(d[i] * d[i + 1] + d[i + 1] for i in range(3)) + d[3] * 1 + 1
        assert manifest["param_count"] == actor + critic

    def test_onehot_embedder_dim_is_task_count(self):
        model, manifest = build_model(cfg_for(), 24, 3, 5, seed=0)
        assert model.embedder.e_dim == 24
        assert manifest["e_dim"] == 24

    def test_film_bias_hyperinit_guard_on_hypernetwork(self):
        cfg = cfg_for(scheme="film_bias_hyperinit")
        with pytest.raises(ValueError):
            build_model(cfg, 24, 3, 5, seed=0)


class TestInitialPolicyContracts:
    def test_bias_hyperinit_uniform_across_tasks(self):
        model, _ = build_model(cfg_for(), 24, 3, 5, seed=3)
        obs = np.random.default_rng(0).uniform(0, 1, (24, 3))
        ctx = model.begin_rollout(np.arange(24))
        logits_a, _ = model.act(ctx, obs, None, None)
        # same state fed to every task gives identical action distributions
        same_obs = np.tile(obs[0], (24, 1))
        ctx2 = model.begin_rollout(np.arange(24))
        logits_b, _ = model.act(ctx2, same_obs, None, None)
        for i in range(1, 24):
            assert np.array_equal(logits_b.data[i], logits_b.data[0])

    def test_weight_hyperinit_tasks_differ(self):
        model, _ = build_model(cfg_for(scheme="weight_hyperinit"), 24, 3, 5, seed=3)
        same_obs = np.tile(np.asarray([0.5, 0.5, 0.0]), (24, 1))
        ctx = model.begin_rollout(np.arange(24))
        logits, _ = model.act(ctx, same_obs, None, None)
        assert not np.array_equal(logits.data[0], logits.data[1])


class TestRecomputeConsistency:
    @pytest.mark.parametrize("arch,scheme", [
        ("hypernetwork", "bias_hyperinit"),
        ("standard", "bias_hyperinit"),
        ("film", "film_bias_hyperinit"),
    ])
    def test_recompute_matches_stepwise(self, arch, scheme):
        cfg = cfg_for(arch=arch, scheme=scheme)
        model, _ = build_model(cfg, 6, 3, 5, seed=5)
        rng = np.random.default_rng(6)
        n_time, batch = 4, 6
        states = rng.uniform(0, 1, (n_time, batch, 3))
        actions = rng.integers(0, 5, (n_time, batch))
        task_ids = np.arange(6)

        lp, values_bt, ent = model.recompute(task_ids, states, actions)

        ctx = model.begin_rollout(task_ids)
        for t in range(n_time):
            logits_t, value_t = model.act(ctx, states[t], None, None)
            lp_t = ad.softmax_logprob(logits_t, actions[t])
            for b in range(batch):
                idx = b * n_time + t
                assert lp.data[idx] == pytest.approx(lp_t.data[b], abs=1e-10)
                assert values_bt.data[b, t] == pytest.approx(value_t.data[b], abs=1e-10)

    def test_recompute_gradients_flow_to_all_params(self):
        cfg = cfg_for()
        model, _ = build_model(cfg, 6, 3, 5, seed=7)
        rng = np.random.default_rng(8)
        states = rng.uniform(0, 1, (4, 6, 3))
        actions = rng.integers(0, 5, (4, 6))
        with tape():
            lp, values, ent = model.recompute(np.arange(6), states, actions)
            loss = ad.add(ad.tmean(lp), ad.tmean(values))
            backward(loss)
        for name, p in model.params().items():
            assert p.grad is not None, name
            assert np.any(p.grad != 0.0), name
