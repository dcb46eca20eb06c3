import numpy as np
import pytest

from osc.audit import AuditFailure, run_ablation_audit
from osc.engine import AblationFlags
from osc.errors import ConfigurationError
from osc.model import ModelBundle
from osc.policy import PolicyNetConfig
from osc.runcfg import RunConfig


@pytest.fixture(scope="module")
def setup():
    cfg = RunConfig()
    cfg.policy = PolicyNetConfig(enc_layers=1, enc_heads=2, model_dim=32, ff_dim=48)
    cfg.episode.agents = 3
    cfg.episode.n_round = 2
    cfg.reward.tau_conflict = 3.0
    cfg.reward.calibration_episodes = 5
    bundle = ModelBundle.build(9, policy_cfg=cfg.policy)
    return cfg, bundle


def test_all_thirteen_flags_have_audits(setup):
    assert len(AblationFlags.names()) == 13


@pytest.mark.parametrize("flag", AblationFlags.names())
def test_flag_signature_audit(setup, flag):
    cfg, bundle = setup
    report = run_ablation_audit(flag, cfg, bundle, episodes=4, seed=77)
    assert report["passed"] is True
    assert report["steps"] == 4 * cfg.episode.agents * cfg.episode.n_round


def test_plain_run_fails_no_ckm_audit(setup):
    # the audit actually discriminates: an unablated run must not pass
    cfg, bundle = setup
    from osc.audit import audit_no_ckm
    from osc.drivers import evaluate

    traces = evaluate(cfg, bundle, 2, seed=77, mode="stochastic")
    with pytest.raises(AuditFailure):
        audit_no_ckm(traces)


def test_plain_run_fails_no_policy_audit(setup):
    cfg, bundle = setup
    from osc.audit import audit_no_policy
    from osc.drivers import evaluate

    traces = evaluate(cfg, bundle, 2, seed=77, mode="stochastic")
    with pytest.raises(AuditFailure):
        audit_no_policy(traces)


def test_contradictory_flag_combinations_rejected():
    with pytest.raises(ConfigurationError):
        AblationFlags(gap_l2=True, no_gap=True).validate()
    with pytest.raises(ConfigurationError):
        AblationFlags(gap_l2=True, gap_mlp=True).validate()
    with pytest.raises(ConfigurationError):
        AblationFlags(update_avg=True, update_static=True).validate()
    with pytest.raises(ConfigurationError):
        AblationFlags(no_ckm=True, update_avg=True).validate()
    with pytest.raises(ConfigurationError):
        AblationFlags(ckm_ling_only=True, ckm_reas_only=True).validate()
    with pytest.raises(ConfigurationError):
        AblationFlags(no_policy=True, fixed_objective=True).validate()


def test_flag_parsing():
    flags = AblationFlags.from_names(["no_ckm", "no_style"])
    assert flags.no_ckm and flags.no_style and not flags.no_gap
    assert flags.active() == ["no_ckm", "no_style"]
    with pytest.raises(ConfigurationError):
        AblationFlags.from_names(["made_up_flag"])


def test_profile_masks():
    ling = AblationFlags(ckm_ling_only=True).profile_mask()
    reas = AblationFlags(ckm_reas_only=True).profile_mask()
    np.testing.assert_array_equal(ling, [1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0])
    np.testing.assert_array_equal(reas, [0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1])
    assert AblationFlags().profile_mask() is None


def test_gap_variant_selection():
    assert AblationFlags().gap_variant == "learned"
    assert AblationFlags(no_gap=True).gap_variant == "raw_diff"
    assert AblationFlags(gap_l2=True).gap_variant == "l2"
    assert AblationFlags(gap_mlp=True).gap_variant == "mlp_only"
