import json

import numpy as np
import pytest

from betaplane import checkpoint
from betaplane.cli import main
from betaplane.dynamics import FlowParams, FlowState
from betaplane.harness import (
    DIAG_COLUMNS,
    SWEEP_COLUMNS,
    ConfigError,
    RunConfig,
    SweepConfig,
    parse_config,
    regime_label,
    run_sweep,
    simulate,
    verify_suite,
)
from betaplane.limit1d import ZonalField1D, heat_steady_state
from betaplane.spectral import l2_norm, make_lattice, random_field
from betaplane.tangent import TRACE_COLUMNS

SMALL = """
[spectral]
nx = 16
ny = 16

[dynamics]
epsilon = {eps}
grashof = 2
forcing = {forcing}
t_burnin_min = 4
t_burnin_max = 8
burnin_window = 2
t_horizon = {horizon}
observer_stride = 5
{dynamics_extra}
[tangent]
n_tangent = 3
t_tangent = 2

[limit]
steady_t_max = 200
"""


def write_config(tmp_path, eps=0.1, forcing="mixed", horizon=10, dynamics_extra=""):
    path = tmp_path / "run.ini"
    path.write_text(SMALL.format(eps=eps, forcing=forcing, horizon=horizon, dynamics_extra=dynamics_extra))
    return path


def test_parse_defaults():
    cfg, sweep = parse_config("[dynamics]\nepsilon = 0.01\ngrashof = 2\n")
    assert sweep is None
    assert (cfg.nx, cfg.ny, cfg.forcing, cfg.dt_max, cfg.n_tangent) == (32, 32, "mixed", 1e-2, 4)


@pytest.mark.parametrize("text, field", [
    ("[dynamics]\ngrashof = 2\n", "epsilon"),
    ("[dynamics]\nepsilon = 0.1\n", "grashof"),
    ("[dynamics]\nepsilon = -1\ngrashof = 2\n", "epsilon"),
    ("[dynamics]\nepsilon = 0.1\ngrashof = 0.5\n", "grashof"),
    ("[dynamics]\nepsilon = abc\ngrashof = 2\n", "epsilon"),
    ("[dynamics]\nepsilon = 0.1\ngrashof = 2\nforcing = wild\n", "forcing"),
    ("[dynamics]\nepsilon = 0.1\ngrashof = 2\n[spectral]\nnx = 7\n", "nx"),
    ("[dynamics]\nepsilon = 0.1\ngrashof = 2\n[spectral]\nnx = 8\nny = 8\n[tangent]\nn_tangent = 99\n",
     "n_tangent"),
    ("[dynamics]\nepsilon = 0.1\ngrashof = 2\nviscosity = 3\n", "viscosity"),
    ("[physics]\nepsilon = 0.1\n", "physics"),
    ("[dynamics]\nepsilon = 0.1\ngrashof = 2\n[sweep]\nepsilons = 0.1, 0.01, 0.1\n", "epsilons"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field


def test_sweep_config():
    cfg, sweep = parse_config("[dynamics]\ngrashof = 2\n[sweep]\nepsilons = 0.1 0.01 0.001\nworkers = 2\n")
    assert cfg.epsilon == 0.1
    assert sweep.epsilons == (0.1, 0.01, 0.001) and sweep.workers == 2
    assert [p.epsilon for p in sweep.points()] == [0.1, 0.01, 0.001]


def test_digest_ignores_output_dir():
    a = RunConfig(0.1, 2.0)
    assert a.digest() == RunConfig(0.1, 2.0, output_dir="elsewhere").digest()
    assert a.digest() != RunConfig(0.1, 2.0, seed=1).digest()


@pytest.mark.parametrize("eps, label", [(1e-3, "collapse"), (0.1, "regime1"), (0.133, "regime2"), (0.2, "outside")])
def test_regime_labels(eps, label):
    assert regime_label(eps, 2.0) == label


def test_regime_labels_are_ordered():
    order = ["collapse", "regime1", "regime2", "outside"]
    for g in (1.0, 2.0, 5.0):
        ranks = [order.index(regime_label(e, g)) for e in np.logspace(-6, 0, 400)]
        assert ranks == sorted(ranks)


def test_cli_missing_epsilon(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[dynamics]\ngrashof = 2\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "epsilon" in capsys.readouterr().err


def test_cli_missing_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.ini")]) == 3


def test_simulate_is_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for name in ("diagnostics.csv", "checks.csv", "report.txt", "state.bpln"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "diagnostics.csv").read_text().splitlines()[0]
    assert header == ",".join(DIAG_COLUMNS)


def test_simulate_checkpoints_at_stride(tmp_path):
    cfg = write_config(tmp_path, dynamics_extra="checkpoint_stride = 250")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert len(list((tmp_path / "o").glob("checkpoint_*.bpln"))) == 4


def test_zonal_preset_reaches_heat_steady_state():
    cfg = RunConfig(0.1, 2.0, nx=16, ny=16, forcing="zonal", t_burnin_min=40, t_burnin_max=60,
                    burnin_window=5, t_horizon=10)
    res = simulate(cfg)
    want = heat_steady_state(ZonalField1D.from_2d(cfg.make_forcing().f)).to_2d()
    assert l2_norm(res.state.omega - want) < 1e-9


def test_checkpoint_round_trip(tmp_path):
    lat = make_lattice(16, 16)
    state = FlowState(random_field(lat, 0, norm=3.0), 12.5, FlowParams(0.01, 2.0))
    path = checkpoint.save_checkpoint(tmp_path / "s.bpln", state)
    back = checkpoint.load_checkpoint(path)
    assert back.t == 12.5 and back.params == state.params
    assert back.lattice == lat
    np.testing.assert_allclose(back.omega.coeffs, state.omega.coeffs, rtol=0,
                               atol=1e-7 * np.max(np.abs(state.omega.coeffs)))
    assert path.stat().st_size == checkpoint.HEADER.size + 16 * 9 * 8


@pytest.mark.parametrize("mangle, match", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:10], "shorter"),
    (lambda b: b[:-8], "expected"),
    (lambda b: b[:4] + (7).to_bytes(2, "little") + b[6:], "version"),
])
def test_checkpoint_rejects_bad_files(tmp_path, mangle, match):
    lat = make_lattice(16, 16)
    data = checkpoint.encode(FlowState(random_field(lat, 0), 0.0, FlowParams(0.1, 2.0)))
    with pytest.raises(checkpoint.CheckpointError, match=match):
        checkpoint.decode(mangle(data))


def test_cli_tangent_with_bad_checkpoint(tmp_path, capsys):
    cfg = write_config(tmp_path)
    bad = tmp_path / "bad.bpln"
    bad.write_bytes(b"NOPE" + bytes(100))
    assert main(["tangent", "--config", str(cfg), "--checkpoint", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert "magic" in capsys.readouterr().err


def test_cli_tangent_from_checkpoint(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 0
    out = tmp_path / "tan"
    code = main(["tangent", "--config", str(cfg), "--checkpoint", str(tmp_path / "sim" / "state.bpln"),
                 "--out", str(out)])
    assert code == 0
    rows = (out / "trace.csv").read_text().splitlines()
    assert rows[0] == ",".join(TRACE_COLUMNS)
    summary = json.loads((out / "tangent_summary.json").read_text())
    assert summary["split_residual_max"] < 1e-8
    assert summary["exponents"] == sorted(summary["exponents"], reverse=True)
    assert "n_star" in capsys.readouterr().out


def test_cli_tangent_pure_heat(tmp_path):
    cfg = write_config(tmp_path, forcing="zero", dynamics_extra="init_amplitude = 0")
    assert main(["tangent", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "tangent_summary.json").read_text())
    np.testing.assert_allclose(summary["exponents"], [-1, -1, -1], atol=1e-10)
    assert summary["n_star"] == 1


def test_cli_tangent_checkpoint_parameter_mismatch(tmp_path):
    cfg = write_config(tmp_path)
    lat = make_lattice(16, 16)
    path = checkpoint.save_checkpoint(tmp_path / "s.bpln",
                                      FlowState(random_field(lat, 0), 0.0, FlowParams(0.5, 2.0)))
    assert main(["tangent", "--config", str(cfg), "--checkpoint", str(path)]) == 2


def test_cli_limit(tmp_path, capsys):
    cfg = write_config(tmp_path, eps=0.01)
    assert main(["limit", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "limit.csv").exists()
    assert "h1_distance" in capsys.readouterr().out


def test_sweep_requires_section(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def _sweep_config(eps=(0.1, 0.03, 0.01)):
    base = RunConfig(0.1, 2.0, nx=16, ny=16, t_burnin_min=4, t_burnin_max=8, burnin_window=2,
                     t_horizon=4, t_tangent=2, n_tangent=2, steady_t_max=50)
    return SweepConfig(base, eps, (2.0,))


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_sweep_resume_and_determinism(tmp_path):
    rows = run_sweep(_sweep_config(), tmp_path / "s")
    assert [r["epsilon"] for r in rows] == [0.1, 0.03, 0.01]
    assert not any(r["error"] for r in rows)
    header = (tmp_path / "s" / "sweep.csv").read_text().splitlines()[0]
    assert header == ",".join(SWEEP_COLUMNS)
    first = (tmp_path / "s" / "sweep.csv").read_bytes()

    # a resumed sweep reuses rows on disk: tamper with one and watch it survive
    row_files = sorted((tmp_path / "s" / "rows").glob("*.json"))
    assert len(row_files) == 3
    row = json.loads(row_files[0].read_text())
    row["regime"] = "tampered"
    row_files[0].write_text(json.dumps(row, sort_keys=True))
    resumed = run_sweep(_sweep_config(), tmp_path / "s", resume=True)
    assert "tampered" in [r["regime"] for r in resumed]

    run_sweep(_sweep_config(), tmp_path / "t", workers=2)
    assert (tmp_path / "t" / "sweep.csv").read_bytes() == first


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_sweep_isolates_failing_points(tmp_path, monkeypatch):
    import betaplane.harness as h

    real = h.simulate

    def flaky(cfg, out_dir=None):
        if cfg.epsilon == 0.03:
            raise RuntimeError("boom")
        return real(cfg, out_dir)

    monkeypatch.setattr(h, "simulate", flaky)
    rows = run_sweep(_sweep_config(), tmp_path)
    assert [bool(r["error"]) for r in rows] == [False, True, False]
    assert "boom" in rows[1]["error"]


def test_verify_suite(tmp_path, capsys):
    results = verify_suite()
    assert len(results) == 14 and all(r.passed for r in results)
    assert main(["verify", "--out", str(tmp_path / "a")]) == 0
    assert main(["verify", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "verify.csv").read_bytes() == (tmp_path / "b" / "verify.csv").read_bytes()
    assert "PASS coriolis_skewness" in capsys.readouterr().out
