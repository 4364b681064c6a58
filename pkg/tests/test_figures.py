"""Figure rendering: each report figure writes a non-empty PNG."""

import json
import math

from mlocrisk.cli import main
from mlocrisk.experiments import (
    ClassifyConfig,
    LinregConfig,
    RiskCurveConfig,
    ToyConfig,
    run_classify,
    run_linreg,
    run_riskcurve,
    run_toy,
)
from mlocrisk.figures import (
    classify_error_figure,
    classify_hist_figure,
    diagnose_figure,
    linreg_figure,
    riskcurve_figure,
    toy_figure,
)


def _assert_png(path):
    assert path.exists() and path.stat().st_size > 0
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_toy_figure(tmp_path):
    table = run_toy(ToyConfig(eta_grid=(1.0, 4.0), iterations=50, trials=2, seed=0))
    _assert_png(toy_figure(table, tmp_path / "toy.png"))


def test_linreg_figure(tmp_path):
    cfg = LinregConfig(sigma_grid=(0.0, math.inf), noise_laws=("normal", "lognormal_centered"),
                       count=100, iterations=50, trials=2, seed=0)
    table = run_linreg(cfg)
    _assert_png(linreg_figure(table, table.meta, tmp_path / "linreg.png"))


def test_classify_figures(tmp_path):
    cfg = ClassifyConfig(count=150, epochs=2, trials=2, sigma_grid=(math.inf,),
                         separation=8.0, seed=0)
    table = run_classify(cfg)
    _assert_png(classify_error_figure(table, tmp_path / "err.png"))
    _assert_png(classify_hist_figure(table, tmp_path / "hist.png"))


def test_riskcurve_figure(tmp_path):
    classify = ClassifyConfig(count=150, epochs=1, trials=2, sigma_grid=(2.0,),
                              separation=8.0, seed=0)
    cfg = RiskCurveConfig(classify=classify, eval_sigmas=(2.0, math.inf))
    table = run_riskcurve(cfg)
    _assert_png(riskcurve_figure(table, tmp_path / "curve.png"))


def test_diagnose_figure_via_cli(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"count": 80, "n": 40, "trials": 2,
                                    "kappa_sq": 8.0, "probe_triples": 100, "seed": 0}))
    out = tmp_path / "out"
    assert main(["diagnose", "--config", str(cfg_path), "--out", str(out)]) == 0
    _assert_png(out / "diagnose.png")


def test_experiment_cli_figures(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "count": 150, "epochs": 1, "trials": 2, "sigma_grid": [2.0],
        "eval_sigmas": [2.0, "inf"], "separation": 8.0, "seed": 0,
    }))
    out = tmp_path / "out"
    assert main(["riskcurve", "--config", str(cfg_path), "--out", str(out)]) == 0
    _assert_png(out / "riskcurve.png")
