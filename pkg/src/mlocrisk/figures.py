"""Matplotlib renderings of experiment outputs, written next to the CSVs.

Figures are display-only companions to the metric tables; nothing reads
them back.  All use the Agg backend so rendering works headless.
"""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .seeding import derive_rng

_DPI = 150


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def toy_figure(table, path):
    """Averaged h trajectories per eta, with the mean-variance minimizers."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    rows = table.rows("trajectories")
    etas = sorted({r["eta"] for r in rows})
    cmap = plt.get_cmap("viridis")
    for i, eta in enumerate(etas):
        steps = [r["step"] for r in rows if r["eta"] == eta]
        means = [r["mean_h"] for r in rows if r["eta"] == eta]
        ax.plot(steps, means, color=cmap(i / max(1, len(etas) - 1)),
                label=f"$\\eta = {eta:g}$")
    for ref in table.rows("reference"):
        ax.axhline(ref["h_star_mean_variance"], color="gray", lw=0.5, ls=":")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean $h_t$")
    ax.set_title("Mixture weight trajectories by deviation weight")
    ax.legend(fontsize=8, ncol=2)
    return _save(fig, path)


def linreg_figure(table, meta, path):
    """Learned lines per sigma against the generating line, one panel per
    noise law, plus a histogram of intercept-plus-noise draws."""
    laws = list(dict.fromkeys(r["law"] for r in table.rows("lines")))
    fig, axes = plt.subplots(2, len(laws), figsize=(5.5 * len(laws), 7),
                             squeeze=False)
    xs = np.linspace(0.0, 1.0, 50)
    cmap = plt.get_cmap("viridis")
    for j, law in enumerate(laws):
        ax = axes[0][j]
        rows = [r for r in table.rows("lines") if r["law"] == law]
        for i, r in enumerate(rows):
            ax.plot(xs, r["w0_mean"] + r["w1_mean"] * xs,
                    color=cmap(i / max(1, len(rows) - 1)),
                    label=f"$\\sigma = {r['sigma']}$")
        ax.plot(xs, meta["w0"] + meta["w1"] * xs, "k--", label="true")
        ax.set_title(f"{law} noise")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.legend(fontsize=8)
        hx = axes[1][j]
        rng = derive_rng(meta["seed"], "figure-noise", j)
        s = meta["noise_scale"]
        if law == "normal":
            eps = s * rng.standard_normal(20000)
        else:
            eps = np.exp(s * rng.standard_normal(20000)) - math.exp(0.5 * s * s)
        hx.hist(meta["w0"] + eps, bins=80, color="lightgray", edgecolor="gray")
        hx.set_xlabel("$w_0 + \\epsilon$")
        hx.set_ylabel("count")
    return _save(fig, path)


def classify_error_figure(table, path):
    """Mean test zero-one error per epoch for each feedback setting."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    rows = table.rows("test_error_mean")
    settings = list(dict.fromkeys(r["setting"] for r in rows))
    cmap = plt.get_cmap("viridis")
    for i, setting in enumerate(settings):
        sub = [r for r in rows if r["setting"] == setting]
        style = dict(color="black", ls="--") if setting == "off" else dict(
            color=cmap(i / max(1, len(settings) - 1)))
        ax.plot([r["epoch"] for r in sub], [r["zero_one_mean"] for r in sub],
                label=setting, **style)
    ax.set_xlabel("epoch")
    ax.set_ylabel("test zero-one error")
    ax.legend(fontsize=8, title="setting")
    return _save(fig, path)


def classify_hist_figure(table, path, trial=0):
    """Final-epoch test loss histograms for one trial, one panel per setting."""
    rows = [r for r in table.rows("histograms") if r["trial"] == trial]
    settings = list(dict.fromkeys(r["setting"] for r in rows))
    fig, axes = plt.subplots(1, len(settings), figsize=(2.6 * len(settings), 3),
                             sharey=True, squeeze=False)
    for ax, setting in zip(axes[0], settings):
        sub = [r for r in rows if r["setting"] == setting]
        lefts = [r["left"] for r in sub]
        widths = [r["right"] - r["left"] for r in sub]
        ax.bar(lefts, [r["count"] for r in sub], width=widths, align="edge",
               color="steelblue")
        ax.set_title(setting, fontsize=9)
        ax.set_xlabel("test loss")
    axes[0][0].set_ylabel("count")
    return _save(fig, path)


def riskcurve_figure(table, path):
    """Mean empirical risk by training setting, one panel per eval sigma."""
    rows = table.rows("riskcurve_mean")
    eval_sigmas = list(dict.fromkeys(r["eval_sigma"] for r in rows))
    settings = list(dict.fromkeys(r["setting"] for r in rows))
    fig, axes = plt.subplots(len(eval_sigmas), 1,
                             figsize=(6, 2.2 * len(eval_sigmas)), squeeze=False)
    xs = np.arange(len(settings))
    for ax, es in zip(axes[:, 0], eval_sigmas):
        sub = {r["setting"]: r for r in rows if r["eval_sigma"] == es}
        means = [sub[s]["risk_mean"] for s in settings]
        ses = [sub[s]["risk_se"] for s in settings]
        ax.errorbar(xs, means, yerr=ses, fmt="o-", capsize=3)
        ax.set_xticks(xs, settings)
        ax.set_ylabel(f"risk @ $\\sigma$={es}", fontsize=8)
    axes[-1][0].set_xlabel("training setting")
    return _save(fig, path)


def diagnose_figure(report_dict, path):
    """Per-trial squared envelope gradient norms against the bound."""
    fig, ax = plt.subplots(figsize=(7, 4))
    vals = report_dict["per_trial"]
    ax.plot(vals, ".", ms=4, alpha=0.6, label="per-trial $\\|G_{env}\\|^2$")
    ax.axhline(report_dict["env_grad_norm_sq_mean"], color="C1",
               label="Monte-Carlo mean")
    ax.axhline(report_dict["theorem_bound"], color="C3", ls="--", label="bound")
    ax.set_xlabel("trial")
    ax.set_ylabel("squared envelope gradient norm")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    return _save(fig, path)
