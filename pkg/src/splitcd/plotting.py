"""Log-log convergence figures rendered with matplotlib."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import ErrorReport  # noqa: E402


def render_report(report: ErrorReport, path) -> Path:
    """Draw both error curves against tau with a slope-one guide.

    Infinite entries (diverged runs) are left out of the curves.

    Parameters
    ----------
    report : ErrorReport
        Sweep results.
    path : str or Path
        Output image; the format follows the suffix.

    Returns
    -------
    Path
        The written file.
    """
    path = Path(path)
    taus = np.asarray(report.taus, dtype=float)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for errs, colour, label in (
        (report.err_classical, "tab:red", "classical Lie"),
        (report.err_adapted, "tab:purple", "adapted Lie"),
    ):
        e = np.asarray(errs, dtype=float)
        ok = np.isfinite(e) & (e > 0)
        ax.loglog(taus[ok], e[ok], "o-", color=colour, label=label)
    finite = [e for e in report.err_classical + report.err_adapted if np.isfinite(e) and e > 0]
    if finite:
        anchor = max(finite) / taus.max()
        ax.loglog(taus, anchor * taus, ":", color="black", label="slope one")
    ax.set_xlabel("time step size")
    ax.set_ylabel("discrete L2 error at T")
    ax.set_title(report.experiment)
    ax.legend(loc="upper left")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
