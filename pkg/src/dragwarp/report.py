"""Schedule reporting: delimited tables and rendered figures."""

from __future__ import annotations

import csv
import io

from .sampler import SamplerConfig, build_schedule, eta_at


def schedule_rows(config: SamplerConfig) -> list[dict]:
    """One row per step: level, alpha_bar, and the eta the loop would use."""
    schedule = build_schedule(config.total_steps, config.beta_start, config.beta_end)
    n = config.effective_steps
    rows = [{"t": 0, "alpha_bar": schedule.alpha_bar[0], "eta": ""}]
    for t in range(1, config.total_steps + 1):
        iteration = n - t + 1  # countdown position within the effective loop
        active = 1 <= iteration <= n
        rows.append({
            "t": t,
            "alpha_bar": schedule.alpha_bar[t],
            "eta": eta_at(iteration / n, config.eta) if active and n > 0 else "",
        })
    return rows


def schedule_csv(config: SamplerConfig) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["t", "alpha_bar", "eta"])
    writer.writeheader()
    for row in schedule_rows(config):
        writer.writerow(row)
    return buf.getvalue()


def schedule_text(config: SamplerConfig) -> str:
    lines = [f"{'t':>4}  {'alpha_bar':>12}  {'eta':>6}"]
    for row in schedule_rows(config):
        eta = f"{row['eta']:.4f}" if row["eta"] != "" else "-"
        lines.append(f"{row['t']:>4}  {row['alpha_bar']:>12.8f}  {eta:>6}")
    return "\n".join(lines)


def render_schedule_figure(config: SamplerConfig, path: str) -> None:
    """Plot alpha_bar and the eta ramp side by side into an image file."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = schedule_rows(config)
    ts = [r["t"] for r in rows]
    abars = [r["alpha_bar"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(ts, abars, marker="o", ms=3)
    ax1.set_xlabel("step level t")
    ax1.set_ylabel("cumulative alpha")
    ax1.set_title("noise schedule")

    n = config.effective_steps
    if n > 0:
        progress = [i / n for i in range(1, n + 1)]
        etas = [eta_at(p, config.eta) for p in progress]
        ax2.plot(progress, etas, marker="o", ms=3)
    ax2.set_xlabel("loop progress")
    ax2.set_ylabel("eta")
    ax2.set_ylim(0, 1)
    ax2.set_title("noise-scale ramp")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
