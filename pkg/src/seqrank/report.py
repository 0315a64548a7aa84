"""Report writers: aligned key-value text, TSV tables, and figures.

Every figure the CLI renders gets a TSV twin carrying the same numbers, so
downstream tooling never has to scrape pixels.  Floats are written with
``repr`` (shortest round-trip form) to keep reports diffable across runs.
"""
from __future__ import annotations

from .metrics import MetricsReport


def _cell(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_kv(pairs) -> str:
    """Align `key  value` pairs into a fixed-width text block."""
    pairs = [(str(k), _cell(v)) for k, v in pairs]
    width = max((len(k) for k, _ in pairs), default=0)
    return "".join(f"{k.ljust(width)}  {v}\n" for k, v in pairs)


def write_kv(path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_kv(pairs))


def write_table(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(c) for c in row) + "\n")


def metrics_pairs(report: MetricsReport, prefix: str = ""):
    """Flatten a MetricsReport (groups included) for the kv writer."""
    pairs = [
        (f"{prefix}users", report.users),
        (f"{prefix}sessions", report.sessions),
        (f"{prefix}session_auc", report.session_auc),
        (f"{prefix}session_roc", report.session_roc),
        (f"{prefix}ndcg", report.ndcg),
        (f"{prefix}skipped_auc", report.skipped_auc),
        (f"{prefix}skipped_ndcg", report.skipped_ndcg),
    ]
    for name, group in report.groups.items():
        pairs += [
            (f"{prefix}{name}.users", group.users),
            (f"{prefix}{name}.sessions", group.sessions),
            (f"{prefix}{name}.session_auc", group.session_auc),
            (f"{prefix}{name}.session_roc", group.session_roc),
            (f"{prefix}{name}.ndcg", group.ndcg),
        ]
    return pairs


# ---------------------------------------------------------------------------
# figures (Agg only; each mirrors a TSV written by the caller)
# ---------------------------------------------------------------------------

def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_epoch_curves(history, path) -> None:
    """Training loss and validation session AUC across epochs."""
    plt = _plt()
    epochs = [log.epoch for log in history]
    aucs = [log.report.session_auc for log in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, aucs, marker="o", color="tab:blue", label="validation session AUC")
    ax.set_xlabel("epoch")
    ax.set_ylabel("session AUC", color="tab:blue")
    trained = [(log.epoch, log.mean_loss) for log in history
               if log.mean_loss is not None]
    if trained:
        twin = ax.twinx()
        twin.plot(*zip(*trained), marker="s", color="tab:red", label="mean loss")
        twin.set_ylabel("mean training loss", color="tab:red")
    ax.set_title("training progress")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sweep_curve(rows, path) -> None:
    """Session AUC (and NDCG when defined) as a function of mu."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    mus = [r.mu for r in rows]
    ax.plot(mus, [r.session_auc for r in rows], marker="o",
            label="session AUC")
    if all(r.ndcg is not None for r in rows):
        ax.plot(mus, [r.ndcg for r in rows], marker="s", label="NDCG")
    ax.set_xlabel("mu (weight on the policy-gradient term)")
    ax.set_ylabel("validation metric")
    ax.set_title("objective mixing sweep")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ladder_bars(rows, path) -> None:
    """Best validation session AUC per model variant."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    names = [r.variant for r in rows]
    aucs = [r.session_auc for r in rows]
    bars = ax.bar(names, aucs, color="tab:blue")
    ax.bar_label(bars, fmt="%.4f")
    ax.set_ylabel("validation session AUC")
    ax.set_title("model ladder")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
