"""Figures written next to the CSV/JSON reports (non-interactive Agg backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path, metadata=None):
    fig.tight_layout()
    # dropping the Software tag keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None, **(metadata or {})})
    plt.close(fig)
    return path


def plot_training(reports, path, title="training", metadata=None):
    """Loss terms and cluster/outlier counts per epoch."""
    fig, (ax_loss, ax_k) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = [r.epoch for r in reports]
    for name in ("loss_total", "loss_global", "loss_local", "loss_distill"):
        ax_loss.plot(epochs, [getattr(r, name) for r in reports], label=name.removeprefix("loss_"))
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean loss")
    ax_loss.legend(fontsize=8)
    ax_k.plot(epochs, [r.num_clusters for r in reports], label="clusters")
    ax_k.plot(epochs, [r.num_outliers for r in reports], label="outliers")
    ax_k.set_xlabel("epoch")
    ax_k.legend(fontsize=8)
    fig.suptitle(title)
    return _save(fig, path, metadata)


def plot_cmc(report, path, baseline=None, metadata=None):
    """CMC curve at the reported ranks, with the mAP and random baseline in the title."""
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ranks = sorted(report.cmc)
    ax.plot(ranks, [report.cmc[k] for k in ranks], marker="o")
    ax.set_xticks(ranks)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("rank")
    ax.set_ylabel("matching rate")
    title = f"mAP {report.mAP:.3f}"
    if baseline is not None:
        title += f" (random {baseline:.3f})"
    ax.set_title(title)
    return _save(fig, path, metadata)


def plot_eps_sweep(rows, path, true_k=None, metadata=None):
    """Cluster count and pairwise F1 against DBSCAN eps."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    eps = [r["eps"] for r in rows]
    ax.plot(eps, [r["num_clusters"] for r in rows], marker="o", label="clusters")
    if true_k is not None:
        ax.axhline(true_k, ls="--", color="gray", label="identities")
    ax.set_xlabel("eps")
    ax.set_ylabel("clusters")
    ax2 = ax.twinx()
    ax2.plot(eps, [r["f1"] for r in rows], marker="s", color="C1", label="pair F1")
    ax2.set_ylim(0, 1.02)
    ax2.set_ylabel("pair F1")
    ax.legend(loc="upper left", fontsize=8)
    ax2.legend(loc="upper right", fontsize=8)
    return _save(fig, path, metadata)
