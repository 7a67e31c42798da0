"""Optional SVG convergence plots (needs matplotlib, the ``plot`` extra)."""

import numpy as np


def available():
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def plot_convergence(result, path, title=None):
    """Entries of ``P_i``, ``K_{i+1}``, ``Q_i`` and the two stop measures per iteration."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    hist = result.history
    it = np.array([h.index for h in hist])
    n = hist[0].Q.shape[0]
    m = hist[0].K_next.shape[0]
    iu, ju = np.triu_indices(n)
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for a, b in zip(iu, ju):
        axes[0, 0].plot(it, [h.P[a, b] for h in hist], label=f"P{a + 1}{b + 1}")
        axes[1, 0].plot(it, [h.Q[a, b] for h in hist], label=f"Q{a + 1}{b + 1}")
    for a in range(m):
        for b in range(n):
            axes[0, 1].plot(it, [h.K_next[a, b] for h in hist], label=f"K{a + 1}{b + 1}")
            axes[0, 1].axhline(result.K_target[a, b], color="k", lw=0.6, ls=":")
    axes[1, 1].semilogy(it, [h.gain_gap for h in hist], label="|K - K_T|")
    axes[1, 1].semilogy(it, [h.q_step for h in hist], label="|Q_next - Q|")
    titles = ("value matrix P", "gain K", "state weight Q", "stop measures")
    for ax, t in zip(axes.ravel(), titles):
        ax.set_title(t)
        ax.set_xlabel("iteration")
        ax.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
