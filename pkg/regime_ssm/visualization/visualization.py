import logging
from typing import Optional, Sequence, Tuple

import matplotlib.pyplot as plt
import numpy as np

from ..analysis.alerting import ThresholdSweep
from ..analysis.harness import DetectionResult
from ..core.model import STAGE_LABELS
from ..utils.utils import show_plot

log = logging.getLogger(__name__)


class RegimeVisualizer:
    """
    Figures for regime posteriors, transition matrices and KL threshold sweeps
    with consistent styling.
    """

    def __init__(self, style: str = "default", figsize: Tuple[int, int] = (12, 6)):
        """
        Initialize the RegimeVisualizer.

        Args:
            style: Color scheme name
            figsize: Default figure size
        """
        self.style = style
        self.figsize = figsize
        self.color_schemes = {
            "default": {
                "regimes": ["#2ecc71", "#f1c40f", "#e67e22", "#e74c3c"],
                "truth": "black",
                "alerts": "red",
                "heatmap": "Blues",
                "benign": "tab:blue",
                "transition": "tab:red",
            },
            "modern": {
                "regimes": ["#3498db", "#9b59b6", "#f39c12", "#c0392b"],
                "truth": "#2c3e50",
                "alerts": "#e74c3c",
                "heatmap": "viridis",
                "benign": "#3498db",
                "transition": "#e74c3c",
            },
            "dark": {
                "regimes": ["#27ae60", "#f1c40f", "#e67e22", "#e74c3c"],
                "truth": "#ecf0f1",
                "alerts": "#e67e22",
                "heatmap": "magma",
                "benign": "#3498db",
                "transition": "#e67e22",
            },
        }
        self.current_colors = (
            self.color_schemes[style]
            if style in self.color_schemes
            else self.color_schemes["default"]
        )

    def set_style(self, style: str):
        """Set the visualization style."""
        if style in self.color_schemes:
            self.style = style
            self.current_colors = self.color_schemes[style]
        else:
            log.warning(
                "Unknown style '%s'. Available styles: %s",
                style,
                list(self.color_schemes.keys()),
            )

    def _regime_colors(self, K: int):
        colors = list(self.current_colors["regimes"])
        if K > len(colors):
            cmap = plt.get_cmap("tab10")
            colors += [cmap(i) for i in range(len(colors), K)]
        return colors[:K]

    def plot_regime_posteriors(
        self,
        detection: DetectionResult,
        truth: Optional[Sequence[int]] = None,
        title: Optional[str] = None,
        figsize: Optional[Tuple[int, int]] = None,
    ) -> Optional[str]:
        """
        Stacked regime posteriors over time with the true regime track and
        alert markers. The single-regime baseline is drawn as its anomaly
        score against the alert threshold instead.

        Args:
            detection: result of a detection run
            truth: true regime per window (optional)
            title: figure title

        Returns:
            Path of the saved figure, if a run output directory is set
        """
        if not detection.beliefs:
            log.warning("No beliefs to plot")
            return None

        times = detection.timestamps()
        alerts = detection.alert_flags()
        figsize = figsize or self.figsize
        fig, (ax, ax_truth) = plt.subplots(
            2,
            1,
            figsize=figsize,
            sharex=True,
            gridspec_kw={"height_ratios": [4, 1]},
        )

        gamma = detection.gamma_matrix()
        if gamma is not None:
            ax.stackplot(
                times,
                gamma.T,
                labels=detection.labels,
                colors=self._regime_colors(gamma.shape[1]),
                alpha=0.85,
            )
            ax.set_ylim(0, 1.05)
            ax.set_ylabel("P(regime)")
            marker_y = 1.02
        else:
            scores = np.array([b.score for b in detection.beliefs])
            ax.plot(times, scores, color=self.current_colors["benign"], label="score")
            if detection.tau_kl is not None and np.isfinite(detection.tau_kl):
                ax.axhline(
                    detection.tau_kl,
                    color=self.current_colors["alerts"],
                    linestyle="--",
                    label="threshold",
                )
            ax.set_ylabel("Mahalanobis score")
            marker_y = float(np.max(scores)) if scores.size else 1.0

        if np.any(alerts):
            ax.scatter(
                times[alerts],
                np.full(int(alerts.sum()), marker_y),
                marker="v",
                s=20,
                color=self.current_colors["alerts"],
                label="alert",
                zorder=5,
            )
        ax.legend(loc="upper left", bbox_to_anchor=(1.01, 1))
        ax.set_title(
            title or f"Regime posteriors ({detection.variant.value})",
            fontsize=14,
            fontweight="bold",
        )
        ax.grid(True, alpha=0.3)

        if truth is not None:
            truth = np.asarray(truth, dtype=int)
            ax_truth.step(
                times[: truth.size],
                truth[: times.size],
                where="post",
                color=self.current_colors["truth"],
            )
            ax_truth.set_yticks(range(len(detection.labels)))
            ax_truth.set_yticklabels(detection.labels, fontsize=7)
        ax_truth.set_ylabel("truth")
        ax_truth.set_xlabel("time (s)")
        ax_truth.grid(True, alpha=0.3)

        plt.tight_layout()
        return show_plot(
            title=title or f"Regime_Posteriors_{detection.variant.value}",
            description="Regime posterior over time with the true regime track and alert markers",
        )

    def plot_transition_heatmap(
        self,
        transition,
        labels: Sequence[str] = STAGE_LABELS,
        title: str = "Transition matrix",
        figsize: Optional[Tuple[int, int]] = None,
    ) -> Optional[str]:
        """
        Annotated heatmap of a row-stochastic transition matrix.

        Args:
            transition: K x K matrix (or TransitionMatrix)
            labels: regime names for both axes
            title: figure title
        """
        pi = np.asarray(transition, dtype=float)
        K = pi.shape[0]
        labels = list(labels)[:K] if len(labels) >= K else [str(i) for i in range(K)]

        fig, ax = plt.subplots(1, 1, figsize=figsize or (7, 6))
        image = ax.imshow(pi, cmap=self.current_colors["heatmap"], vmin=0.0, vmax=1.0)
        for i in range(K):
            for j in range(K):
                ax.text(
                    j,
                    i,
                    f"{pi[i, j]:.2f}",
                    ha="center",
                    va="center",
                    color="white" if pi[i, j] > 0.5 else "black",
                    fontsize=10,
                )
        ax.set_xticks(range(K))
        ax.set_yticks(range(K))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_yticklabels(labels)
        ax.set_xlabel("to")
        ax.set_ylabel("from")
        ax.set_title(title, fontsize=14, fontweight="bold")
        fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)

        plt.tight_layout()
        return show_plot(
            title=title.replace(" ", "_"),
            description="Regime transition probabilities, rows sum to one",
        )

    def plot_kl_threshold_sweep(
        self,
        sweep: ThresholdSweep,
        title: str = "KL threshold sweep",
        figsize: Optional[Tuple[int, int]] = None,
    ) -> Optional[str]:
        """
        Benign and transition trigger rates against the KL threshold, with
        the separating range shaded.
        """
        fig, ax = plt.subplots(1, 1, figsize=figsize or (8, 5))
        ax.step(
            sweep.thresholds,
            sweep.benign_rate,
            where="post",
            color=self.current_colors["benign"],
            label="benign events",
        )
        ax.step(
            sweep.thresholds,
            sweep.transition_rate,
            where="post",
            color=self.current_colors["transition"],
            label="regime transitions",
        )
        ax.axhline(sweep.max_benign_rate, color="gray", linestyle=":", linewidth=1)
        ax.axhline(sweep.min_transition_rate, color="gray", linestyle=":", linewidth=1)

        separating = sweep.separating_thresholds
        if separating.size:
            ax.axvspan(separating.min(), separating.max(), color="green", alpha=0.15)
        ax.set_xlabel("KL threshold (nats)")
        ax.set_ylabel("trigger rate")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(title, fontsize=14, fontweight="bold")
        ax.legend(loc="center right")
        ax.grid(True, alpha=0.3)

        plt.tight_layout()
        return show_plot(
            title=title.replace(" ", "_"),
            description="Fraction of benign shifts and regime transitions that exceed each KL threshold",
        )


def plot_regime_posteriors(detection, truth=None, title=None, figsize=(12, 6)):
    """Convenience wrapper using the default style."""
    visualizer = RegimeVisualizer()
    return visualizer.plot_regime_posteriors(detection, truth, title, figsize)


def plot_transition_heatmap(transition, labels=STAGE_LABELS, title="Transition matrix", figsize=(7, 6)):
    """Convenience wrapper using the default style."""
    visualizer = RegimeVisualizer()
    return visualizer.plot_transition_heatmap(transition, labels, title, figsize)


def plot_kl_threshold_sweep(sweep, title="KL threshold sweep", figsize=(8, 5)):
    """Convenience wrapper using the default style."""
    visualizer = RegimeVisualizer()
    return visualizer.plot_kl_threshold_sweep(sweep, title, figsize)
