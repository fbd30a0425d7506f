import datetime
import logging
import os
from typing import Any, Dict, Optional

import matplotlib.pyplot as plt
from matplotlib.backends.backend_pdf import PdfPages

log = logging.getLogger(__name__)

# Global variable to track plots for PDF generation
_plot_tracker = {"plots": [], "run_info": {}, "images_dir": None}


def set_run_info(run_name: str, images_dir: Optional[str] = None, **kwargs):
    """
    Set run information for PDF generation and start saving figures.

    Args:
        run_name: Name of the run (scenario, dataset, ...)
        images_dir: Where figures go (default: ``images/<run_name>``)
        **kwargs: Additional summary items shown on the title page
    """
    info = {"name": run_name}
    info.update(kwargs)
    _plot_tracker["run_info"] = info

    _plot_tracker["images_dir"] = images_dir or os.path.join("images", run_name)
    os.makedirs(_plot_tracker["images_dir"], exist_ok=True)


def show_plot(title: Optional[str] = None, description: Optional[str] = None) -> Optional[str]:
    """
    Conditionally show matplotlib plots based on environment variable.
    Also saves plots to the images directory for later PDF generation.

    Args:
        title: Custom title for the plot (used in PDF)
        description: Description of the plot (used in PDF)

    Returns:
        Path of the saved figure, or None when no images directory is set
    """
    fig = plt.gcf()

    plot_count = len(_plot_tracker["plots"]) + 1
    run_name = _plot_tracker["run_info"].get("name", "Unknown")

    if title is None:
        axes = fig.get_axes()
        if axes and hasattr(axes[0], "get_title"):
            title = axes[0].get_title()
        if not title:
            title = f"Plot {plot_count}"

    filepath = None
    if _plot_tracker["images_dir"]:
        filename = (
            f"plot_{plot_count:02d}_{title.replace(' ', '_').replace('/', '_')}.png"
        )
        filepath = os.path.join(_plot_tracker["images_dir"], filename)

        fig.savefig(
            filepath, dpi=150, bbox_inches="tight", facecolor="white", edgecolor="none"
        )

        _plot_tracker["plots"].append(
            {
                "title": title,
                "description": description or f"Visualization for {run_name}",
                "filepath": filepath,
                "filename": filename,
            }
        )

        log.info("Plot saved: %s", filepath)

    if not os.getenv("HIDE_PLOTS"):
        plt.show()
    else:
        plt.close(fig)
    return filepath


def generate_pdf_report(output_filename: Optional[str] = None) -> Optional[str]:
    """
    Generate a PDF report with all saved plots and the run summary.

    Args:
        output_filename: Custom filename for the PDF. If None, uses the run name.

    Returns:
        The PDF path, or None if there was nothing to report
    """
    if not _plot_tracker["plots"]:
        log.warning("No plots to include in PDF report.")
        return None

    run_info = _plot_tracker["run_info"]
    run_name = run_info.get("name", "Unknown")

    if output_filename is None:
        output_filename = f"{run_name.replace(' ', '_')}_regime_report.pdf"

    log.info("Generating PDF report: %s", output_filename)

    with PdfPages(output_filename) as pdf:
        _create_title_page(pdf, run_info)

        for plot_info in _plot_tracker["plots"]:
            _add_plot_page(pdf, plot_info, run_info)

        _add_pdf_metadata(pdf, run_info)

    log.info(
        "PDF report generated: %s (%d pages)",
        output_filename,
        len(_plot_tracker["plots"]) + 1,
    )
    return output_filename


def _create_title_page(pdf: PdfPages, run_info: Dict[str, Any]):
    """Create a title page with the run summary."""
    fig, ax = plt.subplots(1, 1, figsize=(8.5, 11))
    ax.axis("off")

    ax.text(
        0.5,
        0.9,
        "Regime Inference Report",
        ha="center",
        va="center",
        fontsize=24,
        fontweight="bold",
        transform=ax.transAxes,
        color="darkblue",
    )
    ax.text(
        0.5,
        0.82,
        run_info.get("name", "Unknown run"),
        ha="center",
        va="center",
        fontsize=20,
        fontweight="bold",
        transform=ax.transAxes,
        color="darkgreen",
    )

    y_pos = 0.65
    info_items = [
        (key.replace("_", " ").capitalize(), value)
        for key, value in run_info.items()
        if key != "name"
    ]
    info_items += [
        ("Analysis date", datetime.datetime.now().strftime("%Y-%m-%d")),
        ("Total visualizations", len(_plot_tracker["plots"])),
    ]

    for label, value in info_items:
        ax.text(
            0.2,
            y_pos,
            f"{label}:",
            ha="left",
            va="center",
            fontsize=12,
            fontweight="bold",
            transform=ax.transAxes,
        )
        ax.text(
            0.6,
            y_pos,
            str(value),
            ha="left",
            va="center",
            fontsize=12,
            transform=ax.transAxes,
        )
        y_pos -= 0.06

    plt.tight_layout()
    pdf.savefig(fig, bbox_inches="tight")
    plt.close(fig)


def _add_plot_page(pdf: PdfPages, plot_info: Dict[str, Any], run_info: Dict[str, Any]):
    """Add a plot page to the PDF."""
    try:
        fig, (ax_plot, ax_info) = plt.subplots(
            2, 1, figsize=(8.5, 11), gridspec_kw={"height_ratios": [4, 1]}
        )

        import matplotlib.image as mpimg

        img = mpimg.imread(plot_info["filepath"])
        ax_plot.imshow(img)
        ax_plot.axis("off")
        ax_plot.set_title(plot_info["title"], fontsize=16, fontweight="bold", pad=20)

        ax_info.axis("off")
        description_text = f"Description: {plot_info['description']}\n\n"
        description_text += f"Run: {run_info.get('name', 'Unknown')}\n"
        description_text += (
            f"Generated: {datetime.datetime.now().strftime('%Y-%m-%d %H:%M:%S')}"
        )

        ax_info.text(
            0.02,
            0.98,
            description_text,
            ha="left",
            va="top",
            fontsize=10,
            transform=ax_info.transAxes,
            bbox=dict(boxstyle="round,pad=0.5", facecolor="lightyellow", alpha=0.7),
        )

        plt.tight_layout()
        pdf.savefig(fig, bbox_inches="tight")
        plt.close(fig)

    except (OSError, ValueError) as e:
        log.warning("Could not add plot %s to PDF: %s", plot_info["title"], e)


def _add_pdf_metadata(pdf: PdfPages, run_info: Dict[str, Any]):
    """Add metadata to the PDF."""
    d = pdf.infodict()
    d["Title"] = f"Regime Inference Report - {run_info.get('name', 'Unknown')}"
    d["Author"] = "regime-ssm"
    d["Subject"] = "Kill-chain regime posteriors, alerts and adapted parameters"
    d["Keywords"] = "switching state space model, variational inference, intrusion detection"
    d["CreationDate"] = datetime.datetime.now()
    d["ModDate"] = datetime.datetime.now()


def clear_plot_tracker():
    """Clear the plot tracker (useful for starting a new run)."""
    global _plot_tracker
    _plot_tracker = {"plots": [], "run_info": {}, "images_dir": None}


def get_plot_tracker_info():
    """Get current plot tracker information."""
    return {
        "plot_count": len(_plot_tracker["plots"]),
        "run": _plot_tracker["run_info"].get("name", "Not set"),
        "images_dir": _plot_tracker["images_dir"],
    }
