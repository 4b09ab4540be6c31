"""Report rendering tool - experiment summaries and SVG figures

Renders the markdown report with Mustache/Chevron and draws line and ECDF plots.
"""
import logging
from pathlib import Path
from typing import Any

import chevron
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from src.models import PersistenceError  # noqa: E402

logger = logging.getLogger(__name__)


# ============================================================================
# Exceptions
# ============================================================================

class ReportRenderError(PersistenceError):
    """Error rendering or saving a report"""


# ============================================================================
# Report Tool
# ============================================================================

class ReportTool:
    """Experiment report renderer using Mustache/Chevron"""

    REQUIRED_FIELDS = ("experiment", "version", "wall_clock", "aggregates", "artifacts")

    def __init__(self, template_path: str = "resources/report_template.md", output_dir: str = "out"):
        """
        Initialize report renderer.

        Args:
            template_path: Path to Mustache template file
            output_dir: Directory for output files
        """
        self.template_path = Path(template_path)
        self.output_dir = Path(output_dir)

        if not self.template_path.exists():
            raise ReportRenderError(self.template_path, "template not found")

        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.template = self._load_template()
        logger.debug(f"Template loaded: {self.template_path}")

    def _load_template(self) -> str:
        try:
            return self.template_path.read_text(encoding="utf-8")
        except OSError as e:
            raise ReportRenderError(self.template_path, f"cannot load template: {e}") from e

    # ========================================================================
    # Rendering Methods
    # ========================================================================

    def render(self, data: dict[str, Any]) -> str:
        """
        Render the template with experiment data.

        Args:
            data: Template variables (see ``REQUIRED_FIELDS``)

        Returns:
            Rendered markdown string

        Raises:
            ReportRenderError: If required fields are missing
        """
        missing = [name for name in self.REQUIRED_FIELDS if name not in data]
        if missing:
            raise ReportRenderError(self.template_path, f"missing fields: {', '.join(missing)}")
        return chevron.render(self.template, self._format_data(data))

    @staticmethod
    def _format_data(data: dict[str, Any]) -> dict[str, Any]:
        """Format floats for display; CSV artifacts keep full precision."""
        formatted = dict(data)
        formatted["aggregates"] = [
            {key: f"{value:.6g}" if isinstance(value, float) else value for key, value in row.items()}
            for row in data["aggregates"]
        ]
        formatted["wall_clock"] = f"{data['wall_clock']:.1f}"
        formatted["flags"] = [{"flag": flag} for flag in data.get("flags", [])]
        formatted["has_flags"] = bool(formatted["flags"])
        return formatted

    # ========================================================================
    # File Operations
    # ========================================================================

    def save(self, content: str, name: str) -> Path:
        output_path = self.output_dir / f"{name}_report.md"
        try:
            output_path.write_text(content, encoding="utf-8")
        except OSError as e:
            raise ReportRenderError(output_path, f"cannot save report: {e}") from e
        logger.info(f"Report saved: {output_path}")
        return output_path

    def render_and_save(self, data: dict[str, Any]) -> Path:
        return self.save(self.render(data), data["experiment"])


# ============================================================================
# Figures
# ============================================================================

def _save(fig: plt.Figure, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        # Fixed hash salt keeps SVG bytes reproducible
        with matplotlib.rc_context({"svg.hashsalt": "bjs", "svg.fonttype": "none"}):
            fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise ReportRenderError(path, f"cannot save figure: {e}") from e
    finally:
        plt.close(fig)
    return path


def line_plot(
    path: str | Path,
    x: np.ndarray,
    series: dict[str, np.ndarray],
    *,
    xlabel: str,
    ylabel: str,
    title: str = "",
    log_y: bool = False,
) -> Path:
    """Draw one line per series against a shared x axis."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, values in series.items():
        ax.plot(x, values, marker="o", markersize=3, label=label)
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    return _save(fig, Path(path))


def ecdf_plot(
    path: str | Path,
    samples: dict[str, np.ndarray],
    *,
    xlabel: str,
    title: str = "",
) -> Path:
    """Overlay empirical distribution functions of several samples."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, values in samples.items():
        ordered = np.sort(np.asarray(values, dtype=np.float64))
        levels = np.arange(1, ordered.size + 1) / ordered.size
        ax.step(ordered, levels, where="post", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("empirical CDF")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, Path(path))
