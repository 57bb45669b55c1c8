"""Result writers: CSV tables, the JSON run manifest, and the PDF run report via reportlab."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence

from .config import APP_NAME, APP_VERSION, AUDIT_HEADER, LOG_HEADER, VC_HEADER
from .errors import ConfigError
from .reconstruct import ConvergenceLog
from .rays import VisibilityReport

log = logging.getLogger(__name__)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def log_rows(clog: ConvergenceLog):
    ratios = clog.ratios()
    for rec, ratio in zip(clog.records, ratios):
        yield (rec.j, rec.error, rec.update, ratio, round(rec.seconds, 6))


def write_log_csv(path: Path, clog: ConvergenceLog) -> Path:
    """`seconds` is wall time and the only non-canonical column."""
    return write_csv(path, LOG_HEADER, log_rows(clog))


def write_vc_csv(path: Path, report: VisibilityReport) -> Path:
    return write_csv(path, VC_HEADER, report.rows())


def write_audit_csv(path: Path, rows: Iterable[Sequence]) -> Path:
    return write_csv(path, AUDIT_HEADER, rows)


def write_manifest(path: Path, config_text: str, entries: Mapping) -> Path:
    """JSON with sorted keys: the config echo plus whatever the command recorded."""
    doc = {"app": APP_NAME, "version": APP_VERSION, "config": config_text}
    doc.update(entries)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON") from exc


class ReportExporter:
    """One-page PDF summary of a run: constants table and, for reconstructions, the convergence table."""

    def __init__(self, title: str, constants: Mapping[str, object]):
        self.title = title
        self.constants = constants

    def export_pdf(self, path: Path, clog: Optional[ConvergenceLog] = None,
                   extra_rows: Optional[List[Sequence]] = None) -> Path:
        try:
            from reportlab.lib import colors
            from reportlab.lib.pagesizes import A4
            from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
            from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle
        except ImportError as exc:
            raise ConfigError("pdf output needs reportlab; run\n  pip install reportlab") from exc

        # invariant=1 drops the creation timestamp and random document id
        doc = SimpleDocTemplate(str(path), pagesize=A4, leftMargin=36, rightMargin=36,
                                topMargin=36, bottomMargin=36, title=self.title, invariant=1)
        styles = getSampleStyleSheet()
        cell_style = ParagraphStyle("cell", fontSize=7, leading=9)
        hdr_style = ParagraphStyle("hdr", fontSize=7, leading=9, fontName="Helvetica-Bold")

        def P(text, style=cell_style):
            return Paragraph(str(text), style)

        def styled(table: Table) -> Table:
            table.setStyle(TableStyle([
                ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor("#d0d0d0")),
                ("GRID", (0, 0), (-1, -1), 0.25, colors.grey),
                ("VALIGN", (0, 0), (-1, -1), "TOP"),
                ("ROWBACKGROUNDS", (0, 1), (-1, -1), [colors.white, colors.HexColor("#ebebeb")]),
                ("TOPPADDING", (0, 0), (-1, -1), 2),
                ("BOTTOMPADDING", (0, 0), (-1, -1), 2),
            ]))
            return table

        # A4 usable width = 595 - 2*36 = 523pt
        consts = [[P("Quantity", hdr_style), P("Value", hdr_style)]]
        consts += [[P(k), P(_fmt(v))] for k, v in sorted(self.constants.items())]
        story = [Paragraph(self.title, styles["Title"]),
                 styled(Table(consts, colWidths=[180, 343], repeatRows=1))]

        if clog is not None:
            rows = [[P(h, hdr_style) for h in LOG_HEADER[:-1]]]
            for j, error, update, ratio, _ in log_rows(clog):
                rows.append([P(j)] + [P("" if v is None else f"{v:.6e}") for v in (error, update, ratio)])
            story += [Spacer(1, 12), Paragraph("Convergence", styles["Heading2"]),
                      styled(Table(rows, colWidths=[60, 154, 155, 154], repeatRows=1))]
            if clog.rate is not None:
                story.append(Paragraph(f"fitted rate {clog.rate:.6f}, r<super>2</super> = {clog.r2:.6f}",
                                       styles["Normal"]))
        if extra_rows:
            story += [Spacer(1, 12), styled(Table([[P(v) for v in row] for row in extra_rows], repeatRows=1))]
        doc.build(story)
        log.info("wrote report %s", path)
        return path
