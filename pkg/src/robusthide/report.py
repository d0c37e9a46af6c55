"""Rendering and parsing of evaluation reports.

The text table is for people: BER with two decimals. The CSV form is for
machines: full-precision floats so that parsing it back reproduces the
report exactly, with summary values in ``#`` footer lines.
"""
from __future__ import annotations

import csv
import io

from robusthide.evaluate import EvalReport, EvalRow

COLUMNS = ("attack", "quality", "ber", "error")


def _fmt_ber(r: EvalRow) -> str:
    return f"{r.ber:.2f}" if r.ok else "failed"


def emit_text(report: EvalReport) -> str:
    body = [("attack", "quality", "BER (%)")]
    body += [(r.attack, "-" if r.quality is None else str(r.quality), _fmt_ber(r)) for r in report.rows]
    widths = [max(len(row[i]) for row in body) for i in range(3)]
    lines = ["  ".join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row))
             for row in body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    for r in report.rows:
        if not r.ok:
            lines.append(f"! {r.attack}-{r.quality}: {r.error}")
    lines.append(f"samples {report.samples}  APD {report.apd:.2f}  PSNR {report.psnr:.2f} dB")
    lines.append(f"fingerprint {report.fingerprint}")
    return "\n".join(lines) + "\n"


def emit_csv(report: EvalReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in report.rows:
        w.writerow([r.attack, "" if r.quality is None else r.quality, repr(r.ber), r.error])
    out.write(f"# samples={report.samples}\n# apd={report.apd!r}\n# psnr={report.psnr!r}\n")
    out.write(f"# fingerprint={report.fingerprint}\n")
    return out.getvalue()


def emit_report(report: EvalReport, fmt: str = "text") -> str:
    if fmt == "text":
        return emit_text(report)
    if fmt == "csv":
        return emit_csv(report)
    raise ValueError(f"unknown report format {fmt!r}")


def parse_csv(text: str) -> EvalReport:
    footer = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            footer[k] = v
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise ValueError(f"missing or wrong CSV header; expected {','.join(COLUMNS)}")
    parsed = [EvalRow(a, int(q) if q else None, float(b), e) for a, q, b, e in rows[1:]]
    try:
        return EvalReport(parsed, float(footer["apd"]), float(footer["psnr"]), int(footer["samples"]),
                          footer["fingerprint"])
    except KeyError as e:
        raise ValueError(f"CSV footer lacks {e.args[0]}") from None
