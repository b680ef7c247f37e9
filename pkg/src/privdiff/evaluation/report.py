"""Collect metric families into one report and write it out."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import PrivacyRiskReport
from .fidelity import FidelityReport
from .utility import UtilityReport


def _sem(values) -> float:
    v = np.asarray(list(values), dtype=np.float64)
    return float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else float("nan")


@dataclass
class EvalReport:
    fidelity: FidelityReport | None = None
    utility: UtilityReport | None = None
    privacy: PrivacyRiskReport | None = None

    def rows(self) -> list[tuple[str, float, float]]:
        """(metric, value, stderr) rows; stderr is NaN where it has no meaning."""
        nan = float("nan")
        rows = []
        if self.fidelity is not None:
            f = self.fidelity
            rows += [("omega_col", f.omega_col, _sem(f.columns.values())),
                     ("omega_row", f.omega_row, _sem(f.pairs.values())),
                     ("omega_total", f.omega_total, nan)]
            rows += [(f"col:{k}", v, nan) for k, v in f.columns.items()]
            rows += [(f"pair:{a}|{b}", v, nan) for (a, b), v in f.pairs.items()]
        if self.utility is not None:
            u = self.utility
            rows.append(("phi", u.phi, _sem(u.auc.values())))
            rows += [(f"auc:{k}", v, nan) for k, v in u.auc.items()]
        if self.privacy is not None:
            for name, res in (("sor", self.privacy.singling_out), ("lr", self.privacy.linkability),
                              ("ir", self.privacy.inference)):
                if res is not None:
                    rows.append((name, res.risk, res.stderr))
        return rows

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value", "stderr"])
            for name, value, err in self.rows():
                w.writerow([name, repr(float(value)), "" if np.isnan(err) else repr(float(err))])

    def summary(self) -> str:
        lines = []
        if self.fidelity is not None:
            f = self.fidelity
            lines.append(f"fidelity  omega_col={f.omega_col:.4f}  omega_row={f.omega_row:.4f}  "
                         f"omega_total={f.omega_total:.4f}  ({len(f.columns)} columns, {len(f.pairs)} pairs)")
        if self.utility is not None:
            aucs = "  ".join(f"{k}={v:.4f}" for k, v in self.utility.auc.items())
            lines.append(f"utility   phi={self.utility.phi:.4f}  [{aucs}]")
        if self.privacy is not None:
            for name, res in (("singling-out", self.privacy.singling_out),
                              ("linkability", self.privacy.linkability),
                              ("inference", self.privacy.inference)):
                if res is not None:
                    lines.append(f"privacy   {name:<13} risk={res.risk:.4f}  "
                                 f"(train {res.successes}/{res.trials}, holdout {res.baseline_successes}/{res.trials})")
        return "\n".join(lines) + "\n"
