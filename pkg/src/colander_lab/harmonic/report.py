"""CSV layouts for escape-probability runs and layer reports."""

from __future__ import annotations

import csv
import io

RESULT_COLUMNS = ["rho", "int_phi", "p_hat", "stderr", "n_success", "n_fail",
                  "n_censored", "seed", "delta"]
LAYER_COLUMNS = ["k", "rho_k", "inf_hat", "inf_se", "sup_hat", "sup_se", "m_points"]


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def _write(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def result_rows_csv(rows) -> str:
    """``rows`` are mappings with the RESULT_COLUMNS keys."""
    return _write(RESULT_COLUMNS, rows)


def result_row(rho, int_phi, est, seed, delta) -> dict:
    return {"rho": float(rho), "int_phi": float(int_phi), "p_hat": float(est.p_hat),
            "stderr": float(est.stderr), "n_success": est.n_success, "n_fail": est.n_fail,
            "n_censored": est.n_censored, "seed": int(seed), "delta": float(delta)}


def layer_report_csv(bounds) -> str:
    rows = [{"k": s.k, "rho_k": float(s.rho_k), "inf_hat": s.inf_hat.p_hat,
             "inf_se": s.inf_hat.stderr, "sup_hat": s.sup_hat.p_hat,
             "sup_se": s.sup_hat.stderr, "m_points": s.m_points} for s in bounds.layers]
    return _write(LAYER_COLUMNS, rows)


def read_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))
