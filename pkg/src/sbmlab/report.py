"""Acceptance/experiment reports: per-criterion records, JSON + CSV output.

Float formatting is fixed at 17 significant digits so a rerun with the same
(config, seed) produces byte-identical files.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path


@dataclass
class Record:
    name: str
    target: float | str
    provenance: str
    estimate: float
    dispersion: float          # SE or KS statistic, per the tolerance rule
    tolerance_rule: str
    passed: bool
    runtime_s: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return (f"[{mark}] {self.name}: estimate={_fmt(self.estimate)} "
                f"target={_fmt(self.target)} ({self.tolerance_rule}; "
                f"dispersion={_fmt(self.dispersion)}; {self.runtime_s:.1f}s)")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return f"{float(v):.12g}"


@dataclass
class Report:
    title: str
    seed: int
    records: list[Record] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def add(self, *args, **kwargs) -> Record:
        rec = Record(*args, **kwargs)
        self.records.append(rec)
        print(rec.line(), flush=True)
        return rec

    def write(self, outdir: str | Path) -> None:
        """Persist report.json/report.csv (byte-stable) plus timings.csv.

        Wall-clock runtimes live only in timings.csv so the main report files
        are byte-identical across reruns with the same (config, seed).
        """
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        recs = []
        for r in self.records:
            d = asdict(r)
            d.pop("runtime_s")
            recs.append(d)
        payload = {
            "title": self.title,
            "seed": self.seed,
            "passed": self.passed,
            "meta": self.meta,
            "records": recs,
        }
        (outdir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True,
                                                       default=_fmt) + "\n")
        lines = ["name,target,provenance,estimate,dispersion,tolerance_rule,passed"]
        for r in self.records:
            lines.append(",".join([
                r.name, _fmt(r.target), r.provenance.replace(",", ";"),
                f"{r.estimate:.17g}", f"{r.dispersion:.17g}",
                r.tolerance_rule.replace(",", ";"), str(int(r.passed))]))
        (outdir / "report.csv").write_text("\n".join(lines) + "\n")
        tl = ["name,runtime_s"] + [f"{r.name},{r.runtime_s:.3f}" for r in self.records]
        (outdir / "timings.csv").write_text("\n".join(tl) + "\n")


class timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        self._final = None
        return self

    def __exit__(self, *exc):
        self._final = time.perf_counter() - self.t0

    @property
    def elapsed(self) -> float:
        return self._final if self._final is not None else time.perf_counter() - self.t0
