"""Learning curves: (x, value, CI half-width) rows written as CSV."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LearningCurve:
    x_label: str = "epoch"
    x: list = field(default_factory=list)
    value: list = field(default_factory=list)
    ci_halfwidth: list = field(default_factory=list)

    def append(self, x, value, ci=float("nan")) -> None:
        if self.x and x <= self.x[-1]:
            raise ValueError("learning-curve x values must increase")
        self.x.append(x)
        self.value.append(float(value))
        self.ci_halfwidth.append(float(ci))

    def __len__(self) -> int:
        return len(self.x)

    def tail_mean(self, window: int) -> float:
        if not self.value:
            raise ValueError("empty learning curve")
        return float(np.mean(self.value[-window:]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.x_label, "value", "ci_halfwidth"])
            for row in zip(self.x, self.value, self.ci_halfwidth):
                w.writerow([row[0], repr(row[1]), repr(row[2])])

    def to_dict(self) -> dict:
        return {"x_label": self.x_label, "x": list(self.x), "value": list(self.value),
                "ci_halfwidth": list(self.ci_halfwidth)}
