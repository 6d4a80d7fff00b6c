"""
Per-round trace of a simulation run.

Every algorithm appends one row per round through TrajectoryRecorder; the
finished Trajectory is a pandas DataFrame in the fixed CSV column order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .core import Feedback
from .exceptions import ArgumentError

logger = logging.getLogger(__name__)

COLUMNS = (
    't', 'context', 'action', 'reward', 'xi', 'z',
    'inst_reg_r', 'inst_reg_c', 'cum_reg_r', 'cum_reg_c',
    'n_surviving', 'active_mu', 'lambda',
)
INT_COLUMNS = ('t', 'context', 'action', 'xi', 'z', 'n_surviving')


class TrajectoryRecorder:
    """Preallocated column buffers for a T-round run."""

    def __init__(self, T: int):
        self.T = T
        self._n = 0
        self._ints = {name: np.zeros(T, dtype=np.int64) for name in INT_COLUMNS}
        self._floats = {name: np.full(T, np.nan) for name in ('reward', 'inst_reg_r', 'inst_reg_c',
                                                                'active_mu', 'lambda')}

    def __len__(self) -> int:
        return self._n

    def record(self, feedback: Feedback, reg_r: float, reg_c: float, n_surviving: int,
               active_mu: float = np.nan, lam: float = np.nan) -> None:
        i = self._n
        if i >= self.T:
            raise RuntimeError(f"recorder already holds {self.T} rounds")
        self._ints['t'][i] = i + 1
        self._ints['context'][i] = feedback.context
        self._ints['action'][i] = feedback.action
        self._ints['xi'][i] = int(feedback.xi)
        self._ints['z'][i] = int(feedback.z)
        self._ints['n_surviving'][i] = n_surviving
        self._floats['reward'][i] = feedback.reward
        self._floats['inst_reg_r'][i] = reg_r
        self._floats['inst_reg_c'][i] = reg_c
        self._floats['active_mu'][i] = active_mu
        self._floats['lambda'][i] = lam
        self._n += 1

    def finish(self) -> 'Trajectory':
        if self._n != self.T:
            raise RuntimeError(f"run recorded {self._n} of {self.T} rounds")
        frame = pd.DataFrame({
            **self._ints,
            **self._floats,
            'cum_reg_r': np.cumsum(self._floats['inst_reg_r']),
            'cum_reg_c': np.cumsum(self._floats['inst_reg_c']),
        })
        return Trajectory(frame[list(COLUMNS)])


@dataclass(frozen=True, eq=False)
class Trajectory:
    frame: pd.DataFrame

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def final_reg_r(self) -> float:
        return float(self.frame['cum_reg_r'].iloc[-1])

    @property
    def final_reg_c(self) -> float:
        return float(self.frame['cum_reg_c'].iloc[-1])

    @property
    def total_z(self) -> int:
        """Intentional reveals: rounds with Z=1."""
        return int(self.frame['z'].sum())

    @property
    def total_reveals(self) -> int:
        """Rounds where bar_a was observed, intentional or not."""
        return int(self.frame['xi'].sum())

    def to_csv(self, path: Union[str, Path], float_format: str = '%.17g') -> Path:
        path = Path(path)
        self.frame.to_csv(path, index=False, float_format=float_format)
        logger.debug(f"Wrote trajectory with {len(self)} rows to {path}")
        return path

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> 'Trajectory':
        frame = pd.read_csv(path)
        missing = [c for c in COLUMNS if c not in frame.columns]
        if missing:
            raise ArgumentError(f"{path} is missing trajectory columns {missing}")
        return cls(frame[list(COLUMNS)])
