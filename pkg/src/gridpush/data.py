"""Trajectory records: the dataset unit for identification and evaluation."""

from dataclasses import dataclass

import numpy as np

EPS_MOVE = 1e-4  # infinity-norm velocity threshold for "the object moves"


@dataclass(frozen=True)
class TrajectoryRecord:
    """Observed (pose, velocity) sequence with the actions that produced it.

    states has one more entry than actions; states[t] is the state the
    action actions[t] was applied from.
    """

    states: tuple
    actions: tuple
    provenance: str = "synthetic"
    label: str = ""

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError(
                f"record {self.label or '<unnamed>'}: need len(states) == len(actions) + 1"
            )

    @property
    def n_steps(self):
        return len(self.actions)

    def moving_steps(self):
        """Indices t where the push actually moved the object.

        Judged by the recorded outcome velocity: steps whose push failed to
        break static friction carry no parameter information, while from-rest
        breakaway steps are kept (they pin the mass scale through the applied
        impulse). Steps that decelerate to rest are dropped with them; the
        gradient derivation needs the solved step to keep moving.
        """
        return [
            t
            for t in range(self.n_steps)
            if float(np.abs(self.states[t + 1].velocity).max()) > EPS_MOVE
        ]
