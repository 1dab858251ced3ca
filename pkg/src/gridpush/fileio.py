"""File formats: body, trajectory, environment, plan, model, CSV exports.

All vectors indexed by cell follow row-major order of the sorted occupancy
coordinates. Trajectories are JSON lines, one record per step, with a final
line carrying the terminal state and a null action.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .body import BodyState, GridBody, PushAction, build_from_occupancy
from .data import TrajectoryRecord
from .planner import Environment, Plan


def save_body(body, path, loss_history=None):
    doc = {
        "cell_width": body.cell_width,
        "occupancy": [list(rc) for rc in body.occupancy],
        "mass": [float(v) for v in body.mass],
        "friction": [float(v) for v in body.friction],
        "mass_max": body.mass_max,
        "friction_max": body.friction_max,
    }
    if loss_history is not None:
        doc["loss_history"] = [float(v) for v in loss_history]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_body(path, mass_max=None, friction_max=None):
    doc = json.loads(Path(path).read_text())
    kwargs = {}
    if mass_max is not None or "mass_max" in doc:
        kwargs["mass_max"] = mass_max if mass_max is not None else doc["mass_max"]
    if friction_max is not None or "friction_max" in doc:
        kwargs["friction_max"] = (
            friction_max if friction_max is not None else doc["friction_max"]
        )
    body = build_from_occupancy(
        {tuple(rc) for rc in doc["occupancy"]},
        doc["cell_width"],
        mass_init=0.5 * kwargs.get("mass_max", 1.0),
        friction_init=0.5 * kwargs.get("friction_max", 1.0),
        **kwargs,
    )
    mass = doc.get("mass")
    friction = doc.get("friction")
    if mass is not None or friction is not None:
        body = body.with_params(
            mass if mass is not None else body.mass,
            friction if friction is not None else body.friction,
        )
    return body


def _action_dict(action):
    return {
        "cell": int(action.contact_cell),
        "fx": float(action.force[0]),
        "fy": float(action.force[1]),
        "tau": float(action.torque),
        "dt": float(action.duration),
    }


def _action_from(doc):
    return PushAction(
        contact_cell=doc["cell"],
        force=np.array([doc["fx"], doc["fy"]]),
        torque=doc.get("tau", 0.0),
        duration=doc["dt"],
    )


def save_trajectory(record, path):
    lines = []
    for t, state in enumerate(record.states):
        doc = {
            "t": float(state.time),
            "pose": [float(v) for v in state.pose],
            "velocity": [float(v) for v in state.velocity],
            "action": _action_dict(record.actions[t]) if t < record.n_steps else None,
        }
        lines.append(json.dumps(doc))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path, provenance="external"):
    states, actions = [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        states.append(
            BodyState(
                pose=np.asarray(doc["pose"], dtype=float),
                velocity=np.asarray(doc["velocity"], dtype=float),
                time=doc["t"],
            )
        )
        if doc.get("action") is not None:
            actions.append(_action_from(doc["action"]))
    return TrajectoryRecord(
        states=tuple(states),
        actions=tuple(actions),
        provenance=provenance,
        label=Path(path).stem,
    )


def load_dataset(directory, pattern="*.jsonl"):
    paths = sorted(Path(directory).glob(pattern))
    if not paths:
        raise FileNotFoundError(f"no {pattern} trajectories under {directory}")
    return [load_trajectory(p) for p in paths]


def save_env(env, path):
    doc = {
        "table": [list(p) for p in env.table],
        "obstacles": [[list(p) for p in poly] for poly in env.obstacles],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_env(path):
    doc = json.loads(Path(path).read_text())
    return Environment(table=doc["table"], obstacles=doc.get("obstacles", []))


def save_plan(plan, path):
    doc = {
        "actions": [_action_dict(a) for a in plan.actions],
        "push_spans": list(plan.push_spans),
        "predicted_states": [
            {
                "t": float(s.time),
                "pose": [float(v) for v in s.pose],
                "velocity": [float(v) for v in s.velocity],
            }
            for s in plan.predicted_states
        ],
        "waypoints": [list(w) for w in plan.waypoints],
        "simulator_calls": int(plan.simulator_calls),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_plan(path):
    doc = json.loads(Path(path).read_text())
    return Plan(
        actions=tuple(_action_from(a) for a in doc["actions"]),
        predicted_states=tuple(
            BodyState(
                pose=np.asarray(s["pose"], dtype=float),
                velocity=np.asarray(s["velocity"], dtype=float),
                time=s["t"],
            )
            for s in doc["predicted_states"]
        ),
        waypoints=tuple(tuple(w) for w in doc["waypoints"]),
        simulator_calls=doc["simulator_calls"],
        push_spans=tuple(doc["push_spans"]),
    )


def save_heatmaps(body, prefix):
    """Per-cell mass and friction as row x col CSV grids (blank = no cell)."""
    rows = [rc[0] for rc in body.occupancy]
    cols = [rc[1] for rc in body.occupancy]
    r0, r1 = min(rows), max(rows)
    c0, c1 = min(cols), max(cols)
    index = {rc: i for i, rc in enumerate(body.occupancy)}
    written = []
    for name, values in (("mass", body.mass), ("friction", body.friction)):
        path = Path(f"{prefix}_{name}.csv")
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            for r in range(r0, r1 + 1):
                writer.writerow(
                    [
                        f"{values[index[(r, c)]]:.6g}" if (r, c) in index else ""
                        for c in range(c0, c1 + 1)
                    ]
                )
        written.append(str(path))
    return written


def save_comparison(rows, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", "simulations", "heldout_error"])
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    "method": row["method"],
                    "simulations": row["simulations"],
                    "heldout_error": f"{row['heldout_error']:.9g}",
                }
            )


def save_report(report, path, include_timings=True):
    Path(path).write_text(
        json.dumps(report.to_dict(include_timings=include_timings), indent=2,
                   sort_keys=True) + "\n"
    )
