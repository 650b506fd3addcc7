"""Motion-forecasting metrics and lane-membership geometry."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .geometry import points_in_polygon, points_near_polygon_boundary
from .scene import Scene

MISS_THRESHOLD = 2.0  # meters
LANE_EPS = 0.1        # boundary tolerance absorbing polygonization error


def _top_k(preds_k: list, K: int) -> list:
    """K highest-scoring modes; stable for equal scores (lower mode first)."""
    order = sorted(range(len(preds_k)), key=lambda i: (-preds_k[i].score, i))
    return [preds_k[i] for i in order[:K]]


def min_ade_k(preds_k: list, gt_scene: np.ndarray, K: int) -> float:
    best = math.inf
    for p in _top_k(preds_k, K):
        if p.traj_scene.shape != gt_scene.shape:
            raise DataError(f"trajectory length mismatch {p.traj_scene.shape} vs {gt_scene.shape}")
        d = np.hypot(*(p.traj_scene - gt_scene).T).mean()
        best = min(best, float(d))
    return best


def min_fde_k(preds_k: list, gt_scene: np.ndarray, K: int) -> float:
    best = math.inf
    for p in _top_k(preds_k, K):
        if p.traj_scene.shape != gt_scene.shape:
            raise DataError(f"trajectory length mismatch {p.traj_scene.shape} vs {gt_scene.shape}")
        best = min(best, float(np.hypot(*(p.traj_scene[-1] - gt_scene[-1]))))
    return best


def is_miss_top2(preds_k: list, gt_scene: np.ndarray, K: int) -> bool:
    """Miss if every top-K mode has some waypoint further than 2 m from GT."""
    for p in _top_k(preds_k, K):
        if (np.hypot(*(p.traj_scene - gt_scene).T) <= MISS_THRESHOLD).all():
            return False
    return True


def brier_min_fde_k(preds_k: list, gt_scene: np.ndarray, K: int,
                    literal: bool = False) -> float:
    """minFDE plus a Brier penalty from the minimizing mode's score.

    Default penalty (1 - s)^2; literal=True uses (1 - s^2) instead.
    """
    top = _top_k(preds_k, K)
    fdes = [float(np.hypot(*(p.traj_scene[-1] - gt_scene[-1]))) for p in top]
    best = min(range(len(top)), key=lambda i: (fdes[i], -top[i].score))
    s = top[best].score
    penalty = (1.0 - s * s) if literal else (1.0 - s) ** 2
    return fdes[best] + penalty


def point_in_lanes(xy, lanes, eps: float = LANE_EPS) -> bool:
    """True iff xy lies inside (or within eps of the boundary of) any lane polygon."""
    pt = np.asarray(xy, dtype=float)[None, :]
    for lane in lanes:
        poly = lane.polygon()
        if points_in_polygon(pt, poly)[0] or points_near_polygon_boundary(pt, poly, eps)[0]:
            return True
    return False


def trajectory_offroad(traj_scene: np.ndarray, lane_polys: list, eps: float = LANE_EPS) -> bool:
    """True if any waypoint lies outside every lane polygon."""
    covered = np.zeros(len(traj_scene), dtype=bool)
    for poly in lane_polys:
        covered |= points_in_polygon(traj_scene, poly)
        if covered.all():
            return False
        covered |= points_near_polygon_boundary(traj_scene, poly, eps)
        if covered.all():
            return False
    return not covered.all()


@dataclass
class MetricsReport:
    n_agents: int = 0
    n_scenes: int = 0
    minADE: dict = field(default_factory=dict)       # K -> meters
    minFDE: dict = field(default_factory=dict)
    b_minFDE: dict = field(default_factory=dict)
    minMR: dict = field(default_factory=dict)
    missRateTopK_2: dict = field(default_factory=dict)
    ORR: float = 0.0
    per_class: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "n_agents": self.n_agents, "n_scenes": self.n_scenes,
            "minADE": {str(k): v for k, v in self.minADE.items()},
            "minFDE": {str(k): v for k, v in self.minFDE.items()},
            "b_minFDE": {str(k): v for k, v in self.b_minFDE.items()},
            "minMR": {str(k): v for k, v in self.minMR.items()},
            "missRateTopK_2": {str(k): v for k, v in self.missRateTopK_2.items()},
            "ORR": self.ORR,
            "per_class": self.per_class,
        }


def evaluate(model, dataset: list, ks=(1, 6), brier_literal: bool = False) -> MetricsReport:
    """Aggregate all metrics over a dataset; deterministic."""
    if not dataset:
        raise DataError("cannot evaluate on an empty dataset")
    rep = MetricsReport(n_scenes=len(dataset))
    acc = {k: {"ade": [], "fde": [], "bfde": [], "mr": [], "miss": []} for k in ks}
    per_class: dict = {}
    orr_hits, orr_total = 0, 0
    for scene in dataset:
        preds = model.predict(scene)
        by_agent: dict = {}
        for p in preds:
            by_agent.setdefault(p.agent_idx, []).append(p)
        lane_polys = [l.polygon() for l in scene.lanes]
        for ai, preds_k in sorted(by_agent.items()):
            agent = scene.agents[ai]
            if not agent.valid[scene.t_history:].all():
                continue
            gt = agent.states[scene.t_history:, 0:2]
            rep.n_agents += 1
            cls_acc = per_class.setdefault(agent.agent_class,
                                           {k: {"ade": [], "fde": []} for k in ks})
            for k in ks:
                ade = min_ade_k(preds_k, gt, k)
                fde = min_fde_k(preds_k, gt, k)
                acc[k]["ade"].append(ade)
                acc[k]["fde"].append(fde)
                acc[k]["bfde"].append(brier_min_fde_k(preds_k, gt, k, brier_literal))
                acc[k]["mr"].append(1.0 if fde > MISS_THRESHOLD else 0.0)
                acc[k]["miss"].append(1.0 if is_miss_top2(preds_k, gt, k) else 0.0)
                cls_acc[k]["ade"].append(ade)
                cls_acc[k]["fde"].append(fde)
            if agent.road_bound:
                for p in preds_k:  # ORR counts every mode
                    orr_total += 1
                    if trajectory_offroad(p.traj_scene, lane_polys):
                        orr_hits += 1
    for k in ks:
        rep.minADE[k] = float(np.mean(acc[k]["ade"])) if acc[k]["ade"] else math.nan
        rep.minFDE[k] = float(np.mean(acc[k]["fde"])) if acc[k]["fde"] else math.nan
        rep.b_minFDE[k] = float(np.mean(acc[k]["bfde"])) if acc[k]["bfde"] else math.nan
        rep.minMR[k] = float(np.mean(acc[k]["mr"])) if acc[k]["mr"] else math.nan
        rep.missRateTopK_2[k] = float(np.mean(acc[k]["miss"])) if acc[k]["miss"] else math.nan
    rep.ORR = orr_hits / orr_total if orr_total else 0.0
    rep.per_class = {
        cls: {str(k): {"minADE": float(np.mean(v[k]["ade"])),
                       "minFDE": float(np.mean(v[k]["fde"]))} for k in ks}
        for cls, v in per_class.items()
    }
    return rep


def write_report(rep: MetricsReport, csv_path: str, json_path: str,
                 dataset_name: str = "", variant: str = "") -> None:
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("dataset,variant,K,minADE,minFDE,b_minFDE,minMR,missRateTopK_2,ORR,n_agents\n")
        for k in sorted(rep.minADE):
            f.write(f"{dataset_name},{variant},{k},{rep.minADE[k]:.10g},{rep.minFDE[k]:.10g},"
                    f"{rep.b_minFDE[k]:.10g},{rep.minMR[k]:.10g},{rep.missRateTopK_2[k]:.10g},"
                    f"{rep.ORR:.10g},{rep.n_agents}\n")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(rep.to_dict(), f, sort_keys=True, indent=1)
        f.write("\n")
