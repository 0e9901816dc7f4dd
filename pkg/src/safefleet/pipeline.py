"""End-to-end training pipeline and model bundle persistence.

Runs the whole chain at desk scale: simulated teleop + pedestrian data,
per-platform dynamics models, per-task rejection models and barriers.  The
resulting bundle directory is self-describing (manifest with seeds, sizes
and file hashes) and is everything a scenario run needs.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import data, nn, ood
from .barrier import BarrierModel, CbfTrainConfig, train_cbf
from .dynamics import DynamicsModel, train_dynamics
from .ood import RejectionModel, train_ood
from .scenarios import ModelBundle
from .world import DT, candidate_controls, make_platform

TASK_HIDDEN = {"static": (32, 32), "dynamic": (128, 128), "multirobot": (128, 128)}
TASK_REJECTION_HIDDEN = {"static": (32, 32), "dynamic": (128, 128), "multirobot": (128, 128)}
TASK_REJECTION_C = {"static": 0.25, "dynamic": 0.1, "multirobot": 0.1}


@dataclass
class PipelineConfig:
    seed: int = 0
    data_max_speed: float = 1.5        # higher-speed data covers the lower settings
    robot_data_seconds: float = 600.0
    ped_data_seconds: float = 1800.0
    dynamics_epochs: int = 30
    ood_epochs: int = 40
    cbf_epochs: int = 60
    cbf_lr: float = 1e-3
    cbf_margin: float = 0.1
    max_safe: int = 8000               # per-task training-set caps
    max_unsafe: int = 8000
    max_unlabeled: int = 3000
    static_clones: int = 8
    dynamic_pairs: int = 8
    multirobot_pairs: int = 220


def _subsample(samples, cfg: PipelineConfig, rng):
    caps = {data.LABEL_SAFE: cfg.max_safe, data.LABEL_UNSAFE: cfg.max_unsafe,
            data.LABEL_UNLABELED: cfg.max_unlabeled}
    out = []
    for label, cap in caps.items():
        group = [s for s in samples if s.label == label]
        if len(group) > cap:
            idx = rng.choice(len(group), size=cap, replace=False)
            group = [group[i] for i in sorted(idx)]
        out.extend(group)
    return out


def build_models(cfg: PipelineConfig | None = None, progress=None):
    """Train everything; returns (ModelBundle, report dict)."""
    cfg = cfg or PipelineConfig()
    rng = np.random.default_rng(cfg.seed)
    say = progress or (lambda msg: None)
    report = {"seed": cfg.seed}

    # 1. data collection (simulated teleop + pedestrians)
    say("generating robot trajectories")
    trajectories = {}
    for i, name in enumerate(["freight", "jackal", "megarover"]):
        platform = make_platform(name, cfg.data_max_speed)
        trajectories[name] = data.generate_robot_trajectories(
            platform, cfg.robot_data_seconds, seed=cfg.seed + 11 * (i + 1))
    say("generating pedestrian tracks")
    ped_tracks = data.generate_pedestrian_tracks(
        2, cfg.ped_data_seconds, (0.3, 1.2), seed=cfg.seed + 101)

    # 2. per-platform dynamics
    dynamics = {}
    dyn_report = {}
    for name, trajs in trajectories.items():
        say(f"training dynamics model for {name}")
        platform = make_platform(name, cfg.data_max_speed)
        config = nn.TrainConfig(lr=1e-3, batch_size=256, epochs=cfg.dynamics_epochs,
                                seed=cfg.seed)
        model, mse, baseline = train_dynamics(trajs, platform, config)
        dynamics[name] = model
        dyn_report[name] = {"heldout_mse": mse, "baseline_mse": baseline}
    report["dynamics"] = dyn_report

    # 3. labeled sets, rejection models, barriers (freight data drives all tasks)
    base_trajs = trajectories["freight"]
    candidates = candidate_controls(cfg.data_max_speed)
    barriers, rejections = {}, {}
    task_report = {}
    for task in data.TASKS:
        say(f"building {task} training set")
        lab = data.TASK_LABELING[task]
        if task == "static":
            samples = data.build_static_dataset(base_trajs, lab, seed=cfg.seed + 201,
                                                clones_per_traj=cfg.static_clones)
        elif task == "dynamic":
            samples = data.build_dynamic_dataset(base_trajs, ped_tracks, lab,
                                                 seed=cfg.seed + 202,
                                                 pairs_per_traj=cfg.dynamic_pairs)
        else:
            pool = base_trajs + trajectories["jackal"]
            samples = data.build_multirobot_dataset(pool, lab, seed=cfg.seed + 203,
                                                    pairs=cfg.multirobot_pairs)
        samples = _subsample(samples, cfg, rng)
        labeled_feats = np.stack([s.features for s in samples
                                  if s.label in (data.LABEL_SAFE, data.LABEL_UNSAFE)])
        say(f"training {task} rejection model")
        rej = train_ood(labeled_feats, c=TASK_REJECTION_C[task],
                        hidden=TASK_REJECTION_HIDDEN[task], seed=cfg.seed + 301,
                        config=nn.TrainConfig(lr=2e-3, batch_size=128,
                                              epochs=cfg.ood_epochs, seed=cfg.seed + 301))
        rejections[task] = rej
        say(f"training {task} barrier")
        cbf_cfg = CbfTrainConfig(gamma=1.0, candidates=candidates, dt=DT,
                                 epochs=cfg.cbf_epochs, lr=cfg.cbf_lr,
                                 seed=cfg.seed + 401, hidden=TASK_HIDDEN[task],
                                 margin=cfg.cbf_margin)
        barrier, brep = train_cbf(task, samples, dynamics["freight"], rej, cbf_cfg)
        barriers[task] = barrier
        task_report[task] = {
            "n_samples": len(samples),
            "n_safe": sum(1 for s in samples if s.label == data.LABEL_SAFE),
            "n_unsafe": sum(1 for s in samples if s.label == data.LABEL_UNSAFE),
            "n_unlabeled": sum(1 for s in samples if s.label == data.LABEL_UNLABELED),
            "safe_sign_accuracy": brep["safe_sign_accuracy"],
            "unsafe_sign_accuracy": brep["unsafe_sign_accuracy"],
            "final_loss": brep["loss_curve"][-1],
        }
    report["tasks"] = task_report

    bundle = ModelBundle(dynamics=dynamics, barriers=barriers, rejections=rejections)
    return bundle, report


# ---------------------------------------------------------------------------
# bundle persistence

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def save_bundle(bundle: ModelBundle, out_dir, report=None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"format": "safefleet-bundle-v1", "models": {}, "platforms": {},
                "rejection_c": {}}
    for name, dyn in bundle.dynamics.items():
        fname = f"dynamics_{name}.mlp"
        nn.save_model(dyn.net, os.path.join(out_dir, fname), role=f"dynamics:{name}")
        manifest["models"][fname] = None
        manifest["platforms"][name] = {
            "m_v": dyn.params.m_v, "m_omega": dyn.params.m_omega,
            "delay_h": dyn.params.delay_h, "max_speed": dyn.params.max_speed,
            "max_omega": dyn.params.max_omega, "beta": dyn.beta, "dt": dyn.dt,
        }
    for task, barrier in bundle.barriers.items():
        fname = f"barrier_{task}.mlp"
        nn.save_model(barrier.net, os.path.join(out_dir, fname), role=f"barrier:{task}")
        manifest["models"][fname] = None
    for task, rej in bundle.rejections.items():
        fname = f"rejection_{task}.mlp"
        nn.save_model(rej.net, os.path.join(out_dir, fname), role=f"rejection:{task}")
        manifest["models"][fname] = None
        manifest["rejection_c"][task] = rej.c
    for fname in manifest["models"]:
        manifest["models"][fname] = _sha256(os.path.join(out_dir, fname))
    if report is not None:
        manifest["training_report"] = report
    with open(os.path.join(out_dir, "manifest.yaml"), "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)
    return os.path.join(out_dir, "manifest.yaml")


def load_bundle(bundle_dir) -> ModelBundle:
    with open(os.path.join(bundle_dir, "manifest.yaml")) as fh:
        manifest = yaml.safe_load(fh)
    if manifest.get("format") != "safefleet-bundle-v1":
        raise ValueError(f"{bundle_dir}: not a model bundle")
    from .world import PlatformParams
    dynamics, barriers, rejections = {}, {}, {}
    for fname, expected in manifest["models"].items():
        path = os.path.join(bundle_dir, fname)
        if _sha256(path) != expected:
            raise ValueError(f"{fname}: hash mismatch, bundle is corrupt")
        net, role = nn.load_model(path)
        kind, _, tag = role.partition(":")
        if kind == "dynamics":
            meta = manifest["platforms"][tag]
            params = PlatformParams(name=tag, m_v=meta["m_v"], m_omega=meta["m_omega"],
                                    delay_h=meta["delay_h"], max_speed=meta["max_speed"],
                                    max_omega=meta["max_omega"])
            dynamics[tag] = DynamicsModel(net=net, beta=meta["beta"], params=params,
                                          dt=meta["dt"])
        elif kind == "barrier":
            barriers[tag] = BarrierModel(net=net, task=tag)
        elif kind == "rejection":
            rejections[tag] = RejectionModel(net=net, c=manifest["rejection_c"][tag])
        else:
            raise ValueError(f"unknown model role {role!r}")
    return ModelBundle(dynamics=dynamics, barriers=barriers, rejections=rejections)
