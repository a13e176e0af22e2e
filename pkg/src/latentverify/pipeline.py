"""Reproducible, resumable pipeline orchestration.

Each stage consumes on-disk artifacts of upstream stages, verifies their
content hashes against the run manifest (staleness detection), writes its
own artifacts, and records input/output hashes plus the constants it chose.
Timings live in a sibling file so manifests are bit-identical across runs
with the same config and seed.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ConfigError, MissingStage, NotConverged, StaleArtifact
from .abstraction import Nts, build_nts, nts_from_text, nts_to_text, refine
from .decode import decode_cell
from .encoder import (
    LossWeights,
    TrainConfig,
    build_networks,
    check_cico,
    encoder_from_dict,
    encoder_to_dict,
    lipschitz_bound,
    mlp_from_dict,
    mlp_to_dict,
    train,
)
from .geometry import ConvexPolygon
from .gp import (
    GpConfig,
    fit_inclusion_gp,
    fit_latent_c,
    gp_from_dict,
    gp_to_dict,
    rkhs_constants,
    set_rkhs_constants,
)
from .ltl import CheckResult, check
from .regions import (
    LabelGeometry,
    LabelingMap,
    Partition,
    assign_labels,
    build_latent_domain,
    map_label_geometry,
    partition_domain,
)
from .studies import Study, make_study
from .systems import Dataset, load_dataset_csv, sample_dataset, save_dataset_csv, split_dataset

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

STAGE_ORDER = ["gen-data", "train-encoder", "map-regions", "fit-gp",
               "build-abstraction", "verify", "refine", "decode", "report"]

DEFAULTS = {
    "run": {"seed": 0, "name": "run"},
    "system": {"name": "Nonlinear3D"},
    "dataset": {"n": 5000, "fractions": [0.4, 0.4, 0.1]},
    "encoder": {"n_p": 2, "widths": [128, 64, 32, 16], "skip_at": [2],
                "passthrough": [], "alphas": [1.0, 0.1, 1.0, 0.01, 0.1],
                "epochs": 200, "batch": 128, "lr": 1e-3, "beta": 1.0,
                "rank_tol": 1e-6, "prior_var": 1.0,
                "spectral_caps": [], "skip_cap": 0.0},
    "regions": {"n_samples": 10_000, "delta": 0.05},
    "gp": {"max_points": 800, "mle_iters": 120, "mle_subset": 400,
           "c_rounds": 2, "c_steps": 40, "n_starts": 2, "feature_net": False,
           "jitter": 1e-6},
    "rkhs": {"l_g": 2.0, "c_b": 2.0},
    "partition": {"resolution": [10, 10]},
    "abstraction": {"n_u": 8, "grid": [4, 4, 2]},
    "refine": {"rounds": 5},
    "decode": {"max_cells": 10, "n_starts": 8, "budget": 600},
}


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config parse error in {path}: {e}")
    cfg = {}
    for table, defaults in DEFAULTS.items():
        merged = dict(defaults)
        extra = user.get(table, {})
        if not isinstance(extra, dict):
            raise ConfigError(f"[{table}] must be a table")
        merged.update(extra)
        cfg[table] = merged
    for table in user:
        if table not in DEFAULTS:
            raise ConfigError(f"unknown config table [{table}]")
    fr = cfg["dataset"]["fractions"]
    if len(fr) != 3 or any(f <= 0 for f in fr) or sum(fr) > 1.0 + 1e-12:
        raise ConfigError("dataset.fractions must be 3 positive numbers summing <= 1")
    return cfg


# ---------------------------------------------------------------------------
# paths + manifest


@dataclass
class RunPaths:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def p(self, rel):
        out = self.root / rel
        out.parent.mkdir(parents=True, exist_ok=True)
        return out

    @property
    def manifest(self):
        return self.p("manifest.json")

    @property
    def timings(self):
        return self.p("timings.json")


ARTIFACTS = {
    "gen-data": ["data/learn.csv", "data/regress.csv", "data/predict.csv"],
    "train-encoder": ["models/encoder.json", "models/latdyn.json",
                      "models/decoder.json", "models/audit.json"],
    "map-regions": ["regions/latent.json"],
    "fit-gp": ["models/gp.json"],
    "build-abstraction": ["abstraction/partition.json", "abstraction/labels.json",
                          "abstraction/nts.txt"],
    "verify": ["results/check.json"],
    "refine": ["results/refine_history.json"],
    "decode": ["results/decoded.json"],
    "report": ["report/partition.svg", "report/summary.csv", "report/manifest"],
}

INPUTS = {
    "gen-data": [],
    "train-encoder": ["data/learn.csv"],
    "map-regions": ["models/encoder.json"],
    "fit-gp": ["models/encoder.json", "data/regress.csv", "regions/latent.json"],
    "build-abstraction": ["regions/latent.json", "models/gp.json"],
    "verify": ["abstraction/nts.txt", "abstraction/partition.json"],
    "refine": ["abstraction/partition.json", "abstraction/labels.json",
               "abstraction/nts.txt", "models/gp.json", "regions/latent.json",
               "results/check.json"],
    "decode": ["abstraction/partition.json", "results/check.json",
               "models/encoder.json", "models/decoder.json"],
    "report": ["abstraction/partition.json", "abstraction/labels.json",
               "results/check.json", "regions/latent.json"],
}

PRODUCER = {art: stage for stage, arts in ARTIFACTS.items() for art in arts}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_manifest(paths: RunPaths) -> dict:
    if paths.manifest.exists():
        with open(paths.manifest) as fh:
            return json.load(fh)
    return {"format_version": 1, "stages": {}}


def save_manifest(paths: RunPaths, manifest: dict):
    with open(paths.manifest, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _check_inputs(stage, paths: RunPaths, manifest):
    recorded = {}
    for rel in INPUTS[stage]:
        f = paths.root / rel
        producer = PRODUCER.get(rel)
        prod_entry = manifest["stages"].get(producer)
        if prod_entry is None or not f.exists():
            raise MissingStage(f"stage {stage!r} needs {rel} from {producer!r}; run it first")
        want = prod_entry["outputs"].get(rel)
        have = _sha256(f)
        if want != have:
            raise StaleArtifact(f"stage {stage!r}: input {rel} changed since {producer!r} ran")
        recorded[rel] = have
    return recorded


def _record(stage, paths, manifest, inputs, constants, config_hash, seed):
    outputs = {rel: _sha256(paths.root / rel) for rel in ARTIFACTS[stage]}
    manifest["stages"][stage] = {
        "config_hash": config_hash,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "constants": constants,
    }
    save_manifest(paths, manifest)


def _already_done(stage, paths, manifest, inputs, config_hash) -> bool:
    entry = manifest["stages"].get(stage)
    if entry is None or entry.get("config_hash") != config_hash:
        return False
    if entry.get("inputs") != inputs:
        return False
    for rel, want in entry["outputs"].items():
        f = paths.root / rel
        if not f.exists() or _sha256(f) != want:
            return False
    return True


def _record_timing(paths: RunPaths, stage, seconds):
    data = {}
    if paths.timings.exists():
        with open(paths.timings) as fh:
            data = json.load(fh)
    data[stage] = round(seconds, 3)
    with open(paths.timings, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# polygon / partition / labeling serialization helpers


def _poly_to_json(poly: ConvexPolygon):
    return {"vertices": poly.vertices.tolist(), "degeneracy": poly.degeneracy}


def _poly_from_json(d) -> ConvexPolygon:
    return ConvexPolygon(np.array(d["vertices"], dtype=float), d["degeneracy"])


def _geometry_to_json(Z, eps_domain, L_h, geo: LabelGeometry):
    return {
        "Z": _poly_to_json(Z),
        "eps_domain": eps_domain,
        "L_h": L_h,
        "ap": geo.ap,
        "modes": geo.modes,
        "unders": {k: _poly_to_json(v) for k, v in geo.unders.items()},
        "part_overs": {k: [_poly_to_json(p) for p in v] for k, v in geo.part_overs.items()},
        "negation_overs": {k: [_poly_to_json(p) for p in v]
                           for k, v in geo.negation_overs.items()},
        "epsilons": {p.label: p.epsilon for p in geo.pairs},
    }


def _geometry_from_json(d):
    geo = LabelGeometry(
        ap=list(d["ap"]), modes=dict(d["modes"]),
        unders={k: _poly_from_json(v) for k, v in d["unders"].items()},
        part_overs={k: [_poly_from_json(p) for p in v] for k, v in d["part_overs"].items()},
        negation_overs={k: [_poly_from_json(p) for p in v]
                        for k, v in d["negation_overs"].items()},
        pairs=[],
    )
    return _poly_from_json(d["Z"]), d["eps_domain"], d["L_h"], geo


def _partition_to_json(part: Partition):
    return {
        "domain": _poly_to_json(part.domain),
        "los": part.los.tolist(),
        "his": part.his.tolist(),
        "boundary": part.boundary.tolist(),
    }


def _partition_from_json(d) -> Partition:
    return Partition(domain=_poly_from_json(d["domain"]),
                     los=np.array(d["los"], dtype=float),
                     his=np.array(d["his"], dtype=float),
                     boundary=np.array(d["boundary"], dtype=bool))


def _labels_to_json(lab: LabelingMap):
    return {"ap": lab.ap, "cells": [sorted(s) for s in lab.cell_labels]}


def _labels_from_json(d) -> LabelingMap:
    return LabelingMap(ap=list(d["ap"]),
                       cell_labels=[frozenset(c) for c in d["cells"]],
                       region_pairs=[])


def _check_to_json(res: CheckResult, partition: Partition, round_idx):
    areas = partition.clipped_areas()
    n = partition.n_cells
    interior = ~partition.boundary

    def area_of(qs):
        qs = [q for q in qs if q < n]
        return float(areas[qs].sum()) if qs else 0.0

    interior_area = float(areas[interior].sum())
    yes_interior = [q for q in res.q_yes if q < n and interior[q]]
    return {
        "round": round_idx,
        "q_yes": sorted(res.q_yes),
        "q_no": sorted(res.q_no),
        "q_unknown": sorted(res.q_unknown),
        "counts": {"yes": len(res.q_yes), "no": len(res.q_no),
                   "unknown": len(res.q_unknown)},
        "areas": {"yes": area_of(res.q_yes), "no": area_of(res.q_no),
                  "unknown": area_of(res.q_unknown)},
        "yes_fraction_interior_area": (float(areas[yes_interior].sum()) / interior_area
                                       if interior_area > 0 else 0.0),
        "n_cells": n,
    }


def _check_from_json(d) -> CheckResult:
    return CheckResult(frozenset(d["q_yes"]), frozenset(d["q_no"]),
                       frozenset(d["q_unknown"]))


# ---------------------------------------------------------------------------
# stages


class Runner:
    def __init__(self, config_path, run_dir, seed=None, rounds=None):
        self.cfg = load_config(config_path)
        if seed is not None:
            self.cfg["run"]["seed"] = int(seed)
        if rounds is not None:
            self.cfg["refine"]["rounds"] = int(rounds)
        self.paths = RunPaths(Path(run_dir))
        self.paths.root.mkdir(parents=True, exist_ok=True)
        cfg_bytes = json.dumps(self.cfg, sort_keys=True).encode()
        self.config_hash = hashlib.sha256(cfg_bytes).hexdigest()
        self.seed = int(self.cfg["run"]["seed"])
        self.study: Study = make_study(self.cfg["system"])

    # -- generic driver ----------------------------------------------------
    def run_stage(self, stage, log=print):
        manifest = load_manifest(self.paths)
        inputs = _check_inputs(stage, self.paths, manifest)
        if _already_done(stage, self.paths, manifest, inputs, self.config_hash):
            log(f"[{stage}] up to date (hash match); skipping")
            return False
        t0 = time.perf_counter()
        constants = getattr(self, "_stage_" + stage.replace("-", "_"))(log)
        _record(stage, self.paths, manifest, inputs, constants, self.config_hash, self.seed)
        _record_timing(self.paths, stage, time.perf_counter() - t0)
        log(f"[{stage}] done in {time.perf_counter() - t0:.1f}s")
        return True

    # -- individual stages ---------------------------------------------------
    def _stage_gen_data(self, log):
        n = int(self.cfg["dataset"]["n"])
        data = sample_dataset(self.study.system, n, self.seed)
        learn, regress, predict = split_dataset(data, self.cfg["dataset"]["fractions"])
        save_dataset_csv(learn, self.paths.p("data/learn.csv"))
        save_dataset_csv(regress, self.paths.p("data/regress.csv"))
        save_dataset_csv(predict, self.paths.p("data/predict.csv"))
        log(f"[gen-data] {len(learn)}/{len(regress)}/{len(predict)} pairs")
        return {"n": n, "sizes": [len(learn), len(regress), len(predict)]}

    def _stage_train_encoder(self, log):
        e = self.cfg["encoder"]
        learn = load_dataset_csv(self.paths.p("data/learn.csv"))
        caps = [float(c) for c in e["spectral_caps"]] or None
        skip_cap = float(e["skip_cap"]) or None
        nets = build_networks(
            n_x=self.study.system.state_dim, n_p=int(e["n_p"]),
            widths=tuple(e["widths"]), skip_at=tuple(e["skip_at"]),
            passthrough=tuple(e["passthrough"]), seed=self.seed + 1,
            beta=float(e["beta"]), spectral_caps=caps, skip_cap=skip_cap)
        weights = LossWeights(alphas=tuple(e["alphas"]))
        tcfg = TrainConfig(epochs=int(e["epochs"]), batch=int(e["batch"]),
                           lr=float(e["lr"]), rank_tol=float(e["rank_tol"]),
                           seed=self.seed + 1, prior_var=float(e["prior_var"]))
        enc, dyn, dec, history = train(learn, weights, tcfg, nets=nets)
        report = check_cico(enc, probes=16, rank_tol=tcfg.rank_tol,
                            rng=np.random.default_rng(self.seed + 101))
        L_h = lipschitz_bound(enc)
        with open(self.paths.p("models/encoder.json"), "w") as fh:
            json.dump(encoder_to_dict(enc), fh)
        with open(self.paths.p("models/latdyn.json"), "w") as fh:
            json.dump({"center": mlp_to_dict(dyn.center),
                       "radius": mlp_to_dict(dyn.radius_net)}, fh)
        with open(self.paths.p("models/decoder.json"), "w") as fh:
            json.dump(mlp_to_dict(dec), fh)
        audit = {
            "passed": report.passed,
            "nonneg_ok": report.nonneg_ok,
            "sigma_min_rel": report.sigma_min_rel,
            "rank_ok": report.rank_ok,
            "skip_injective": report.skip_injective,
            "jacobian_rank_ok": report.jacobian_rank_ok,
            "jacobian_min_rel": report.jacobian_min_rel,
            "lipschitz_bound": L_h,
            "final_losses": list(history[-1]),
        }
        with open(self.paths.p("models/audit.json"), "w") as fh:
            json.dump(audit, fh, indent=1)
        log(f"[train-encoder] final losses {tuple(round(v, 4) for v in history[-1])}, "
            f"audit={'PASS' if report.passed else 'FAIL'}, L_h={L_h:.3g}")
        return {"L_h": L_h, "audit_passed": report.passed}

    def _load_encoder(self):
        with open(self.paths.p("models/encoder.json")) as fh:
            return encoder_from_dict(json.load(fh))

    def _stage_map_regions(self, log):
        enc = self._load_encoder()
        L_h = lipschitz_bound(enc)
        r = self.cfg["regions"]
        N = int(r["n_samples"])
        delta = float(r["delta"])
        rng = np.random.default_rng(self.seed + 2)
        dom = self.study.domain_sampler()
        Z, eps_domain = build_latent_domain(enc.encode, dom, N, delta, L_h, rng)
        geo = map_label_geometry(self.study.regions, enc.encode, N, delta, L_h,
                                 rng, domain_sampler=dom)
        with open(self.paths.p("regions/latent.json"), "w") as fh:
            json.dump(_geometry_to_json(Z, eps_domain, L_h, geo), fh)
        eps_all = {p.label: p.epsilon for p in geo.pairs}
        log(f"[map-regions] Z area {Z.area():.4g}, eps per region {eps_all}")
        return {"N": N, "delta": delta, "L_h": L_h, "epsilons": eps_all}

    def _stage_fit_gp(self, log):
        enc = self._load_encoder()
        with open(self.paths.p("regions/latent.json")) as fh:
            Z, _, _, _ = _geometry_from_json(json.load(fh))
        regress = load_dataset_csv(self.paths.p("data/regress.csv"))
        g = self.cfg["gp"]
        gcfg = GpConfig(jitter=float(g["jitter"]), mle_iters=int(g["mle_iters"]),
                        mle_subset=int(g["mle_subset"]), c_rounds=int(g["c_rounds"]),
                        c_steps=int(g["c_steps"]), n_starts=int(g["n_starts"]),
                        feature_net=bool(g["feature_net"]), seed=self.seed + 3)
        rng = np.random.default_rng(self.seed + 3)
        Zd = enc.encode(regress.x)
        Zp = enc.encode(regress.x_plus)
        m = Zd.shape[0]
        max_pts = int(g["max_points"])
        if m > max_pts:
            idx = rng.choice(m, size=max_pts, replace=False)
            Zd, Zp = Zd[idx], Zp[idx]
        c = fit_latent_c(Zd, Zp, (0.0, 1.0), gcfg)
        model = fit_inclusion_gp(np.column_stack([Zd, c]), Zp, gcfg)
        lo, hi = Z.bbox()
        diam = float(np.linalg.norm(hi - lo))
        rk = self.cfg["rkhs"]
        B, d_star = rkhs_constants(float(rk["l_g"]), diam, float(rk["c_b"]),
                                   rk.get("b_user"))
        set_rkhs_constants(model, B=B, d_star=d_star)
        with open(self.paths.p("models/gp.json"), "w") as fh:
            json.dump(gp_to_dict(model), fh)
        sigs = [float(gd.kernel.signal_var) for gd in model.dims]
        log(f"[fit-gp] m={Zd.shape[0]}, B={B:.3g}, d*={d_star}, signal_var={sigs}")
        return {"m": int(Zd.shape[0]), "B": B, "d_star": d_star, "diam_Z": diam}

    def _load_gp(self):
        with open(self.paths.p("models/gp.json")) as fh:
            return gp_from_dict(json.load(fh))

    def _stage_build_abstraction(self, log):
        with open(self.paths.p("regions/latent.json")) as fh:
            Z, _, _, geo = _geometry_from_json(json.load(fh))
        model = self._load_gp()
        part = partition_domain(Z, self.cfg["partition"]["resolution"])
        labels = assign_labels(geo, part)
        a = self.cfg["abstraction"]
        nts = build_nts(part, labels, model, n_u=int(a["n_u"]), grid=tuple(a["grid"]))
        self._save_abstraction(part, labels, nts)
        log(f"[build-abstraction] {part.n_cells} cells "
            f"({int(part.boundary.sum())} boundary), |U|={a['n_u']}")
        return {"n_cells": part.n_cells, "n_u": int(a["n_u"]), "grid": list(a["grid"])}

    def _save_abstraction(self, part, labels, nts):
        with open(self.paths.p("abstraction/partition.json"), "w") as fh:
            json.dump(_partition_to_json(part), fh)
        with open(self.paths.p("abstraction/labels.json"), "w") as fh:
            json.dump(_labels_to_json(labels), fh)
        with open(self.paths.p("abstraction/nts.txt"), "w") as fh:
            fh.write(nts_to_text(nts))

    def _load_abstraction(self):
        with open(self.paths.p("abstraction/partition.json")) as fh:
            part = _partition_from_json(json.load(fh))
        with open(self.paths.p("abstraction/labels.json")) as fh:
            labels = _labels_from_json(json.load(fh))
        with open(self.paths.p("abstraction/nts.txt")) as fh:
            nts = nts_from_text(fh.read())
        return part, labels, nts

    def _stage_verify(self, log):
        part, labels, nts = self._load_abstraction()
        res = check(nts, self.study.phi_bar())
        payload = _check_to_json(res, part, round_idx=0)
        with open(self.paths.p("results/check.json"), "w") as fh:
            json.dump(payload, fh, indent=1)
        self._log_check(log, "verify", payload)
        return {"counts": payload["counts"], "areas": payload["areas"]}

    @staticmethod
    def _log_check(log, stage, payload):
        c = payload["counts"]
        a = payload["areas"]
        log(f"[{stage}] round {payload['round']}: "
            f"|Q_yes|={c['yes']} (area {a['yes']:.4g}), "
            f"|Q_no|={c['no']} (area {a['no']:.4g}), "
            f"|Q_?|={c['unknown']} (area {a['unknown']:.4g}); "
            f"yes interior-area fraction {payload['yes_fraction_interior_area']:.3f}")

    def _stage_refine(self, log):
        with open(self.paths.p("regions/latent.json")) as fh:
            _, _, _, geo = _geometry_from_json(json.load(fh))
        model = self._load_gp()
        part, labels, nts = self._load_abstraction()
        with open(self.paths.p("results/check.json")) as fh:
            payload = json.load(fh)
        res = _check_from_json(payload)
        a = self.cfg["abstraction"]
        history = [payload]
        rounds = int(self.cfg["refine"]["rounds"])
        for k in range(1, rounds + 1):
            part2, plan = refine(nts, res, part)
            if not plan.cells:
                log(f"[refine] round {k}: nothing to split; stopping")
                break
            part = part2
            labels = assign_labels(geo, part)
            nts = build_nts(part, labels, model, n_u=int(a["n_u"]), grid=tuple(a["grid"]))
            res = check(nts, self.study.phi_bar())
            payload = _check_to_json(res, part, round_idx=k)
            history.append(payload)
            self._log_check(log, "refine", payload)
        self._save_abstraction(part, labels, nts)
        with open(self.paths.p("results/check.json"), "w") as fh:
            json.dump(payload, fh, indent=1)
        with open(self.paths.p("results/refine_history.json"), "w") as fh:
            json.dump(history, fh, indent=1)
        # final abstraction changed: refresh the verify record too
        manifest = load_manifest(self.paths)
        if "verify" in manifest["stages"]:
            for rel in ("abstraction/partition.json", "abstraction/labels.json",
                        "abstraction/nts.txt"):
                manifest["stages"]["build-abstraction"]["outputs"][rel] = \
                    _sha256(self.paths.root / rel)
            manifest["stages"]["verify"]["outputs"]["results/check.json"] = \
                _sha256(self.paths.p("results/check.json"))
            manifest["stages"]["verify"]["inputs"] = {
                rel: _sha256(self.paths.root / rel) for rel in INPUTS["verify"]}
            save_manifest(self.paths, manifest)
        return {"rounds_run": payload["round"], "final": payload["counts"]}

    def _stage_decode(self, log):
        part, labels, nts = self._load_abstraction()
        with open(self.paths.p("results/check.json")) as fh:
            payload = json.load(fh)
        enc = self._load_encoder()
        with open(self.paths.p("models/decoder.json")) as fh:
            dec = mlp_from_dict(json.load(fh))
        d = self.cfg["decode"]
        space = self.study.search_space()
        yes_cells = [q for q in payload["q_yes"] if q < part.n_cells]
        rng = np.random.default_rng(self.seed + 4)
        if len(yes_cells) > int(d["max_cells"]):
            pick = rng.choice(len(yes_cells), size=int(d["max_cells"]), replace=False)
            yes_cells = [yes_cells[i] for i in sorted(pick)]
        out = {}
        n_ok = 0
        for q in yes_cells:
            try:
                res = decode_cell(enc, part.los[q], part.his[q], space, decoder=dec,
                                  n_starts=int(d["n_starts"]), budget=int(d["budget"]),
                                  seed=self.seed + 40 + q)
                out[str(q)] = {"x": res.x.tolist(), "v": np.asarray(res.v).tolist(),
                               "objective": res.objective, "converged": True}
                n_ok += 1
            except NotConverged as e:
                out[str(q)] = {"converged": False, "error": str(e)}
        with open(self.paths.p("results/decoded.json"), "w") as fh:
            json.dump(out, fh, indent=1)
        log(f"[decode] {n_ok}/{len(yes_cells)} cells decoded")
        return {"attempted": len(yes_cells), "decoded": n_ok}

    def _stage_report(self, log):
        from .report import write_report

        part, labels, nts = self._load_abstraction()
        with open(self.paths.p("results/check.json")) as fh:
            payload = json.load(fh)
        with open(self.paths.p("regions/latent.json")) as fh:
            Z, _, _, geo = _geometry_from_json(json.load(fh))
        history = [payload]
        hist_file = self.paths.root / "results/refine_history.json"
        if hist_file.exists():
            with open(hist_file) as fh:
                history = json.load(fh)
        write_report(self.paths.p("report/partition.svg"),
                     self.paths.p("report/summary.csv"),
                     part, labels, payload, geo, Z, history)
        manifest_copy = self.paths.p("report/manifest")
        manifest_copy.write_text(self.paths.manifest.read_text())
        log(f"[report] wrote {self.paths.p('report/partition.svg')}")
        return {"rounds": len(history)}


def run_command(command, config_path, run_dir, seed=None, rounds=None, log=print):
    runner = Runner(config_path, run_dir, seed=seed, rounds=rounds)
    lock = runner.paths.root / ".lock"
    if lock.exists():
        raise ConfigError(f"run directory locked by another run: {lock}")
    lock.write_text(str(os.getpid()))
    try:
        runner.run_stage(command, log=log)
    finally:
        lock.unlink(missing_ok=True)
    return runner
