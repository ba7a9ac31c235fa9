"""Command-line experiment harness.

Usage: ``python -m edgeofchaos <command> [options]``. Every run writes its
artifacts plus ``manifest.json`` (resolved arguments, input and artifact
sha256 checksums) into ``--output-dir``; ``replay MANIFEST`` re-runs a
manifest and compares checksums.

Exit codes: 0 success, 2 invalid input or arguments, 1 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, activations, data, dynamics, esn, mlp, optim

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2

# Arguments that only steer where output goes; kept out of manifests.
_NOT_RECORDED = {"output_dir", "config", "handler", "command"}


class UsageError(ValueError):
    pass


class ReplayMismatch(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _plain(obj):
    """JSON-safe copy: numpy types unwrapped, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Run:
    """Output directory for one command; records every artifact written."""

    def __init__(self, out_dir, fmt: str = "csv"):
        self.dir = Path(out_dir)
        self.fmt = fmt
        self.artifacts: list[str] = []
        self.inputs: dict[str, str] = {}

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.artifacts:
            self.artifacts.append(name)
        return p

    def input(self, path) -> Path:
        p = Path(path).resolve()
        if not p.is_file():
            raise UsageError(f"input file not found: {path}")
        self.inputs[str(p)] = _sha256(p)
        return p

    def write_bytes(self, name: str, payload: bytes) -> None:
        self.path(name).write_bytes(payload)

    def write_text(self, name: str, text: str) -> None:
        self.write_bytes(name, text.encode("utf-8"))

    def write_json(self, name: str, obj) -> None:
        self.write_text(name, json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")

    def write_table(self, stem: str, header: Sequence[str], rows: Sequence[Sequence]) -> str:
        if self.fmt == "json":
            name = f"{stem}.json"
            self.write_json(name, [dict(zip(header, r)) for r in rows])
            return name
        name = f"{stem}.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        self.write_text(name, buf.getvalue())
        return name

    def manifest(self, command: Sequence[str], arguments: dict) -> dict:
        return {"program": "edgeofchaos", "version": __version__, "command": list(command),
                "arguments": _plain(arguments), "inputs": dict(sorted(self.inputs.items())),
                "artifacts": {n: _sha256(self.dir / n) for n in sorted(self.artifacts)}}


# --------------------------------------------------------------------------
# Argument helpers


def parse_int_range(text: str) -> tuple[int, int]:
    """``"1..4"`` -> (1, 4)."""
    lo, sep, hi = str(text).partition("..")
    try:
        lo_i, hi_i = int(lo), int(hi)
    except ValueError:
        raise UsageError(f"expected a range like 1..4, got {text!r}") from None
    if not sep or lo_i >= hi_i:
        raise UsageError(f"expected an increasing range like 1..4, got {text!r}")
    return lo_i, hi_i


def parse_float_range(text: str) -> list[float]:
    """``"0.4:0.9:0.05"`` -> [0.4, 0.45, ..., 0.9] (inclusive, rounded to 12 places)."""
    parts = str(text).split(":")
    try:
        a, b, step = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"expected start:stop:step, got {text!r}") from None
    if not step > 0 or b < a:
        raise UsageError(f"range {text!r} needs step > 0 and stop >= start")
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return [round(a + k * step, 12) for k in range(count)]


def parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def parse_ridge_grid(text: str) -> list[float]:
    """Comma list where ``a..b`` expands to decades, e.g. ``0,1e-6..1``."""
    out: list[float] = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        if ".." in item:
            lo_s, _, hi_s = item.partition("..")
            try:
                lo, hi = float(lo_s), float(hi_s)
            except ValueError:
                raise UsageError(f"bad ridge range {item!r}") from None
            if not 0 < lo <= hi:
                raise UsageError(f"ridge range {item!r} needs 0 < start <= stop")
            k0, k1 = round(math.log10(lo)), round(math.log10(hi))
            out.extend(float(f"1e{k}") for k in range(k0, k1 + 1))
        else:
            try:
                out.append(float(item))
            except ValueError:
                raise UsageError(f"bad ridge value {item!r}") from None
    if not out or any(v < 0 for v in out):
        raise UsageError("ridge grid must be non-empty and non-negative")
    return out


def _activation(text: str) -> activations.ActivationFn:
    return activations.parse_activation(text)


def _load_series(run: Run, path, column) -> np.ndarray:
    series = data.load_csv_series(run.input(path))
    if series.rejected_rows:
        print(f"rejected_rows={','.join(map(str, series.rejected_rows))}", file=sys.stderr)
    if len(series) == 0:
        raise UsageError(f"{path}: no usable rows")
    col = str(column)
    if col in series.columns:
        j = series.columns.index(col)
    else:
        try:
            j = int(col)
        except ValueError:
            raise UsageError(f"unknown column {column!r}; have {series.columns}") from None
        if not 0 <= j < len(series.columns):
            raise UsageError(f"column index {j} out of range")
    return series.values[:, j]


def _esn_config(ns, layers: int | None = None, width: int | None = None) -> esn.DeepEsnConfig:
    cfg = esn.DeepEsnConfig(
        num_layers=ns.layers if layers is None else layers,
        reservoir_size=ns.width if width is None else width, spectral_radius=ns.spectral_radius,
        input_scaling=ns.input_scaling, inter_scaling=ns.inter_scaling, bias_scaling=ns.bias_scaling,
        leak_rate=ns.leak_rate, washout=ns.washout, ridge_lambda=ns.ridge, density=ns.density,
        preactivation_clip=ns.clip, activation=_activation(ns.activation), seed=ns.seed)
    cfg.validate()
    return cfg


def _split(ns, length: int) -> data.ChronoSplit:
    return data.chrono_split(length, *data.parse_ratios(ns.split))


# --------------------------------------------------------------------------
# Commands


def cmd_spectra(ns, run: Run) -> None:
    act = _activation(ns.activation)
    if ns.order < 0:
        raise UsageError("order must be >= 0")
    report = activations.verified_spectrum(act, ns.order)
    out = report.spectrum.to_dict()
    out["activation"] = act.spec_string()
    run.write_json("spectrum.json", out)
    if report.closed_form is not None:
        run.write_json("discrepancy.json", report.to_dict())
    coeffs = " ".join(f"a{n}={v:.6g}" for n, v in enumerate(report.spectrum.coefficients))
    print(f"activation={act.spec_string()} {coeffs}")
    if report.closed_form is not None:
        print(f"max_abs_difference={report.max_discrepancy:.6g}")


def cmd_design(ns, run: Run) -> None:
    profile = activations.HpDesignProfile(ns.max, ns.min, ns.gap, ns.n, ns.layout)
    act = activations.synthesize_hp(profile)
    activations.save_hp(act, run.path("hp.json"))
    print(f"activation={act.spec_string()} coefficients={','.join(map(repr, act.spectrum.coefficients))}")


def _orthogonal(width: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(width, width)))
    return q * np.sign(np.diag(r))


def _criticality_net(ns, run: Run) -> dynamics.LayeredNet:
    if ns.net:
        return dynamics.LayeredNet.from_dict(json.loads(run.input(ns.net).read_text()))
    act = _activation(ns.activation)
    rng = np.random.default_rng(ns.seed)
    if ns.net_kind == "scaled-identity":
        w = ns.scale * np.eye(ns.width)
    elif ns.net_kind == "orthogonal":
        w = ns.scale * _orthogonal(ns.width, rng)
    else:
        return dynamics.LayeredNet.random_gaussian(ns.width, ns.depth, act, ns.scale, ns.seed)
    return dynamics.LayeredNet.repeated(w, np.zeros(ns.width), ns.depth, act)


def _recurrence(ns, states) -> dynamics.RecurrencePlot:
    eps = ns.epsilon if ns.epsilon is not None else dynamics.epsilon_from_fraction(states, ns.epsilon_fraction)
    return dynamics.recurrence_plot(states, eps)


def cmd_criticality(ns, run: Run) -> None:
    if ns.esn_model:
        if not ns.data:
            raise UsageError("--esn-model needs --data")
        model_path = run.input(Path(ns.esn_model).with_suffix(".json"))
        run.input(model_path.with_suffix(".npz"))
        trained = esn.TrainedEsn.load(model_path)
        series = _load_series(run, ns.data, ns.column)
        states = esn.concat_states(esn.run_states(trained.reservoir, series))
        plot = _recurrence(ns, states)
        report = {"source": "esn", "states": len(states), "recurrence_rate": plot.recurrence_rate,
                  "epsilon": plot.threshold}
    else:
        net = _criticality_net(ns, run)
        rng = np.random.default_rng(ns.seed + 1)
        if ns.trajectory:
            traj = data.load_csv_series(run.input(ns.trajectory)).values
        else:
            traj = rng.normal(size=(ns.steps, net.widths[0]))
        crit = dynamics.lyapunov(net, list(traj), ns.edge_tolerance, ns.singular_fallback)
        final = [dynamics.forward(net, x)[-1] for x in traj]
        plot = _recurrence(ns, final)
        report = crit.to_dict()
        report.update({"source": "net", "recurrence_rate": plot.recurrence_rate, "epsilon": plot.threshold})
        if not ns.net:
            run.write_json("net.json", net.to_dict())
        print(f"lambda={crit.lyapunov!r} regime={crit.regime}")
    run.write_json("report.json", report)
    run.write_bytes("recurrence.pgm", plot.to_pgm())
    run.write_text("recurrence.csv", plot.to_csv())
    print(f"recurrence_rate={plot.recurrence_rate!r}")


def _prediction_rows(pred, obs, threshold, offset):
    rows = []
    for i, (p, o) in enumerate(zip(pred, obs)):
        err = abs(p - o)
        rows.append([offset + i, o, p, err, err > threshold])
    return rows


PREDICTION_HEADER = ["time_index", "observed", "predicted", "error", "flagged"]


def cmd_esn_train(ns, run: Run) -> None:
    series = _load_series(run, ns.data, ns.column)
    cfg = _esn_config(ns)
    split = _split(ns, len(series))
    if ns.sweep_ridge:
        res = esn.build(cfg)
        rows = []
        for lam in parse_ridge_grid(ns.sweep_ridge):
            try:
                ev = esn.evaluate_split(esn.with_updates(cfg, ridge_lambda=lam), series, split,
                                        ns.horizon, reservoir=res)
                rows.append([lam, ev.train.rmse, ev.validation.rmse, ev.test.rmse])
            except esn.SingularReadoutError:
                rows.append([lam, None, None, None])
            print(f"ridge_lambda={lam!r} test_rmse={rows[-1][3]!r}")
        run.write_table("ridge_sweep", ["ridge_lambda", "train_rmse", "validation_rmse", "test_rmse"], rows)
        return
    ev = esn.evaluate_split(cfg, series, split, ns.horizon)
    ev.trained.save(run.path("model.json"))
    run.path("model.npz")
    rows = [[name, m.mae, m.rmse, m.mape] for name, m in
            (("train", ev.train), ("validation", ev.validation), ("test", ev.test))]
    run.write_table("metrics", ["split", "mae", "rmse", "mape"], rows)
    threshold = ns.threshold if ns.threshold is not None else esn.default_anomaly_threshold(ev.validation.rmse)
    start = split.validation.start
    pred_rows = _prediction_rows(ev.predictions[start:, 0], series[start:], threshold, start)
    run.write_table("predictions", PREDICTION_HEADER, pred_rows)
    flagged = sum(1 for r in pred_rows if r[-1])
    for name, m in zip(("train", "validation", "test"), (ev.train, ev.validation, ev.test)):
        print(f"split={name} mae={m.mae!r} rmse={m.rmse!r} mape={m.mape!r}")
    print(f"threshold={threshold!r} flagged={flagged}")


def cmd_esn_predict(ns, run: Run) -> None:
    model_path = run.input(Path(ns.model).with_suffix(".json"))
    run.input(model_path.with_suffix(".npz"))
    trained = esn.TrainedEsn.load(model_path)
    series = _load_series(run, ns.data, ns.column)
    h = trained.horizon
    if len(series) <= h:
        raise UsageError("series is shorter than the model's horizon")
    pred = esn.predict(trained, series)[:-h, 0]
    obs = series[h:]
    threshold = ns.threshold if ns.threshold is not None else esn.default_anomaly_threshold(trained.train_rmse)
    w = min(trained.config.washout, len(obs) - 1)
    rows = _prediction_rows(pred[w:], obs[w:], threshold, w + h)
    run.write_table("predictions", PREDICTION_HEADER, rows)
    m = data.metrics(pred[w:], obs[w:])
    run.write_table("metrics", ["split", "mae", "rmse", "mape"], [["all", m.mae, m.rmse, m.mape]])
    print(f"mae={m.mae!r} rmse={m.rmse!r} mape={m.mape!r} flagged={sum(1 for r in rows if r[-1])}")


def cmd_esn_evolve(ns, run: Run) -> None:
    series = _load_series(run, ns.data, ns.column)
    d_lo, d_hi = parse_int_range(ns.depth)
    w_lo, w_hi = parse_int_range(ns.width)
    if d_lo < 1 or w_lo < 1:
        raise UsageError("depth and width ranges must start at >= 1")
    template = _esn_config(ns, d_lo, w_lo)
    split = _split(ns, len(series))
    space = optim.SearchSpace((float(d_lo), float(w_lo)), (float(d_hi), float(w_hi)),
                              (optim.INTEGER, optim.INTEGER), ("depth", "width"))
    evo = optim.evolve_esn(series, split, template, space, budget=ns.budget, population=ns.population,
                           seed=ns.seed, horizon=ns.horizon, snapshot_window=ns.snapshot_window,
                           epsilon_fraction=ns.epsilon_fraction)
    res = evo.result
    run.write_table("history", ["generation", "best_fitness", "depth", "width"],
                    [[g, f, int(p[0]), int(p[1])] for g, (f, p) in enumerate(zip(res.history, res.best_positions))])
    run.write_table("snapshots", ["generation", "depth", "width", "fitness", "recurrence_rate"],
                    [[s.generation, s.depth, s.width, s.fitness, s.recurrence_rate] for s in evo.snapshots])
    for s in evo.snapshots:
        if s.states.size:
            plot = dynamics.recurrence_plot(s.states, dynamics.epsilon_from_fraction(s.states, ns.epsilon_fraction))
            run.write_bytes(f"recurrence/generation_{s.generation:03d}.pgm", plot.to_pgm())
    run.write_json("best_config.json", evo.best_config.to_dict())
    for g, (f, p) in enumerate(zip(res.history, res.best_positions)):
        print(f"generation={g} best_fitness={f!r} depth={int(p[0])} width={int(p[1])}")


def _mlp_dataset(ns, run: Run) -> data.LabeledDataset:
    if ns.dataset == "blobs":
        return data.make_blobs(ns.samples, ns.centers, 2, ns.spread, ns.separation, ns.seed)
    if ns.dataset == "moons":
        return data.make_moons(ns.samples, ns.noise, ns.seed)
    if not (ns.images and ns.labels):
        raise UsageError("--dataset idx needs --images and --labels")
    return data.load_idx(run.input(ns.images), run.input(ns.labels), ns.downsample)


def _hidden(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--hidden expects comma-separated integers, got {text!r}") from None
    return widths


def _mlp_config(ns, ds: data.LabeledDataset, act=None) -> mlp.MlpConfig:
    classes = ns.classes or int(np.max(ds.labels)) + 1
    cfg = mlp.MlpConfig(widths=(ds.features.shape[1], *_hidden(ns.hidden), classes),
                        activation=act or _activation(ns.activation), learning_rate=ns.lr,
                        batch_size=ns.batch, epochs=ns.epochs, seed=ns.seed, loss=ns.loss)
    cfg.validate()
    return cfg


GRADIENT_TOLERANCE = 1e-4


def cmd_mlp_train(ns, run: Run) -> None:
    ds = _mlp_dataset(ns, run)
    cfg = _mlp_config(ns, ds)
    probe = data.LabeledDataset(ds.features[:16], np.asarray(ds.labels)[:16])
    err = mlp.gradient_check(cfg, probe)
    print(f"gradient_check={err!r}")
    if not err <= GRADIENT_TOLERANCE:
        raise RuntimeError(f"gradient check failed: relative error {err:.3g} > {GRADIENT_TOLERANCE}")
    try:
        trace = mlp.train(cfg, ds)
        diverged = None
    except mlp.TrainingDiverged as exc:
        trace, diverged = exc.trace, exc.epoch
    run.write_table("trace", ["epoch", "loss"], [[i + 1, v] for i, v in enumerate(trace.losses)])
    run.write_json("summary.json", {"activation": cfg.activation.spec_string(), "gradient_check": err,
                                    "final_loss": trace.losses[-1], "final_accuracy": trace.final_accuracy,
                                    "diverged_at_epoch": diverged,
                                    "loss_roughness": mlp.loss_roughness(trace.losses)})
    print(f"final_loss={trace.losses[-1]!r} final_accuracy={trace.final_accuracy!r}")
    if diverged is not None:
        print(f"diverged_at_epoch={diverged}")


_PROFILE_FIELDS = {"max-coeff": "max_coeff", "min-coeff": "min_coeff", "spacing": "spacing"}


def cmd_mlp_sweep(ns, run: Run) -> None:
    if (ns.range is None) == (ns.values is None):
        raise UsageError("give exactly one of --range or --values")
    values = parse_float_range(ns.range) if ns.range is not None else parse_values(ns.values)
    ds = _mlp_dataset(ns, run)
    base_act = _activation(ns.activation)
    if ns.param == "batch":
        if any(v < 1 or not float(v).is_integer() for v in values):
            raise UsageError("batch sizes must be positive integers")
        values = [int(v) for v in values]
        base = _mlp_config(ns, ds, base_act)
        configs = [mlp.with_updates(base, batch_size=v) for v in values]
    else:
        profile = base_act.spectrum.meta.get("profile") if base_act.kind == "hp" and base_act.spectrum else None
        if profile is None:
            raise UsageError("coefficient sweeps need an HP activation with a design profile (e.g. hp, hp:max=...)")
        field_name = _PROFILE_FIELDS[ns.param]
        configs = []
        for v in values:
            p = activations.HpDesignProfile(**{**profile.__dict__, field_name: v})
            configs.append(_mlp_config(ns, ds, activations.synthesize_hp(p)))
    rows = mlp.sweep(configs, ds, values, ns.threshold_factor)
    name = run.write_table("sweep", mlp.SWEEP_HEADER,
                           [[r.config_id, r.param_value, r.final_loss, r.epochs_to_threshold, r.diverged]
                            for r in rows])
    run.write_table("traces", ["config_id", "epoch", "loss"],
                    [[r.config_id, i + 1, v] for r in rows for i, v in enumerate(r.trace.losses)])
    best = mlp.best_param(rows)
    run.write_json("summary.json", {"param": ns.param, "best_param": best, "sweep": name,
                                    "loss_roughness": {str(r.param_value): mlp.loss_roughness(r.trace.losses)
                                                       for r in rows}})
    for r in rows:
        print(f"config_id={r.config_id} param_value={r.param_value!r} final_loss={r.final_loss!r} "
              f"epochs_to_threshold={r.epochs_to_threshold} diverged={int(r.diverged)}")
    print(f"best_param={best!r}")


def cmd_datagen(ns, run: Run) -> None:
    kind = ns.kind
    if kind == "mackey-glass":
        series = data.mackey_glass(ns.length, tau=ns.tau, seed=ns.seed, transient=ns.transient)
        data.write_csv_series(run.path("series.csv"), series, ["value"])
        print(f"length={len(series)} min={float(series.min())!r} max={float(series.max())!r}")
    elif kind in ("blobs", "moons"):
        if kind == "blobs":
            ds = data.make_blobs(ns.samples, ns.centers, ns.dim, ns.spread, ns.separation, ns.seed)
        else:
            ds = data.make_moons(ns.samples, ns.noise, ns.seed)
        cols = [f"x{j}" for j in range(ds.features.shape[1])]
        rows = [[*map(float, x), int(y)] for x, y in zip(ds.features, ds.labels)]
        run.write_table("dataset", [*cols, "label"], rows)
        print(f"samples={len(ds)} features={len(cols)}")
    else:
        images, labels = data.idx_fixture(ns.count, ns.seed, ns.size)
        data.write_idx_images(run.path("images.idx"), images)
        data.write_idx_labels(run.path("labels.idx"), labels)
        print(f"count={len(labels)} size={ns.size}")


# --------------------------------------------------------------------------
# Parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--output-dir", default="out", help="directory for artifacts and manifest.json")
    g.add_argument("--seed", type=int, default=0, help="seed for every random draw in the run")
    g.add_argument("--format", choices=("csv", "json"), default="csv", help="format of tabular outputs")
    g.add_argument("--config", help="JSON file of option defaults (command-line flags take precedence)")
    return p


def _esn_options(p: argparse.ArgumentParser, shape: bool = True) -> None:
    p.add_argument("--data", required=True, help="CSV series, one timestep per row")
    p.add_argument("--column", default="0", help="column name or index to model")
    p.add_argument("--split", default="0.7:0.1:0.2", help="train:validation:test ratios")
    p.add_argument("--horizon", type=int, default=1)
    if shape:
        p.add_argument("--layers", type=int, default=2)
        p.add_argument("--width", type=int, default=100, help="units per reservoir layer")
    p.add_argument("--spectral-radius", type=float, default=0.9)
    p.add_argument("--input-scaling", type=float, default=0.5)
    p.add_argument("--inter-scaling", type=float, default=0.5)
    p.add_argument("--bias-scaling", type=float, default=0.0)
    p.add_argument("--leak-rate", type=float, default=1.0)
    p.add_argument("--washout", type=int, default=100)
    p.add_argument("--ridge", type=float, default=1e-8)
    p.add_argument("--density", type=float, default=0.1)
    p.add_argument("--clip", type=float, default=None, help="clamp reservoir pre-activations to [-clip, clip]")
    p.add_argument("--activation", default="tanh")


def _mlp_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", choices=("blobs", "moons", "idx"), default="blobs")
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--centers", type=int, default=2)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--downsample", type=int, default=1)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--hidden", default="16,16", help="hidden layer widths")
    p.add_argument("--activation", default="sigmoid")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--loss", choices=(mlp.CROSS_ENTROPY, mlp.SQUARED_ERROR), default=mlp.CROSS_ENTROPY)


def build_parser() -> tuple[argparse.ArgumentParser, dict[tuple[str, ...], argparse.ArgumentParser]]:
    common = _common()
    parser = argparse.ArgumentParser(prog="edgeofchaos", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    leaves: dict[tuple[str, ...], argparse.ArgumentParser] = {}

    def leaf(container, name, handler: Callable, path: tuple[str, ...], help_text: str):
        p = container.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(handler=handler, command_path=path)
        leaves[path] = p
        return p

    p = leaf(sub, "spectra", cmd_spectra, ("spectra",), "Hermite spectrum of an activation")
    p.add_argument("--activation", required=True)
    p.add_argument("--order", type=int, default=10)

    p = leaf(sub, "design", cmd_design, ("design",), "synthesize an HP activation file")
    d = activations.DEFAULT_PROFILE
    p.add_argument("--max", type=float, default=d.max_coeff)
    p.add_argument("--min", type=float, default=d.min_coeff)
    p.add_argument("--gap", type=float, default=d.spacing)
    p.add_argument("--n", type=int, default=d.num_terms)
    p.add_argument("--layout", choices=("consecutive", "odd", "even"), default=d.layout)

    p = leaf(sub, "criticality", cmd_criticality, ("criticality",), "Lyapunov regime and recurrence plot")
    p.add_argument("--net", help="LayeredNet JSON file")
    p.add_argument("--net-kind", choices=("scaled-identity", "orthogonal", "gaussian"), default="gaussian")
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--scale", type=float, default=1.0, help="weight scale (gain for gaussian)")
    p.add_argument("--activation", default="tanh")
    p.add_argument("--steps", type=int, default=50, help="random input vectors in the trajectory")
    p.add_argument("--trajectory", help="CSV of input vectors, one per row")
    p.add_argument("--esn-model", help="trained ESN (model.json) whose states to analyse")
    p.add_argument("--data", help="CSV series driving --esn-model")
    p.add_argument("--column", default="0")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--epsilon-fraction", type=float, default=dynamics.DEFAULT_EPSILON_FRACTION)
    p.add_argument("--edge-tolerance", type=float, default=dynamics.DEFAULT_EDGE_TOLERANCE)
    p.add_argument("--singular-fallback", action="store_true")

    esn_p = sub.add_parser("esn", help="deep echo state networks")
    esn_sub = esn_p.add_subparsers(dest="esn_command", required=True)
    p = leaf(esn_sub, "train", cmd_esn_train, ("esn", "train"), "train and score on a chronological split")
    _esn_options(p)
    p.add_argument("--threshold", type=float, default=None, help="anomaly threshold (default 3x validation RMSE)")
    p.add_argument("--sweep-ridge", default=None, help="ridge grid, e.g. 0,1e-6..1")
    p = leaf(esn_sub, "predict", cmd_esn_predict, ("esn", "predict"), "predict with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--column", default="0")
    p.add_argument("--threshold", type=float, default=None)
    p = leaf(esn_sub, "evolve", cmd_esn_evolve, ("esn", "evolve"), "evolve depth and width")
    _esn_options(p, shape=False)
    p.add_argument("--depth", default="1..4", help="depth range, e.g. 1..4")
    p.add_argument("--width", default="50..500", help="width range, e.g. 50..500")
    p.add_argument("--budget", type=int, default=6, help="generations")
    p.add_argument("--population", type=int, default=8)
    p.add_argument("--snapshot-window", type=int, default=200)
    p.add_argument("--epsilon-fraction", type=float, default=dynamics.DEFAULT_EPSILON_FRACTION)

    mlp_p = sub.add_parser("mlp", help="small fully-connected networks")
    mlp_sub = mlp_p.add_subparsers(dest="mlp_command", required=True)
    p = leaf(mlp_sub, "train", cmd_mlp_train, ("mlp", "train"), "gradient-check then train")
    _mlp_options(p)
    p = leaf(mlp_sub, "sweep", cmd_mlp_sweep, ("mlp", "sweep"), "sweep an HP profile field or batch size")
    _mlp_options(p)
    p.set_defaults(activation="hp")
    p.add_argument("--param", choices=("max-coeff", "min-coeff", "spacing", "batch"), required=True)
    p.add_argument("--range", default=None, help="start:stop:step")
    p.add_argument("--values", default=None, help="comma-separated values")
    p.add_argument("--threshold-factor", type=float, default=1.1)

    gen_p = sub.add_parser("datagen", help="generate datasets")
    gen_sub = gen_p.add_subparsers(dest="kind", required=True)
    p = leaf(gen_sub, "mackey-glass", cmd_datagen, ("datagen", "mackey-glass"), "Mackey-Glass series")
    p.add_argument("--length", type=int, default=1500)
    p.add_argument("--tau", type=float, default=17.0)
    p.add_argument("--transient", type=int, default=500)
    p = leaf(gen_sub, "blobs", cmd_datagen, ("datagen", "blobs"), "Gaussian blobs")
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--centers", type=int, default=2)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--spread", type=float, default=0.6)
    p.add_argument("--separation", type=float, default=3.0)
    p = leaf(gen_sub, "moons", cmd_datagen, ("datagen", "moons"), "two interleaved half circles")
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--noise", type=float, default=0.1)
    p = leaf(gen_sub, "idx-fixture", cmd_datagen, ("datagen", "idx-fixture"), "synthetic IDX images/labels")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, default=28)

    p = sub.add_parser("replay", help="re-run a manifest and compare artifact checksums")
    p.add_argument("manifest")
    p.add_argument("--output-dir", default=None, help="defaults to a 'replay' folder next to the manifest")
    return parser, leaves


def _leaf_path(argv: Sequence[str], leaves) -> tuple[str, ...] | None:
    words = []
    for tok in argv:
        if tok.startswith("-"):
            break
        words.append(tok)
    for n in range(len(words), 0, -1):
        if tuple(words[:n]) in leaves:
            return tuple(words[:n])
    return None


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` become defaults under explicit flags."""
    parser, leaves = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    path = _leaf_path(argv, leaves)
    if known.config and path is not None:
        cfg_path = Path(known.config)
        try:
            overrides = json.loads(cfg_path.read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {cfg_path}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise UsageError("config file must hold a JSON object")
        overrides = {k.replace("-", "_"): v for k, v in overrides.items()}
        leaf = leaves[path]
        actions = {a.dest: a for a in leaf._actions if a.dest != "help"}
        unknown = sorted(k for k in overrides if k not in actions or k in _NOT_RECORDED)
        if unknown:
            raise UsageError(f"config has unknown keys: {', '.join(unknown)}")
        for k in overrides:
            actions[k].required = False
        leaf.set_defaults(**overrides)
    return parser.parse_args(argv)


def recorded_arguments(ns: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(ns).items())
            if k not in _NOT_RECORDED and k not in ("command_path", "esn_command", "mlp_command", "kind")}


def execute(ns: argparse.Namespace) -> Run:
    run = Run(ns.output_dir, ns.format)
    ns.handler(ns, run)
    manifest = run.manifest(ns.command_path, recorded_arguments(ns))
    run.path("manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return run


def replay(manifest_path, output_dir=None) -> dict[str, bool]:
    """Re-run a manifest; returns per-artifact checksum agreement."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    parser, leaves = build_parser()
    path = tuple(manifest["command"])
    if path not in leaves:
        raise UsageError(f"manifest names unknown command {' '.join(path)}")
    for src, digest in manifest.get("inputs", {}).items():
        if not Path(src).is_file() or _sha256(Path(src)) != digest:
            raise UsageError(f"input {src} is missing or has changed since the recorded run")
    defaults = vars(leaves[path].parse_args(_required_stub(leaves[path])))
    args = {**defaults, **manifest["arguments"]}
    out = Path(output_dir) if output_dir else manifest_path.parent / "replay"
    args.update(output_dir=str(out), config=None)
    ns = argparse.Namespace(**args)
    ns.command_path = path
    if path[0] == "datagen":
        ns.kind = path[1]
    run = execute(ns)
    new = json.loads((run.dir / "manifest.json").read_text())["artifacts"]
    old = manifest["artifacts"]
    return {name: new.get(name) == old.get(name) for name in sorted(set(old) | set(new))}


def _required_stub(p: argparse.ArgumentParser) -> list[str]:
    """Dummy values for required options so a leaf parser yields its defaults."""
    stub = []
    for action in p._actions:
        if action.required and action.option_strings:
            stub += [action.option_strings[0], action.choices[0] if action.choices else "x"]
    return stub


def main(argv: Sequence[str] | None = None) -> int:
    if argv is not None:
        argv = [str(a) for a in argv]
    try:
        ns = parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if ns.command == "replay":
            result = replay(ns.manifest, ns.output_dir)
            for name, same in result.items():
                print(f"artifact={name} match={int(same)}")
            if not all(result.values()):
                raise ReplayMismatch("replayed artifacts differ from the manifest")
            return EXIT_OK
        execute(ns)
        return EXIT_OK
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort reporting for the CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
