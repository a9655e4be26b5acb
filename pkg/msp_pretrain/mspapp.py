"""The msp command line application."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import logging
import os
import sys
import typing as t

import numpy as np
from jupyter_core.application import JupyterApp, base_aliases, base_flags
from jupyter_core.utils import ensure_dir_exists
from jupyter_events.logger import EventLogger
from tornado.log import LogFormatter
from traitlets import Bool, Enum, Instance, Integer, List, TraitError, Unicode, default
from traitlets.config.loader import KVArgParseConfigLoader

from msp_pretrain import DEFAULT_EVENTS_SCHEMA_PATH, MSP_EVENTS_URI, __version__
from msp_pretrain.config_manager import load_run_config, parse_run_config, render_run_config
from msp_pretrain.exceptions import EmptyInputError, MspError
from msp_pretrain.fileio import atomic_writing, file_checksum, write_manifest
from msp_pretrain.log import log_level_from_env
from msp_pretrain.pipeline.checkpoints import FileCheckpoints, extract_encoder, load_checkpoint
from msp_pretrain.pipeline.config import MspConfig
from msp_pretrain.pipeline.model import ModelSpec
from msp_pretrain.pipeline.trainer import METRICS_NAME, pretrain
from msp_pretrain.probes.compare import compare_runs
from msp_pretrain.probes.config import ProbeConfig
from msp_pretrain.probes.leakage import LEAKAGE_HEADER, leakage_probe_scenes, read_leakage_csv
from msp_pretrain.probes.linear import PROBE_HEADER, probe_arms, read_probe_csv, write_probe_csv
from msp_pretrain.scene import CLOUD_FORMATS, PointCloud, SceneConfig, load_cloud, save_cloud
from msp_pretrain.shape_context import NEIGHBOR_SEARCH, compute_multiscale_sc, write_descriptor_dump
from msp_pretrain.utils import derive_rng, derive_seed

EVENTS_NAME = "events.jsonl"
RUN_CONFIG_NAME = "run.cfg"
PRETRAIN_SCHEMA = f"{MSP_EVENTS_URI}/pretrain/v1"
ARTIFACTS_SCHEMA = f"{MSP_EVENTS_URI}/artifacts/v1"

# random stream key of the probe-linear synthetic dataset
PROBE_DATA_STREAM = 7

USAGE_ERROR = 2

# -----------------------------------------------------------------------------
# Aliases and Flags
# -----------------------------------------------------------------------------

msp_aliases = dict(base_aliases)
msp_aliases.update(
    {
        "config": "MspBaseApp.run_config",
        "out": "MspBaseApp.out",
        "data": "MspBaseApp.data",
        "seed": "MspConfig.seed",
        "profile": "MspConfig.profile",
        "threads": "MspConfig.threads",
    }
)

msp_flags = dict(base_flags)
msp_flags["dry-run"] = (
    {"MspBaseApp": {"dry_run": True}},
    "Print the fully resolved run configuration and exit without side effects.",
)


class MspArgLoader(KVArgParseConfigLoader):
    """Unknown ``--option`` names are usage errors rather than warnings."""

    def _handle_unrecognized_alias(self, arg: str) -> None:
        self.parser.error(f"unrecognized option: --{arg}")


class MspBaseApp(JupyterApp):
    """Shared logging, options and configuration of the msp applications."""

    name = "msp"
    version = __version__

    aliases = msp_aliases
    flags = msp_flags

    _log_formatter_cls = LogFormatter  # type:ignore[assignment]

    def _create_loader(self, argv, aliases, flags, classes):
        return MspArgLoader(argv, aliases, flags, classes=classes, log=self.log, subcommands=self.subcommands)

    @default("log_level")
    def _default_log_level(self) -> int:
        return log_level_from_env(logging.INFO)

    @default("log_format")
    def _default_log_format(self) -> str:
        return "%(color)s[%(levelname)1.1s %(asctime)s.%(msecs).03d %(name)s]%(end_color)s %(message)s"

    run_config = Unicode(
        "",
        config=True,
        help="Run configuration file of 'key = value' lines (see --dry-run for every key).",
    )
    out = Unicode(config=True, help="Directory all outputs are written under.")
    data = Unicode(
        "",
        config=True,
        help="Directory of .ply/.xyz scenes; empty generates synthetic scenes.",
    )
    dry_run = Bool(False, config=True, help="Print the resolved configuration and exit.")

    @default("out")
    def _default_out(self) -> str:
        return os.getcwd()


class MspCommandApp(MspBaseApp):
    """One msp subcommand.

    Subclasses implement :meth:`run`, which returns the exit status.
    """

    classes = [MspConfig, SceneConfig, ProbeConfig, FileCheckpoints, EventLogger]

    accepts_args = False

    msp = Instance(MspConfig, allow_none=True)
    scenes = Instance(SceneConfig, allow_none=True)
    probes = Instance(ProbeConfig, allow_none=True)
    event_logger = Instance(EventLogger, allow_none=True)
    artifacts = List(Unicode())

    def init_configurables(self) -> None:
        """Layer the run configuration file under the command line, then build the configurables."""
        if self.run_config:
            config = load_run_config(self.run_config)
            config.merge(self.cli_config)
            self.update_config(config)
        self.msp = MspConfig(parent=self)
        self.scenes = SceneConfig(parent=self)
        self.probes = ProbeConfig(parent=self)
        self.msp.check()

    def resolved_config(self) -> str:
        return render_run_config(self.msp, self.scenes, self.probes)

    def init_outputs(self) -> None:
        ensure_dir_exists(self.out)
        self.event_logger = EventLogger(parent=self)
        for schema in ("pretrain", "artifacts"):
            self.event_logger.register_event_schema(DEFAULT_EVENTS_SCHEMA_PATH / schema / "v1.yaml")
        self._events_handler = logging.FileHandler(os.path.join(self.out, EVENTS_NAME), encoding="utf-8")
        self.event_logger.register_handler(self._events_handler)

    def close_outputs(self) -> None:
        if self.event_logger is not None:
            self.event_logger.remove_handler(self._events_handler)
            self._events_handler.close()
            self.event_logger = None

    def emit_pretrain(self, action: str, **data: t.Any) -> None:
        if self.event_logger is not None:
            self.event_logger.emit(schema_id=PRETRAIN_SCHEMA, data={"action": action, **data})

    def record_artifact(self, path: str) -> None:
        """Note an artifact written under ``out`` for the manifest."""
        rel = os.path.relpath(path, self.out).replace(os.sep, "/")
        if rel not in self.artifacts:
            self.artifacts.append(rel)
        if self.event_logger is not None:
            self.event_logger.emit(
                schema_id=ARTIFACTS_SCHEMA,
                data={"command": self.name, "path": rel, "sha256": file_checksum(path)},
            )

    def write_manifest(self) -> None:
        if self.artifacts:
            path = write_manifest(self.out, self.artifacts, log=self.log)
            self.log.info("Manifest of %d artifacts written to %s", len(self.artifacts), path)

    def load_scenes(self, seed: int | None = None) -> list[PointCloud]:
        """Clouds from ``data``, or the synthetic dataset drawn with ``seed``."""
        if not self.data:
            return self.scenes.generate(self.msp.seed if seed is None else seed)
        if not os.path.isdir(self.data):
            msg = f"no such data directory: {self.data}"
            raise OSError(msg)
        names = sorted(n for n in os.listdir(self.data) if n.endswith((".ply", ".xyz")))
        if not names:
            msg = f"no .ply or .xyz scenes in {self.data}"
            raise EmptyInputError(msg)
        self.log.info("Loading %d scenes from %s", len(names), self.data)
        return [load_cloud(os.path.join(self.data, n)) for n in names]

    def run(self) -> int:
        raise NotImplementedError

    def start(self) -> None:
        """Run the command; map failures to exit codes."""
        super().start()
        if self.extra_args and not self.accepts_args:
            self.log.critical("unexpected argument(s): %s", " ".join(self.extra_args))
            self.exit(USAGE_ERROR)
        status = 0
        try:
            self.init_configurables()
            if self.dry_run:
                sys.stdout.write(self.resolved_config())
                return
            status = self.run()
        except (MspError, OSError, TraitError) as e:
            self.log.critical("%s: %s", type(e).__name__, e)
            self.exit(1)
        finally:
            self.close_outputs()
        if status:
            self.exit(status)


class GenDataApp(MspCommandApp):
    """Write a synthetic scene dataset."""

    name = "msp-gen-data"
    description = "Generate labeled synthetic scenes built from geometric primitives."

    aliases = {**msp_aliases, "scenes": "SceneConfig.n_scenes", "format": "GenDataApp.format"}

    format = Enum(list(CLOUD_FORMATS), default_value="ply-ascii", config=True, help="Cloud file format.")

    def run(self) -> int:
        self.init_outputs()
        ext = ".ply" if self.format == "ply-ascii" else ".xyz"
        for i, cloud in enumerate(self.scenes.generate(self.msp.seed)):
            path = os.path.join(self.out, f"scene-{i:04d}{ext}")
            save_cloud(cloud, path, self.format, log=self.log)
            self.record_artifact(path)
        self.log.info("Wrote %d scenes to %s", self.scenes.n_scenes, self.out)
        self.write_manifest()
        return 0


class ShapeContextApp(MspCommandApp):
    """Dump multi-scale shape-context descriptors."""

    name = "msp-shape-context"
    description = "Compute multi-scale shape-context descriptors for points of a cloud."

    aliases = {
        **msp_aliases,
        "cloud": "ShapeContextApp.cloud",
        "centers": "ShapeContextApp.centers",
        "neighbor-search": "ShapeContextApp.neighbor_search",
    }

    cloud = Unicode("", config=True, help="Cloud file; empty uses synthetic scene 0.")
    centers = Integer(100, config=True, help="Centers sampled from the cloud (0 uses every point).")
    neighbor_search = Enum(list(NEIGHBOR_SEARCH), default_value="kdtree", config=True, help="Neighbor gathering.")

    def run(self) -> int:
        if self.cloud:
            cloud = load_cloud(self.cloud)
        else:
            cloud = self.scenes.generate(self.msp.seed)[0]
        n = len(cloud)
        if self.centers and self.centers < n:
            idx = np.sort(derive_rng(self.msp.seed).choice(n, size=self.centers, replace=False))
        else:
            idx = np.arange(n)
        centers = cloud.positions[idx]
        bits = compute_multiscale_sc(centers, cloud.positions, self.msp.partitions, self.neighbor_search)
        self.init_outputs()
        path = os.path.join(self.out, "descriptors.txt")
        write_descriptor_dump(path, centers, bits, log=self.log)
        self.record_artifact(path)
        self.log.info("%d descriptors of %d bits written to %s", bits.shape[0], bits.shape[1], path)
        self.write_manifest()
        return 0


class PretrainApp(MspCommandApp):
    """Masked shape prediction pre-training."""

    name = "msp-pretrain"
    description = "Pre-train the encoder with the masked shape prediction pretext task."

    aliases = {**msp_aliases, "resume": "PretrainApp.resume"}

    resume = Unicode(
        "",
        config=True,
        help="Checkpoint to resume from: 'last', a step number, or a file path.",
    )

    def run(self) -> int:
        scenes = self.load_scenes()
        resume = None
        if self.resume:
            resume = load_checkpoint(FileCheckpoints(parent=self).resolve(self.resume))
        self.init_outputs()
        config_text = self.resolved_config()
        cfg_path = os.path.join(self.out, RUN_CONFIG_NAME)
        with atomic_writing(cfg_path, log=self.log) as f:
            f.write(config_text)
        self.record_artifact(cfg_path)

        final = pretrain(
            self.msp,
            scenes,
            out_dir=self.out,
            resume=resume,
            config_text=config_text,
            emit=self.emit_pretrain,
            log=self.log,
        )
        self.record_artifact(os.path.join(self.out, METRICS_NAME))
        checkpoints = FileCheckpoints(root_dir=self.out)
        for step in checkpoints.list_checkpoints():
            self.record_artifact(checkpoints.checkpoint_path(step))
        self.record_artifact(checkpoints.checkpoint_path("last"))
        self.log.info("Pre-training finished at step %d", final.step)
        self.write_manifest()
        return 0


class ProbeLeakageApp(MspCommandApp):
    """Masked-shape leakage probe."""

    name = "msp-probe-leakage"
    description = "Measure how much masked points reveal each other's shape under subsampling."

    aliases = {**msp_aliases, "keypoints": "ProbeLeakageApp.keypoints"}

    keypoints = Integer(
        0,
        config=True,
        help="Also probe the keep fraction of this SA keypoint budget (keypoints / points per scene).",
    )

    def run(self) -> int:
        scenes = self.load_scenes()
        fractions = list(self.probes.keep_fractions)
        if self.keypoints:
            mean_points = sum(len(c) for c in scenes) / len(scenes)
            f = min(1.0, self.keypoints / mean_points)
            if f not in fractions:
                fractions.append(f)
        report = leakage_probe_scenes(
            scenes,
            self.msp.mask_spec(self.msp.seed),
            self.msp.partitions,
            fractions,
            self.probes.seeds,
            self.probes.max_centers,
        )
        self.init_outputs()
        path = os.path.join(self.out, "leakage.csv")
        report.write_csv(path, log=self.log)
        self.record_artifact(path)
        comparison = compare_runs([report], leakage_margin=self.probes.leakage_margin)
        print(comparison.to_text(), end="")
        self.write_manifest()
        return 0 if comparison.passed else 1


class ProbeLinearApp(MspCommandApp):
    """Linear probe of a pretrained encoder against random ones."""

    name = "msp-probe-linear"
    description = "Train a linear classifier on frozen encoder features and compare with scratch encoders."

    aliases = {**msp_aliases, "ckpt": "ProbeLinearApp.ckpt"}

    ckpt = Unicode("last", config=True, help="Checkpoint: 'last', a step number, or a file path.")

    def run(self) -> int:
        ckpt = load_checkpoint(FileCheckpoints(parent=self).resolve(self.ckpt))
        trained = MspConfig(config=parse_run_config(ckpt.config_text, source=f"{self.ckpt} config"))
        spec = ModelSpec.from_config(trained)
        scenes = self.load_scenes(seed=derive_seed(self.msp.seed, PROBE_DATA_STREAM))
        results = probe_arms(
            extract_encoder(ckpt),
            spec,
            scenes,
            self.probes.seeds,
            split_seed=self.probes.split_seed,
            train_fraction=self.probes.train_fraction,
            steps=self.probes.steps,
            lr=self.probes.lr,
            weight_decay=self.probes.weight_decay,
        )
        self.init_outputs()
        path = os.path.join(self.out, "probe.csv")
        write_probe_csv(path, results, log=self.log)
        self.record_artifact(path)
        comparison = compare_runs(results, accuracy_margin=self.probes.accuracy_margin)
        print(comparison.to_text(), end="")
        self.write_manifest()
        return 0 if comparison.passed else 1


class CompareApp(MspCommandApp):
    """Summarize report CSVs."""

    name = "msp-compare"
    description = "Tabulate leakage and probe reports and evaluate their directional checks."

    accepts_args = True

    def run(self) -> int:
        if not self.extra_args:
            msg = "compare needs at least one report CSV"
            raise EmptyInputError(msg)
        reports: list = []
        for path in self.extra_args:
            with open(path, encoding="utf-8") as f:
                header = f.readline().rstrip("\n")
            if header == LEAKAGE_HEADER:
                reports.append(read_leakage_csv(path))
            elif header == PROBE_HEADER:
                reports.extend(read_probe_csv(path))
            else:
                msg = f"{path}: unrecognized report header {header!r}"
                raise EmptyInputError(msg)
        comparison = compare_runs(
            reports,
            accuracy_margin=self.probes.accuracy_margin,
            leakage_margin=self.probes.leakage_margin,
        )
        self.init_outputs()
        path = os.path.join(self.out, "compare.csv")
        comparison.write_csv(path, log=self.log)
        self.record_artifact(path)
        print(comparison.to_text(), end="")
        self.write_manifest()
        return 0 if comparison.passed else 1


class SelfCheckApp(MspCommandApp):
    """Fast oracle and gradient checks."""

    name = "msp-selfcheck"
    description = "Run gradient checks and oracle suites; exit non-zero on any failure."

    def run(self) -> int:
        from msp_pretrain.selfcheck import format_results, run_selfcheck

        results = run_selfcheck(log=self.log)
        print(format_results(results), end="")
        return 0 if all(r.passed for r in results) else 1


# -----------------------------------------------------------------------------
# MspApp
# -----------------------------------------------------------------------------

_examples = """
msp gen-data --scenes 8 --seed 0 --out data/
msp pretrain --profile desk --config run.cfg --out run/
msp probe-linear --ckpt last --out run/
msp probe-leakage --out leak/
msp compare leak/leakage.csv run/probe.csv
msp selfcheck
"""


class MspApp(MspBaseApp):
    """Entry point dispatching to the msp subcommands."""

    description = "Masked shape prediction pre-training for 3D point clouds."
    examples = _examples

    # the shared aliases name MspConfig traits
    classes = [MspConfig, SceneConfig, ProbeConfig]

    subcommands: dict[str, t.Any] = {
        "gen-data": (GenDataApp, GenDataApp.description),
        "shape-context": (ShapeContextApp, ShapeContextApp.description),
        "pretrain": (PretrainApp, PretrainApp.description),
        "probe-leakage": (ProbeLeakageApp, ProbeLeakageApp.description),
        "probe-linear": (ProbeLinearApp, ProbeLinearApp.description),
        "compare": (CompareApp, CompareApp.description),
        "selfcheck": (SelfCheckApp, SelfCheckApp.description),
    }

    def start(self) -> None:
        """Dispatch; reaching the end means no known subcommand was given."""
        super().start()
        subcmds = ", ".join(self.subcommands)
        if self.extra_args:
            self.log.critical("unknown command %r; expected one of: %s", self.extra_args[0], subcmds)
        else:
            self.log.critical("Please supply a command: %s", subcmds)
        self.exit(USAGE_ERROR)


main = launch_new_instance = MspApp.launch_instance

if __name__ == "__main__":
    main()
