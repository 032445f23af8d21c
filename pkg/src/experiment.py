"""
Experiment orchestration for the command-line harness.

The Experiment class owns one run directory: it builds the data and the
noise schedule from the configuration, runs a phase, and records every
artifact it writes in the run manifest.
"""

import hashlib
import platform
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import psutil
import yaml

from src.checkpoint import load_checkpoint, save_checkpoint
from src.config import TrainConfig
from src.data_models import LabeledBatch, MetricsRow, RunManifest
from src.diffusion import (
    DpmTrainingResult,
    NoiseModel,
    NoisePredictor,
    ddim_sample,
    refinement_sequence,
    sample_sharded,
    train_dpm,
)
from src.exceptions import CheckpointError, LabError
from src.gan import (
    GanPair,
    GanTrainingResult,
    d_loss,
    g_loss,
    sample_generator_sharded,
    train_gan,
)
from src.logging_config import get_logger, log_operation
from src.metrics import MetricsWriter, compute_metrics
from src.schedule import build_schedule
from src.svg_render import render_scatter
from src.theorem_lab import SUMMARY_HEADER, VerificationSummary, run_verification_suite
from src.toy_data import GridMixture, OracleNoisePredictor, sample

DPM_LOSS_HEADER = ('iter', 'loss', 'smoothed')
DPM_EVAL_HEADER = ('ddim_steps', 'mode_coverage', 'hq_fraction', 'mean_dist')
REFINE_HEADER = ('step', 'mean_dist')

SMART_MODES = ('off', 'on', 'oracle')


def compute_run_id(flat_config: Dict[str, Any]) -> str:
    """First 12 hex digits of SHA-1 over the flat config (seed included)."""
    payload = yaml.safe_dump(dict(flat_config), sort_keys=True, default_flow_style=False)
    return hashlib.sha1(payload.encode('utf-8')).hexdigest()[:12]


def host_snapshot() -> Dict[str, Union[str, int, float]]:
    memory = psutil.virtual_memory()
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'cpu_count': psutil.cpu_count(logical=True) or 0,
        'memory_total_mb': round(memory.total / 1024 / 1024, 1),
    }


class Experiment:
    """
    One run directory and the phases that write into it.

    Every artifact lands under ``output_dir``; ``manifest.yaml`` is rewritten
    after each phase so it always lists what exists.
    """

    def __init__(self, cfg: TrainConfig, output_dir: Union[str, Path], command: str):
        """
        Initialize the experiment.

        Args:
            cfg: Validated configuration
            output_dir: Run directory (created if missing)
            command: Subcommand name recorded in the manifest
        """
        self.cfg = cfg
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.mix = GridMixture.grid(sigma_data=cfg.data.sigma)
        self.sched = build_schedule(cfg.dpm.T, cfg.dpm.beta_start, cfg.dpm.beta_end)
        self.manifest = RunManifest(run_id=compute_run_id(cfg.to_flat()), command=command, seed=cfg.seed,
                                    config=cfg.to_flat(), output_dir=str(self.output_dir),
                                    host=host_snapshot())
        self.logger = get_logger(__name__)
        self.logger.set_context(run=self.manifest.run_id)

    def artifact(self, name: str, filename: str) -> Path:
        path = self.output_dir / filename
        self.manifest.artifacts[name] = str(path)
        return path

    def write_manifest(self) -> Path:
        path = self.output_dir / 'manifest.yaml'
        with open(path, 'w', encoding='utf-8') as f:
            yaml.safe_dump(self.manifest.to_dict(), f, sort_keys=False, default_flow_style=False)
        return path

    def _eval_seed(self, phase: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.cfg.seed, 4, phase])

    def _wants_labels(self, pred: NoiseModel) -> bool:
        """Trained conditional predictors always take labels; the oracle only under cond.enabled."""
        if isinstance(pred, NoisePredictor):
            return pred.conditional
        return self.cfg.cond.enabled and getattr(pred, 'conditional', False)

    # Phases

    def train_dpm(self) -> DpmTrainingResult:
        loss_writer = MetricsWriter(self.artifact('dpm_loss', 'dpm_loss.csv'), DPM_LOSS_HEADER)
        result = train_dpm(self.mix, self.cfg, self.sched,
                           on_loss=lambda it, loss, smoothed: loss_writer.write((it, loss, smoothed)))
        save_checkpoint(self.artifact('dpm_checkpoint', 'dpm.ckpt'), result.predictor.to_tensors())
        self.evaluate_dpm(result.predictor)
        self.write_manifest()
        return result

    def evaluate_dpm(self, predictor: NoiseModel, filename: str = 'dpm_eval.csv'):
        """DDIM samples from the predictor scored against the mixture."""
        steps = self.cfg.eval.ddim_steps
        conditional = self._wants_labels(predictor)
        num_classes = self.mix.num_components

        def shard(size: int, rng: np.random.Generator) -> LabeledBatch:
            labels = rng.integers(0, num_classes, size=size) if conditional else None
            return LabeledBatch(ddim_sample(predictor, self.sched, size, steps, rng, labels), labels)

        with log_operation(self.logger, f"DDIM evaluation ({self.cfg.eval.samples} samples, {steps} steps)"):
            batch = sample_sharded(shard, self.cfg.eval.samples, self._eval_seed(0), self.cfg.eval.shards)
        quality = compute_metrics(batch, self.mix, self.cfg.eval.tau)
        writer = MetricsWriter(self.artifact('dpm_eval', filename), DPM_EVAL_HEADER)
        writer.write((steps, quality.mode_coverage, quality.hq_fraction, quality.mean_dist))
        render_scatter(batch, self.mix, self.artifact('dpm_samples', 'dpm_samples.svg'))
        self.logger.info(f"DDIM: coverage {quality.mode_coverage}/{self.mix.num_components}, "
                         f"hq {quality.hq_fraction:.3f}, mean_dist {quality.mean_dist:.4f}")
        return quality

    def noise_model(self, smart: str, dpm_checkpoint: Optional[Union[str, Path]] = None) -> Optional[NoiseModel]:
        """Resolve ``--smart off|on|oracle`` to a frozen noise model."""
        if smart not in SMART_MODES:
            raise LabError(f"unknown smart mode {smart!r}; expected one of {', '.join(SMART_MODES)}")
        if smart == 'off':
            return None
        if smart == 'oracle':
            return OracleNoisePredictor(self.mix, self.sched)
        if dpm_checkpoint is None:
            raise LabError("--smart on needs a trained predictor (--dpm PATH)")
        self.manifest.artifacts['dpm_checkpoint'] = str(dpm_checkpoint)
        predictor = NoisePredictor.from_tensors(load_checkpoint(dpm_checkpoint))
        if predictor.T != self.sched.T:
            raise CheckpointError(f"{dpm_checkpoint}: predictor was trained with T={predictor.T}, "
                                  f"config has dpm.T={self.sched.T}", path=str(dpm_checkpoint))
        return predictor

    def train_gan(self, smart: str, dpm_checkpoint: Optional[Union[str, Path]] = None) -> GanTrainingResult:
        pred = self.noise_model(smart, dpm_checkpoint)
        # a missing predictor means vanilla training whatever smart.enabled says
        self.manifest.config['smart.mode'] = smart
        self.manifest.run_id = compute_run_id(self.manifest.config)
        self.logger.set_context(run=self.manifest.run_id)
        writer = MetricsWriter(self.artifact('metrics', 'metrics.csv'))
        result = train_gan(self.mix, pred, self.cfg, self.sched, on_row=writer.write,
                           checkpoint_path=self.artifact('gan_checkpoint', 'gan.ckpt'))
        batch = sample_generator_sharded(result.pair, self.cfg.eval.samples, self._eval_seed(1),
                                         self.cfg.eval.shards)
        render_scatter(batch, self.mix, self.artifact('samples', 'samples.svg'))
        self.logger.info(f"regularity applied {result.regularity_calls} times over {self.cfg.gan.iters} iterations")
        self.write_manifest()
        return result

    def evaluate_checkpoint(self, checkpoint: Union[str, Path]):
        """Score a GAN or a diffusion checkpoint, chosen by its tensor prefixes."""
        tensors = load_checkpoint(checkpoint)
        self.manifest.artifacts['checkpoint'] = str(checkpoint)
        if any(name.startswith('gen.') for name in tensors):
            quality = self.evaluate_gan(GanPair.from_tensors(tensors))
        elif any(name.startswith('dpm.') for name in tensors):
            quality = self.evaluate_dpm(NoisePredictor.from_tensors(tensors))
        else:
            raise CheckpointError(f"{checkpoint}: neither GAN nor diffusion tensors", path=str(checkpoint))
        self.write_manifest()
        return quality

    def evaluate_gan(self, pair: GanPair) -> MetricsRow:
        """One metrics row: losses on a fresh adversarial batch plus sample quality."""
        rng = np.random.default_rng(self._eval_seed(2))
        n = self.cfg.gan.batch
        real = sample(self.mix, n, rng, with_labels=pair.conditional)
        z = rng.standard_normal((n, pair.latent_dim))
        labels = rng.integers(0, pair.num_classes, size=n) if pair.conditional else None
        d_value = d_loss(pair, real, z, labels, compute_gradients=False)
        g_value = g_loss(pair, z, labels, compute_gradients=False)

        batch = sample_generator_sharded(pair, self.cfg.eval.samples, self._eval_seed(1), self.cfg.eval.shards)
        quality = compute_metrics(batch, self.mix, self.cfg.eval.tau)
        row = MetricsRow.from_quality(pair.iterations, d_value, g_value, float('nan'), quality)
        MetricsWriter(self.artifact('metrics', 'metrics.csv')).write(row)
        self.logger.info(f"eval: coverage {quality.mode_coverage}/{self.mix.num_components}, "
                         f"hq {quality.hq_fraction:.3f}, mean_dist {quality.mean_dist:.4f}")
        return row

    def refine_demo(self, dpm_checkpoint: Optional[Union[str, Path]] = None):
        """Iterate the refinement from uniform points, with the oracle unless a predictor is given."""
        pred = self.noise_model('on' if dpm_checkpoint else 'oracle', dpm_checkpoint)
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 5]))
        y0 = rng.uniform(-4.0, 4.0, size=(self.cfg.refine.samples, 2))
        labels = None
        if self._wants_labels(pred):
            labels = rng.integers(0, self.mix.num_components, size=self.cfg.refine.samples)
        with log_operation(self.logger, f"refinement at t={self.cfg.refine.t} ({self.cfg.refine.steps} steps)"):
            trace = refinement_sequence(pred, self.sched, y0, self.cfg.refine.t, self.cfg.refine.steps, rng,
                                        self.mix, labels=labels, keep_batches=False)
        writer = MetricsWriter(self.artifact('refine_trace', 'refine_trace.csv'), REFINE_HEADER)
        writer.write_all(enumerate(trace.mean_distance))
        render_scatter(trace.final, self.mix, self.artifact('refined', 'refined.svg'))
        self.logger.info(f"mean distance {trace.mean_distance[0]:.4f} -> {trace.mean_distance[-1]:.4f}")
        self.write_manifest()
        return trace

    def verify(self) -> VerificationSummary:
        summary = run_verification_suite(self.cfg)
        MetricsWriter(self.artifact('verify', 'verify.csv'), SUMMARY_HEADER).write_all(summary.rows())
        self.write_manifest()
        return summary

    def render(self, checkpoint: Optional[Union[str, Path]] = None) -> Path:
        """Draw a GAN checkpoint's samples, or the true data when no checkpoint is given."""
        rng = np.random.default_rng(self._eval_seed(3))
        if checkpoint is None:
            batch = sample(self.mix, self.cfg.eval.samples, rng)
            path = self.artifact('data_figure', 'data.svg')
        else:
            tensors = load_checkpoint(checkpoint)
            self.manifest.artifacts['checkpoint'] = str(checkpoint)
            if not any(name.startswith('gen.') for name in tensors):
                raise CheckpointError(f"{checkpoint}: render needs a GAN checkpoint", path=str(checkpoint))
            batch = sample_generator_sharded(GanPair.from_tensors(tensors), self.cfg.eval.samples,
                                             self._eval_seed(1), self.cfg.eval.shards)
            path = self.artifact('samples', 'samples.svg')
        render_scatter(batch, self.mix, path)
        self.write_manifest()
        return path
