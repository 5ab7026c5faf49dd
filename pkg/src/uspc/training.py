"""Loss assembly and the joint optimization loop.

One training step runs the text-to-speech pipeline on a paired batch, the
domain (pair) loss on the same paired examples, and the voice-conversion
pipeline on a speech-only batch, then combines everything into a single
scalar, backpropagates once, clips, and applies one Adam update.  Ablation
modes switch parts of this off without touching the rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .corpus import UtteranceRecord
from .encoders import quantize_f0_array
from .errors import DataError, TrainingDiverged
from .layers import Ctx
from .model import JointModel
from .optim import AdamState, adam_step, clip_global_norm
from .synthesis import decode_f0
from .vq import QuantizedContent, pair_loss, vq_aux_loss


@dataclass
class LossReport:
    """Per-step scalars.  total is the weighted sum actually optimized;
    the reported pipeline losses keep auxiliary terms separate."""

    step: int = 0
    l_tts_rec: float = 0.0   # w_mel * mel MSE + w_pitch * pitch CE (paired batch)
    l_pair: float = 0.0      # raw quantized-content distance
    l_duration: float = 0.0  # raw log-duration MSE
    l_vc_rec: float = 0.0    # w_mel * mel MSE + w_pitch * pitch CE (speech batch)
    l_vq_aux: float = 0.0    # raw codebook + commitment loss
    total: float = 0.0
    mel_tts: float = 0.0
    pitch_ce_tts: float = 0.0
    mel_vc: float = 0.0
    pitch_ce_vc: float = 0.0
    pitch_f0_mse: float = 0.0   # diagnostic: Hz-domain MSE after bin decoding
    code_agreement: float = 0.0
    grad_norm: float = 0.0
    lr: float = 0.0

    @property
    def l_tts_total(self) -> float:
        return self.l_tts_rec + self.l_pair

    @property
    def l_vc_total(self) -> float:
        return self.l_vc_rec

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(f.name for f in fields(cls))

    def csv_row(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(str(v) if isinstance(v, int) else repr(float(v)))
        return ",".join(out)


def _train_ctx(model: JointModel, rec: UtteranceRecord, step: int, training: bool) -> Ctx:
    return Ctx(training=training, step=step, uid=rec.id, rng=model.rng)


def _mean(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = ad.add(total, t)
    return total * (1.0 / len(tensors))


@dataclass
class TtsFragment:
    mel: Tensor
    pitch_ce: Tensor
    duration: Tensor
    aux: list[Tensor]
    quantized: list[QuantizedContent]
    speakers: list[Tensor]
    pitch_f0_mse: float


def tts_step(batch: list[UtteranceRecord], model: JointModel, cfg: TrainConfig,
             step: int, training: bool = True) -> TtsFragment:
    """Text pipeline on paired data, teacher-forced durations and pitch bins."""
    if not batch:
        raise DataError("tts_step needs a non-empty paired batch")
    mel_losses, ce_losses, dur_losses, aux = [], [], [], []
    quantized, speakers = [], []
    f0_sq_err, f0_frames = 0.0, 0
    for rec in batch:
        if not rec.labeled or rec.durations is None:
            raise DataError(f"{rec.id}: tts_step needs durations (labeled data)")
        ctx = _train_ctx(model, rec, step, training)
        _, log_dur, expanded = model.text_content(rec.phonemes, rec.durations, ctx)
        dur_losses.append(ad.mse(log_dur, Tensor(np.log(rec.durations + 1.0))))
        q = model.quantize(expanded, track_usage=training)
        s = model.speaker(rec.mel, ctx)
        bins = quantize_f0_array(rec.f0)
        p = model.prosody_encoder.from_bins(bins)
        mel_pred = model.synthesize(q, s, p, ctx)
        mel_losses.append(ad.mse(mel_pred, Tensor(rec.mel)))
        logits = model.pitch_predictor(q, s, ctx)
        ce_losses.append(ad.softmax_cross_entropy(logits, bins))
        if model.use_vq:
            aux.append(vq_aux_loss(q, cfg.vq_beta))
        quantized.append(q)
        speakers.append(s)
        f0_pred = decode_f0(logits)
        f0_sq_err += float(((f0_pred - rec.f0) ** 2).sum())
        f0_frames += rec.f0.size
    return TtsFragment(
        mel=_mean(mel_losses), pitch_ce=_mean(ce_losses), duration=_mean(dur_losses),
        aux=aux, quantized=quantized, speakers=speakers,
        pitch_f0_mse=f0_sq_err / max(f0_frames, 1))


@dataclass
class VcFragment:
    mel: Tensor
    pitch_ce: Tensor
    aux: list[Tensor]
    quantized: list[QuantizedContent]


def vc_step(batch: list[UtteranceRecord], model: JointModel, cfg: TrainConfig,
            step: int, training: bool = True) -> VcFragment:
    """Speech-only self-reconstruction; text is never consulted."""
    if not batch:
        raise DataError("vc_step needs a non-empty speech batch")
    mel_losses, ce_losses, aux, quantized = [], [], [], []
    for rec in batch:
        ctx = _train_ctx(model, rec, step, training)
        c = model.speech_content(rec.mel, ctx)
        q = model.quantize(c, track_usage=training)
        s = model.speaker(rec.mel, ctx)
        bins = quantize_f0_array(rec.f0)
        p = model.prosody_encoder.from_bins(bins)
        mel_pred = model.synthesize(q, s, p, ctx)
        mel_losses.append(ad.mse(mel_pred, Tensor(rec.mel)))
        logits = model.pitch_predictor(q, s, ctx)
        ce_losses.append(ad.softmax_cross_entropy(logits, bins))
        if model.use_vq:
            aux.append(vq_aux_loss(q, cfg.vq_beta))
        quantized.append(q)
    return VcFragment(mel=_mean(mel_losses), pitch_ce=_mean(ce_losses),
                      aux=aux, quantized=quantized)


@dataclass
class PairFragment:
    pair: Tensor
    aux: list[Tensor]
    quantized_speech: list[QuantizedContent]
    code_agreement: float


def pair_step(batch: list[UtteranceRecord], model: JointModel, cfg: TrainConfig,
              step: int, training: bool = True,
              text_quantized: list[QuantizedContent] | None = None) -> PairFragment:
    """Domain loss between text-derived and speech-derived content of the
    same utterances.  Reuses the TTS path's quantization when supplied;
    recomputation is value-identical because dropout streams are named."""
    if not batch:
        raise DataError("pair_step needs a non-empty paired batch")
    losses, aux, quantized = [], [], []
    agree, frames = 0, 0
    for i, rec in enumerate(batch):
        ctx = _train_ctx(model, rec, step, training)
        if text_quantized is not None:
            qp = text_quantized[i]
        else:
            if not rec.labeled:
                raise DataError(f"{rec.id}: pair_step needs labeled data")
            _, _, expanded = model.text_content(rec.phonemes, rec.durations, ctx)
            qp = model.quantize(expanded, track_usage=False)
        c_s = model.speech_content(rec.mel, ctx)
        qs = model.quantize(c_s, track_usage=training)
        losses.append(pair_loss(qp, qs))
        if model.use_vq:
            aux.append(vq_aux_loss(qs, cfg.vq_beta))
        quantized.append(qs)
        agree += int((qp.codes == qs.codes).sum())
        frames += qp.codes.size
    return PairFragment(pair=_mean(losses), aux=aux, quantized_speech=quantized,
                        code_agreement=agree / max(frames, 1))


def seed_codebook_from_batch(model: JointModel, batch: list[UtteranceRecord],
                             step: int = 0) -> None:
    """Data-dependent codebook init: copy encoder output rows from a batch.

    Falls back to the gaussian init when the batch provides fewer rows than
    the codebook has entries.
    """
    if not model.use_vq or not batch:
        return
    rows = []
    for rec in batch:
        c = model.speech_content(rec.mel, Ctx.eval())
        rows.append(c.data)
    model.codebook.seed_from_rows(np.concatenate(rows, axis=0), model.rng, step)


def joint_step(paired: list[UtteranceRecord], unpaired: list[UtteranceRecord],
               model: JointModel, opt: AdamState, cfg: TrainConfig,
               step: int) -> LossReport:
    """One optimization step over both pipelines.

    Mode handling: tts-only skips pair and VC; vc-only runs only the speech
    pipeline; novq runs everything with identity quantization and no
    codebook loss.
    """
    mode = cfg.mode
    report = LossReport(step=step, lr=opt.lr)
    zero = Tensor(0.0)
    parts: list[Tensor] = []
    aux_terms: list[Tensor] = []
    encoder_rows: list[np.ndarray] = []
    used_codes: list[np.ndarray] = []

    tts_rec = zero
    vc_rec = zero
    pair_t = zero
    dur_t = zero

    if mode in ("full", "tts-only", "novq"):
        if not paired:
            raise DataError("this mode needs a paired batch")
        frag = tts_step(paired, model, cfg, step)
        tts_rec = frag.mel * cfg.w_mel + frag.pitch_ce * cfg.w_pitch
        dur_t = frag.duration
        aux_terms.extend(frag.aux)
        report.mel_tts = frag.mel.item()
        report.pitch_ce_tts = frag.pitch_ce.item()
        report.pitch_f0_mse = frag.pitch_f0_mse
        for q in frag.quantized:
            used_codes.append(q.codes)
            encoder_rows.append(q.continuous.data)

        if mode in ("full", "novq"):
            pair_frag = pair_step(paired, model, cfg, step, text_quantized=frag.quantized)
            pair_t = pair_frag.pair
            aux_terms.extend(pair_frag.aux)
            report.code_agreement = pair_frag.code_agreement
            for q in pair_frag.quantized_speech:
                used_codes.append(q.codes)
                encoder_rows.append(q.continuous.data)

    if mode in ("full", "vc-only", "novq"):
        if unpaired:
            frag = vc_step(unpaired, model, cfg, step)
            vc_rec = frag.mel * cfg.w_mel + frag.pitch_ce * cfg.w_pitch
            aux_terms.extend(frag.aux)
            report.mel_vc = frag.mel.item()
            report.pitch_ce_vc = frag.pitch_ce.item()
            for q in frag.quantized:
                used_codes.append(q.codes)
                encoder_rows.append(q.continuous.data)
        elif mode == "vc-only":
            raise DataError("vc-only mode needs a speech batch")

    aux_t = _mean(aux_terms) if aux_terms else zero
    total = (tts_rec + vc_rec + pair_t * cfg.w_pair
             + dur_t * cfg.w_duration + aux_t * cfg.w_vq)

    report.l_tts_rec = tts_rec.item()
    report.l_vc_rec = vc_rec.item()
    report.l_pair = pair_t.item()
    report.l_duration = dur_t.item()
    report.l_vq_aux = aux_t.item()
    report.total = total.item()
    if not math.isfinite(report.total):
        raise TrainingDiverged(f"non-finite loss at step {step}")

    model.store.zero_grad()
    ad.backward(total)
    report.grad_norm = clip_global_norm(model.store, cfg.grad_clip_norm)
    adam_step(model.store, opt)

    if model.use_vq and used_codes:
        model.codebook.mark_step_usage(np.concatenate(used_codes))
        model.codebook.reseed_dead_entries(
            np.concatenate(encoder_rows, axis=0), model.rng, step, cfg.dead_code_steps)
    return report


def _pools(records: list[UtteranceRecord], mode: str
           ) -> tuple[list[UtteranceRecord], list[UtteranceRecord]]:
    labeled = [r for r in records if r.labeled]
    if mode == "tts-only":
        return labeled, []
    if mode == "vc-only":
        return [], list(records)
    return labeled, list(records)  # speech pool includes labeled speech too


def _validation_loss(model: JointModel, paired: list[UtteranceRecord],
                     unpaired: list[UtteranceRecord], cfg: TrainConfig) -> float:
    """Eval-mode total over a capped, deterministic subset."""
    mode = cfg.mode
    total = 0.0
    sub_p = paired[:8]
    sub_u = unpaired[:8]
    if mode in ("full", "tts-only", "novq") and sub_p:
        frag = tts_step(sub_p, model, cfg, step=0, training=False)
        total += cfg.w_mel * frag.mel.item() + cfg.w_pitch * frag.pitch_ce.item()
        total += cfg.w_duration * frag.duration.item()
        if mode != "tts-only":
            pf = pair_step(sub_p, model, cfg, step=0, training=False,
                           text_quantized=frag.quantized)
            total += cfg.w_pair * pf.pair.item()
    if mode in ("full", "vc-only", "novq") and sub_u:
        frag = vc_step(sub_u, model, cfg, step=0, training=False)
        total += cfg.w_mel * frag.mel.item() + cfg.w_pitch * frag.pitch_ce.item()
    return total


def train(cfg: TrainConfig, records: list[UtteranceRecord],
          checkpoint_path=None, trace_path=None,
          stop_when=None) -> tuple[JointModel, AdamState, list[LossReport]]:
    """Run joint training until max_steps or a validation plateau.

    Convergence rule: stop early when the eval-mode validation loss has not
    improved by more than plateau_delta for plateau_epochs consecutive
    epochs.  `stop_when(report)` may end training once a target is met.
    """
    cfg.validate()
    if not records:
        raise DataError("corpus is empty")
    paired, unpaired = _pools(records, cfg.mode)
    if cfg.mode != "vc-only" and not paired:
        raise DataError("no labeled examples for a mode that trains the text pipeline")

    model = JointModel(cfg.model, seed=cfg.seed, use_vq=cfg.mode != "novq")
    opt = AdamState.for_params(model.store, lr=cfg.lr_init)

    primary = paired if cfg.mode != "vc-only" else unpaired
    batch_primary = cfg.batch_paired if cfg.mode != "vc-only" else max(cfg.batch_unpaired, 1)
    steps_per_epoch = max(1, math.ceil(len(primary) / batch_primary))

    seed_batch = (unpaired or paired)[:max(cfg.batch_paired + cfg.batch_unpaired, 8)]
    seed_codebook_from_batch(model, seed_batch)

    trace: list[LossReport] = []
    trace_fh = None
    if trace_path is not None:
        Path(trace_path).parent.mkdir(parents=True, exist_ok=True)
        trace_fh = open(trace_path, "w", encoding="utf-8")
        trace_fh.write(LossReport.csv_header() + "\n")

    last_checkpoint = None
    best_val = math.inf
    stale_epochs = 0
    step = 0
    try:
        epoch = 0
        unpaired_order: list[int] = []
        unpaired_cursor = 0
        while step < cfg.max_steps:
            order = model.rng.generator("data/shuffle_primary", epoch).permutation(
                len(primary)) if primary else np.array([], dtype=int)
            for chunk_start in range(0, max(len(order), 1), batch_primary):
                if step >= cfg.max_steps:
                    break
                batch_p: list[UtteranceRecord] = []
                batch_u: list[UtteranceRecord] = []
                if cfg.mode != "vc-only":
                    batch_p = [primary[i] for i in order[chunk_start:chunk_start + batch_primary]]
                    if cfg.mode != "tts-only" and unpaired and cfg.batch_unpaired > 0:
                        for _ in range(cfg.batch_unpaired):
                            if unpaired_cursor >= len(unpaired_order):
                                unpaired_order = list(model.rng.generator(
                                    "data/shuffle_speech", step).permutation(len(unpaired)))
                                unpaired_cursor = 0
                            batch_u.append(unpaired[unpaired_order[unpaired_cursor]])
                            unpaired_cursor += 1
                else:
                    batch_u = [primary[i] for i in order[chunk_start:chunk_start + batch_primary]]

                try:
                    report = joint_step(batch_p, batch_u, model, opt, cfg, step)
                except TrainingDiverged as exc:
                    hint = f"; last good checkpoint: {last_checkpoint}" if last_checkpoint \
                        else "; no checkpoint written yet"
                    raise TrainingDiverged(str(exc) + hint) from exc
                trace.append(report)
                if trace_fh is not None:
                    trace_fh.write(report.csv_row() + "\n")
                step += 1
                if stop_when is not None and stop_when(report):
                    step = cfg.max_steps
                    break

            epoch += 1
            opt.lr *= cfg.lr_decay_per_epoch
            if checkpoint_path is not None and epoch % cfg.checkpoint_every_epochs == 0:
                from .checkpoint import save_checkpoint
                save_checkpoint(checkpoint_path, model, opt, cfg, step)
                last_checkpoint = checkpoint_path

            val = _validation_loss(model, paired, unpaired, cfg)
            if val < best_val - cfg.plateau_delta:
                best_val = val
                stale_epochs = 0
            else:
                stale_epochs += 1
                if stale_epochs >= cfg.plateau_epochs:
                    break
    finally:
        if trace_fh is not None:
            trace_fh.close()

    if checkpoint_path is not None:
        from .checkpoint import save_checkpoint
        save_checkpoint(checkpoint_path, model, opt, cfg, step)
    return model, opt, trace
