"""Seeded desk-scale vision-language backend with exact analytic gradients.

The toy model is small enough to differentiate by hand, which makes every
gradient in the explanation pipeline checkable against finite differences.
Architecture: bilinear resize to 32×32 → 4×4/stride-4 conv (3→8 channels) →
rectifier (the target vision layer, an 8×8×8 activation block) → global
average pool → per-step linear decoder over a 64-symbol byte alphabet.

Decoding is greedy but template-forced: the report text is the canonical
serialization whose grade and staining location are functions of the pooled
features, and a constant additive bias on the scripted token guarantees the
argmax picks it while leaving the chosen-token log-probability genuinely
dependent on the image.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .backend import BackendDescriptor, CaptureBundle, GenerationResult
from .errors import GenerationFailed, SpanOutOfRange, ValueOutOfRange
from .imaging import ImageBuffer
from .promptsynth import SpecializedPrompt
from .report import LOCATIONS, PercentRange, StainReport, serialize_report

INPUT_SIZE = (32, 32)
GRID = (8, 8)
CHANNELS = 8
VOCAB = 64

# 63 printable symbols + end-of-sequence (id 63, also used as the start token).
ALPHABET = (
    "abcdefghijklmnopqrstuvwxyz"
    "0123456789"
    "ABDEFHIKLOPRT"
    '{}":,-_ \n.'
    "()'/"
)
EOS = 63
assert len(ALPHABET) == 63

# Additive logit bias on the scripted token. Large enough that the scripted
# token wins the argmax (unboosted logits stay within a fraction of a unit for
# pixel inputs in [0,1]; generate() asserts the margin), yet small enough that
# the chosen-token probability is unsaturated and gradients stay well above
# double-precision finite-difference noise.
SCRIPT_BOOST = 6.0

_CHAR_TO_ID = {ch: i for i, ch in enumerate(ALPHABET)}


def splitmix64(seed: int):
    """Standard splitmix64 stream of 64-bit unsigned integers."""
    mask = (1 << 64) - 1
    state = seed & mask
    while True:
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        yield z ^ (z >> 31)


@dataclass(frozen=True)
class ToySpec:
    seed: int = 0


def _resize_matrix(out_n: int, in_n: int) -> np.ndarray:
    """Dense 1-D bilinear resampling matrix, half-pixel centers, clamped."""
    m = np.zeros((out_n, in_n))
    s = np.clip((np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5, 0.0, in_n - 1)
    lo = np.floor(s).astype(int)
    hi = np.minimum(lo + 1, in_n - 1)
    frac = s - lo
    for d in range(out_n):
        m[d, lo[d]] += 1.0 - frac[d]
        m[d, hi[d]] += frac[d]
    return m


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x))


class ToyBackend:
    """Deterministic seeded backend implementing the plug-in contract."""

    def __init__(self, spec: ToySpec | None = None):
        self.spec = spec or ToySpec()
        rng = splitmix64(self.spec.seed)

        def draw(n: int) -> np.ndarray:
            return np.array([(next(rng) / 2.0**64) * 0.2 - 0.1 for _ in range(n)])

        # Declared weight order: conv kernel, decoder matrix, decoder bias.
        self.w_conv = draw(CHANNELS * 3 * 4 * 4).reshape(CHANNELS, 3, 4, 4)
        self.w_out = draw(VOCAB * (CHANNELS + VOCAB)).reshape(VOCAB, CHANNELS + VOCAB)
        self.b_out = draw(VOCAB)
        self._lock = threading.Lock()

    def descriptor(self) -> BackendDescriptor:
        return BackendDescriptor(
            name=f"toy-{self.spec.seed}",
            input_size=INPUT_SIZE,
            grid=GRID,
            channels=CHANNELS,
            vocab_size=VOCAB,
            target_layer="conv.rectifier",
        )

    # --- forward pieces ----------------------------------------------------

    def _to_float(self, image: ImageBuffer) -> np.ndarray:
        return image.pixels.astype(np.float64) / 255.0

    def _resize(self, img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ry = _resize_matrix(INPUT_SIZE[0], img.shape[0])
        rx = _resize_matrix(INPUT_SIZE[1], img.shape[1])
        resized = np.einsum("oh,hwc,pw->opc", ry, img, rx)
        return resized, ry, rx

    def _preactivations(self, resized: np.ndarray) -> np.ndarray:
        gh, gw = GRID
        patches = resized.reshape(gh, 4, gw, 4, 3).transpose(0, 2, 4, 1, 3)
        return np.einsum("ijcuv,kcuv->kij", patches, self.w_conv)

    def _features(self, activations: np.ndarray) -> np.ndarray:
        return activations.mean(axis=(1, 2))

    def _step_logits(self, feats: np.ndarray, prev_id: int, target_id: int) -> np.ndarray:
        x = np.zeros(CHANNELS + VOCAB)
        x[:CHANNELS] = feats
        x[CHANNELS + prev_id] = 1.0
        logits = self.w_out @ x + self.b_out
        logits[target_id] += SCRIPT_BOOST
        return logits

    def _token_logprobs(self, feats: np.ndarray, token_ids: tuple[int, ...]) -> np.ndarray:
        out = np.empty(len(token_ids))
        prev = EOS
        for t, tok in enumerate(token_ids):
            logits = self._step_logits(feats, prev, tok)
            out[t] = logits[tok] - _logsumexp(logits)
            prev = tok
        return out

    def _template_report(self, feats: np.ndarray) -> StainReport:
        grade = int(min(3, np.floor(4.0 * _sigmoid(feats[0]) + 0.5)))
        location = LOCATIONS[int(np.argmax(feats[1:5]))]
        return StainReport(
            stain_type="KI67",
            percentage_of_cells_stained=PercentRange(10, 20),
            staining_intensity_grade=grade,
            type_of_cells_stained="tumor cells",
            staining_location_per_cell=location,
            report="toy stain analysis of the slide",
            explanation="synthetic deterministic backend output",
        )

    # --- contract operations -------------------------------------------------

    def generate(self, image: ImageBuffer, prompt: SpecializedPrompt) -> GenerationResult:
        with self._lock:
            if image.width < 1 or image.height < 1:
                raise GenerationFailed("degenerate input image")
            resized, _, _ = self._resize(self._to_float(image))
            activations = np.maximum(self._preactivations(resized), 0.0)
            feats = self._features(activations)
            text = serialize_report(self._template_report(feats))
            try:
                token_ids = tuple(_CHAR_TO_ID[ch] for ch in text)
            except KeyError as exc:  # template alphabet is fixed; unreachable
                raise GenerationFailed(f"character outside toy alphabet: {exc}") from exc

            logprobs = []
            prev = EOS
            for tok in token_ids + (EOS,):
                logits = self._step_logits(feats, prev, tok)
                chosen = int(np.argmax(logits))
                if chosen != tok:
                    raise GenerationFailed("script forcing margin violated")
                if tok != EOS:
                    logprobs.append(logits[tok] - _logsumexp(logits))
                prev = tok
            offsets = tuple((i, i + 1) for i in range(len(text)))
            return GenerationResult(token_ids, text, offsets, tuple(logprobs))

    def capture(
        self,
        image: ImageBuffer,
        prompt: SpecializedPrompt,
        gen: GenerationResult,
        span,
        mode: Literal["standard", "guided"],
    ) -> CaptureBundle:
        if mode not in ("standard", "guided"):
            raise ValueOutOfRange(f"unknown capture mode {mode!r}")
        if span.end > len(gen.token_ids):
            raise SpanOutOfRange(
                f"span ({span.start}, {span.end}) exceeds {len(gen.token_ids)} tokens"
            )
        with self._lock:
            img = self._to_float(image)
            activations, layer_grads, grad_preact, input_grads = self._backward(
                img, gen.token_ids, span, mode
            )
            return CaptureBundle(
                activations=activations,
                layer_gradients=layer_grads,
                input_gradients=input_grads,
                mode=mode,
            )

    # --- analytic backward ---------------------------------------------------

    def _backward(self, img: np.ndarray, token_ids, span, mode: str):
        resized, ry, rx = self._resize(img)
        preact = self._preactivations(resized)
        activations = np.maximum(preact, 0.0)
        feats = self._features(activations)

        d_feats = np.zeros(CHANNELS)
        prev = EOS
        for t, tok in enumerate(token_ids):
            logits = self._step_logits(feats, prev, tok)
            if span.start <= t < span.end:
                d_logits = -np.exp(logits - _logsumexp(logits))
                d_logits[tok] += 1.0
                d_feats += self.w_out[:, :CHANNELS].T @ d_logits
            prev = tok

        gh, gw = GRID
        layer_grads = np.repeat(d_feats, gh * gw).reshape(CHANNELS, gh, gw) / (gh * gw)
        gate = preact > 0.0
        if mode == "guided":
            gate = gate & (layer_grads > 0.0)
        grad_preact = layer_grads * gate

        d_patches = np.einsum("kij,kcuv->ijcuv", grad_preact, self.w_conv)
        d_resized = d_patches.transpose(0, 3, 1, 4, 2).reshape(gh * 4, gw * 4, 3)
        input_grads = np.einsum("oh,opc,pw->hwc", ry, d_resized, rx)
        return activations, layer_grads, grad_preact, input_grads

    # --- oracles for verification --------------------------------------------

    def loss_from_float_image(self, img: np.ndarray, token_ids, span) -> float:
        """Targeted span loss as a scalar function of a float image in [0,1]."""
        resized, _, _ = self._resize(np.asarray(img, dtype=np.float64))
        activations = np.maximum(self._preactivations(resized), 0.0)
        return self.loss_from_activations(activations, token_ids, span)

    def loss_from_activations(self, activations: np.ndarray, token_ids, span) -> float:
        """Targeted span loss as a scalar function of the target-layer block."""
        feats = self._features(np.asarray(activations, dtype=np.float64))
        logprobs = self._token_logprobs(feats, tuple(token_ids))
        return float(logprobs[span.start : span.end].sum())

    def recomputed_logprobs(self, image: ImageBuffer, token_ids) -> np.ndarray:
        """Teacher-forced log-probabilities for an already-generated sequence."""
        resized, _, _ = self._resize(self._to_float(image))
        activations = np.maximum(self._preactivations(resized), 0.0)
        return self._token_logprobs(self._features(activations), tuple(token_ids))

    def rectifier_trace(self, image: ImageBuffer, token_ids, span, mode: str):
        """(pre-activations, propagated rectifier gradients) for gating checks."""
        img = self._to_float(image)
        resized, _, _ = self._resize(img)
        preact = self._preactivations(resized)
        _, _, grad_preact, _ = self._backward(img, token_ids, span, mode)
        return preact, grad_preact


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def make_toy_backend(spec: ToySpec | None = None) -> ToyBackend:
    return ToyBackend(spec)
