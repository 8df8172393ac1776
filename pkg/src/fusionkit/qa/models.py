"""Toy QA models: the stream processor (concat / BLP / DCCA variants) and
the dual-stream cross-modal model.

The pipeline before the fusion slot is parameter-free, mirroring the
full-scale layout where pretrained features are context-matched and
combined without trainable layers and all capacity sits in the voting
head.  Per candidate, the context features are matched against the
question and the candidate answer, then combined per variant:

* ``concat``: ``[F; Aq; Aa; F*Aq; F*Aa]`` (five feature-dim parts),
* ``blp``: ``[fuse(F, Aq); fuse(F, Aa)]`` with the configured fusion op,
* ``dcca``: coordination encoders applied to F and to the matched
  query/answer representations, then the concat combination on the encoded
  features,

followed by a temporal max-pool and a two-layer head producing one vote
per candidate; votes from all enabled streams are summed.  Candidates
share every parameter, so the model is equivariant to answer reordering,
and argmax ties resolve to the lowest index.

The dual-stream model matches both sequences against question and answer,
combines each stream as ``F * Aq * Aa``, fuses the two streams with one
fusion op (per time step by default, or after pooling with
``fuse_mode="pool_then_fuse"``), pools, and scores with a single head.

All streams, the question, and the answers must share one feature width;
the models consume them as-is (the toy analog of frozen upstream
extractors).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Param
from ..cca import TwoLayerEncoder, canonical_correlation_loss
from ..fusion import fusion_kinds, make_fusion
from .attention import context_match
from .data import N_ANSWERS

STREAM_NAMES = ("context", "text")
VARIANTS = ("concat", "blp", "dcca")


def _fan_in(rng, fan, shape):
    bound = 1.0 / np.sqrt(fan)
    return rng.uniform(-bound, bound, size=shape)


def _make_head(rng, in_dim, hidden_dim, prefix):
    return {
        "w1": Param(_fan_in(rng, in_dim, (in_dim, hidden_dim)),
                    f"{prefix}.head_w1"),
        "b1": Param(np.zeros(hidden_dim), f"{prefix}.head_b1"),
        "w2": Param(_fan_in(rng, hidden_dim, (hidden_dim, 1)),
                    f"{prefix}.head_w2"),
        "b2": Param(np.zeros(1), f"{prefix}.head_b2"),
    }


def _head_votes(head, pooled):
    hidden = ad.relu(ad.add(ad.matmul(pooled, head["w1"]), head["b1"]))
    return ad.reshape(
        ad.add(ad.matmul(hidden, head["w2"]), head["b2"]), (N_ANSWERS,)
    )


@dataclass
class StreamModelConfig:
    """Architecture and dataset dims for one stream-processor model."""

    variant: str = "concat"
    fusion: str | None = None
    seq_len: int = 8
    context_dim: int = 16
    text_dim: int = 16
    query_dim: int = 16
    feature_dim: int = 16
    fused_dim: int = 32
    hidden_dim: int = 48
    streams: tuple[str, ...] = STREAM_NAMES
    no_question: bool = False
    seed: int = 0
    fusion_options: dict = field(default_factory=dict)
    dcca_weight: float = 0.1
    dcca_components: int = 4
    dcca_mode: str = "joint"

    def __post_init__(self):
        self.streams = tuple(self.streams)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; use {VARIANTS}")
        if self.variant == "blp":
            if self.fusion not in fusion_kinds():
                raise ValueError(
                    f"blp variant needs a fusion kind from {fusion_kinds()}, "
                    f"got {self.fusion!r}"
                )
        if not self.streams or any(s not in STREAM_NAMES for s in self.streams):
            raise ValueError(
                f"streams must be a non-empty subset of {STREAM_NAMES}, "
                f"got {self.streams}"
            )
        if self.dcca_mode not in ("joint", "pretrain"):
            raise ValueError(f"unknown dcca_mode {self.dcca_mode!r}")
        used = {"context": self.context_dim, "text": self.text_dim}
        dims = [used[s] for s in self.streams] + [self.query_dim]
        if any(d != self.feature_dim for d in dims):
            raise ValueError(
                f"all stream and query dims must equal feature_dim "
                f"({self.feature_dim}); got context={self.context_dim}, "
                f"text={self.text_dim}, query={self.query_dim}"
            )

    def to_dict(self):
        out = asdict(self)
        out["streams"] = list(self.streams)
        out["model_type"] = "stream"
        return out

    @classmethod
    def from_dict(cls, obj):
        obj = {k: v for k, v in obj.items() if k != "model_type"}
        return cls(**obj)


class StreamModel:
    """Answer-voting model with per-stream processors (see module docs)."""

    def __init__(self, config):
        self.config = config
        f = config.feature_dim
        seeds = np.random.SeedSequence(config.seed).generate_state(
            1 + 3 * len(config.streams)
        )
        self.fusion = {}
        self.heads = {}
        self.ctx_encoder = {}
        self.text_encoder = None
        if config.variant == "dcca":
            self.text_encoder = TwoLayerEncoder(
                f, activation="tanh", seed=int(seeds[0]), name="enc_text"
            )
        next_seed = 1
        for s in config.streams:
            if config.variant == "blp":
                self.fusion[s] = make_fusion(
                    config.fusion, (f, f), config.fused_dim,
                    seed=int(seeds[next_seed]), **config.fusion_options,
                )
            if config.variant == "dcca":
                self.ctx_encoder[s] = TwoLayerEncoder(
                    f, activation="tanh", seed=int(seeds[next_seed + 1]),
                    name=f"{s}.enc",
                )
            hrng = np.random.default_rng(int(seeds[next_seed + 2]))
            self.heads[s] = _make_head(
                hrng, self._head_in_dim(s), config.hidden_dim, s
            )
            next_seed += 3

    def _head_in_dim(self, stream):
        if self.config.variant == "blp":
            return 2 * self.fusion[stream].output_dim
        return 5 * self.config.feature_dim

    def params(self):
        out = {}
        if self.text_encoder is not None:
            out.update(self.text_encoder.params())
        for s in self.config.streams:
            if s in self.fusion:
                for name, p in self.fusion[s].params().items():
                    out[f"{s}.fusion.{name}"] = p
            if s in self.ctx_encoder:
                out.update(self.ctx_encoder[s].params())
            out.update({p.name: p for p in self.heads[s].values()})
        return out

    def trainable_params(self):
        params = self.params()
        if self.config.variant == "dcca" and self.config.dcca_mode == "pretrain":
            frozen = set(self._encoder_params())
            params = {k: v for k, v in params.items() if k not in frozen}
        return params

    def _encoder_params(self):
        out = {}
        if self.text_encoder is not None:
            out.update(self.text_encoder.params())
        for enc in self.ctx_encoder.values():
            out.update(enc.params())
        return out

    def param_count(self, trainable_only=False):
        source = self.trainable_params() if trainable_only else self.params()
        return int(sum(p.value.size for p in source.values()))

    # -- forward ----------------------------------------------------------

    def _text_features(self, example):
        question = np.zeros_like(example.question) if self.config.no_question \
            else example.question
        return question.reshape(1, -1), example.answers

    def _matched(self, example, stream, qf, af):
        seq = example.context_seq if stream == "context" else example.text_seq
        if seq is None:
            raise ValueError(f"example is missing the {stream!r} stream")
        matched_q = context_match(seq, qf)
        matched_a = [
            context_match(seq, ad.narrow(af, 0, i, 1)) for i in range(N_ANSWERS)
        ]
        return seq, matched_q, matched_a

    def forward(self, example, train_mode=False):
        cfg = self.config
        qf, af = self._text_features(example)
        votes = None
        for s in cfg.streams:
            feats, matched_q, matched_a = self._matched(example, s, qf, af)
            if cfg.variant == "dcca":
                feats = self.ctx_encoder[s](feats)
                matched_q = self.text_encoder(matched_q)
                matched_a = [self.text_encoder(a) for a in matched_a]
            f_rep = ad.concat([feats] * N_ANSWERS, axis=0)
            q_rep = ad.concat([matched_q] * N_ANSWERS, axis=0)
            a_rep = ad.concat(matched_a, axis=0)
            if cfg.variant == "blp":
                op = self.fusion[s]
                parts = [
                    op.fuse(f_rep, q_rep, train_mode=train_mode),
                    op.fuse(f_rep, a_rep, train_mode=train_mode),
                ]
            else:
                parts = [
                    f_rep, q_rep, a_rep,
                    ad.mul(f_rep, q_rep), ad.mul(f_rep, a_rep),
                ]
            stacked = ad.concat(parts, axis=1)
            width = np.shape(ad.value_of(stacked))[-1]
            pooled = ad.reduce_max(
                ad.reshape(stacked, (N_ANSWERS, cfg.seq_len, width)), axis=1
            )
            stream_votes = _head_votes(self.heads[s], pooled)
            votes = stream_votes if votes is None else ad.add(votes, stream_votes)
        return votes

    def predict(self, example):
        votes = np.asarray(ad.value_of(self.forward(example)))
        return int(np.argmax(votes))

    # -- coordination -----------------------------------------------------

    def _coordination_pairs(self, example):
        qf, af = self._text_features(example)
        pairs = []
        for s in self.config.streams:
            feats, matched_q, _ = self._matched(example, s, qf, af)
            pairs.append((self.ctx_encoder[s](feats),
                          self.text_encoder(matched_q)))
        return pairs

    def batch_aux_loss(self, batch, train_mode):
        """Weighted coordination loss for joint DCCA training, else None."""
        cfg = self.config
        if cfg.variant != "dcca" or cfg.dcca_mode != "joint":
            return None
        if not train_mode:
            return None
        left, right = [], []
        for example in batch:
            for enc_ctx, enc_txt in self._coordination_pairs(example):
                left.append(enc_ctx)
                right.append(enc_txt)
        loss = canonical_correlation_loss(
            ad.concat(left, axis=0), ad.concat(right, axis=0),
            cfg.dcca_components,
        )
        return ad.mul(loss, cfg.dcca_weight)

    def pretrain_coordination(self, examples, steps=100, lr=1e-3):
        """Train only the encoders on the coordination loss, then freeze."""
        from ..training import Optimizer

        if self.config.variant != "dcca":
            raise ValueError("pretraining applies to the dcca variant only")
        enc_params = self._encoder_params()
        opt = Optimizer(kind="adam", lr=lr)
        history = []
        for _ in range(steps):
            with ad.record():
                left, right = [], []
                for example in examples:
                    for enc_ctx, enc_txt in self._coordination_pairs(example):
                        left.append(enc_ctx)
                        right.append(enc_txt)
                loss = canonical_correlation_loss(
                    ad.concat(left, axis=0), ad.concat(right, axis=0),
                    self.config.dcca_components,
                )
            ad.zero_grad(enc_params)
            ad.backward(loss)
            opt.step(enc_params)
            history.append(float(loss.value))
        return history


@dataclass
class DualStreamConfig:
    """Architecture for the cross-modal dual-stream model."""

    fusion: str = "mlb"
    fuse_mode: str = "per_timestep"
    seq_len: int = 8
    context_dim: int = 16
    text_dim: int = 16
    query_dim: int = 16
    feature_dim: int = 16
    fused_dim: int = 32
    hidden_dim: int = 48
    no_question: bool = False
    seed: int = 0
    fusion_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fusion not in fusion_kinds():
            raise ValueError(
                f"fusion must be one of {fusion_kinds()}, got {self.fusion!r}"
            )
        if self.fuse_mode not in ("per_timestep", "pool_then_fuse"):
            raise ValueError(f"unknown fuse_mode {self.fuse_mode!r}")
        dims = (self.context_dim, self.text_dim, self.query_dim)
        if any(d != self.feature_dim for d in dims):
            raise ValueError(
                f"all stream and query dims must equal feature_dim "
                f"({self.feature_dim}); got {dims}"
            )

    def to_dict(self):
        out = asdict(self)
        out["model_type"] = "dual"
        return out

    @classmethod
    def from_dict(cls, obj):
        obj = {k: v for k, v in obj.items() if k != "model_type"}
        return cls(**obj)


class DualStreamModel:
    """Fuses the two context-matched streams into one joint representation."""

    def __init__(self, config):
        self.config = config
        f = config.feature_dim
        seeds = np.random.SeedSequence(config.seed).generate_state(2)
        self.fusion = make_fusion(
            config.fusion, (f, f), config.fused_dim, seed=int(seeds[0]),
            **config.fusion_options,
        )
        hrng = np.random.default_rng(int(seeds[1]))
        self.head = _make_head(hrng, self.fusion.output_dim,
                               config.hidden_dim, "joint")

    def params(self):
        out = {}
        for name, p in self.fusion.params().items():
            out[f"fusion.{name}"] = p
        out.update({p.name: p for p in self.head.values()})
        return out

    def trainable_params(self):
        return self.params()

    def param_count(self, trainable_only=False):
        return int(sum(p.value.size for p in self.params().values()))

    def _combined(self, seq, qf, af):
        matched_q = context_match(seq, qf)
        rows = []
        for i in range(N_ANSWERS):
            matched_a = context_match(seq, ad.narrow(af, 0, i, 1))
            rows.append(ad.mul(ad.mul(seq, matched_q), matched_a))
        return ad.concat(rows, axis=0)

    def forward(self, example, train_mode=False):
        cfg = self.config
        if example.context_seq is None or example.text_seq is None:
            raise ValueError(
                "dual-stream model requires both context and text streams"
            )
        question = np.zeros_like(example.question) if cfg.no_question \
            else example.question
        qf = question.reshape(1, -1)
        af = example.answers
        ctx = self._combined(example.context_seq, qf, af)
        txt = self._combined(example.text_seq, qf, af)
        if cfg.fuse_mode == "per_timestep":
            fused = self.fusion.fuse(ctx, txt, train_mode=train_mode)
            width = np.shape(ad.value_of(fused))[-1]
            pooled = ad.reduce_max(
                ad.reshape(fused, (N_ANSWERS, cfg.seq_len, width)), axis=1
            )
        else:
            f = cfg.feature_dim
            pooled_ctx = ad.reduce_max(
                ad.reshape(ctx, (N_ANSWERS, cfg.seq_len, f)), axis=1
            )
            pooled_txt = ad.reduce_max(
                ad.reshape(txt, (N_ANSWERS, cfg.seq_len, f)), axis=1
            )
            pooled = self.fusion.fuse(pooled_ctx, pooled_txt,
                                      train_mode=train_mode)
        return _head_votes(self.head, pooled)

    def predict(self, example):
        votes = np.asarray(ad.value_of(self.forward(example)))
        return int(np.argmax(votes))


def build_model(config):
    """Instantiate a model from a config dict (as stored in checkpoints)."""
    if isinstance(config, StreamModelConfig):
        return StreamModel(config)
    if isinstance(config, DualStreamConfig):
        return DualStreamModel(config)
    kind = config.get("model_type", "stream")
    if kind == "stream":
        return StreamModel(StreamModelConfig.from_dict(config))
    if kind == "dual":
        return DualStreamModel(DualStreamConfig.from_dict(config))
    raise ValueError(f"unknown model_type {kind!r}")
