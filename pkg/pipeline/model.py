"""Full detector assembly and the batched forward pass."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from core.module import Module
from core.tensor import Tensor, concat
from data.batching import Batch, collate
from models.config_schemas import MODULE_IDS, RunConfig
from models.data_schemas import NewsRecord
from networks.encoders import ImagePatternEncoder, ImageSemanticEncoder, IPProjection, TextEncoder
from networks.moe_pro import MMoEPro, MoEOutput
from networks.refine import AdjustedSet, CoarseHead, StyleBank, adjust_all
from networks.transformer_block import TransformerBlock
from utils.errors import NumericDivergenceError
from voting.veto import VoteInput, VoteResult, confidence, veto_vote

logger = logging.getLogger(__name__)

EXPERT_NETWORKS = ("is", "t", "mm", "mix")
HEAD_NAMES = ("ip", "is", "t", "mm", "mix", "cons")
MIX_SLOTS = 5


@dataclass
class ForwardOutputs:
    """Everything one forward pass produces for a batch.

    ``logits`` holds ``[B]`` tensors keyed ip, is, t, mm, cons and mix;
    ``refined`` holds ``[B, d]`` tensors keyed ip, is0, is1, t0, t1, mm0, mm1.
    """

    logits: Dict[str, Tensor]
    refined: Dict[str, Tensor]
    adjusted: AdjustedSet
    e_mix: Tensor
    r_mix: Tensor
    expert_diagnostics: Dict[str, MoEOutput]
    votes: List[VoteResult] = field(default_factory=list)

    def logit_array(self, name: str) -> np.ndarray:
        return self.logits[name].values.astype(np.float64)

    def head_labels(self, name: str) -> np.ndarray:
        """``sigmoid(O) > 0.5`` per sample for one head."""
        return np.array([int(confidence(float(o)) > 0.5) for o in self.logit_array(name)], dtype=np.int64)

    def veto_labels(self) -> np.ndarray:
        return np.array([vote.label for vote in self.votes], dtype=np.int64)


class GamedModel(Module):
    """Encoders, expert networks, coarse heads and style generators of the detector."""

    def __init__(self, cfg: RunConfig, rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        enc, init = cfg.encoder, cfg.model.init
        d, hidden, n_experts = enc.d, enc.mlp_hidden, cfg.model.n_experts

        self.text_encoder = TextEncoder(enc, rng, init)
        self.semantic_encoder = ImageSemanticEncoder(enc, rng, init)
        self.pattern_encoder = ImagePatternEncoder(enc, rng, init)
        self.ip_projection = IPProjection(enc, rng, init)
        token_inputs = {"is", "t"} | ({"mm"} if cfg.model.fusion_input == "raw" else set())
        self.experts: Dict[str, Union[MMoEPro, TransformerBlock]] = {}
        for name in EXPERT_NETWORKS:
            d_in = MIX_SLOTS * d if name == "mix" else d
            if cfg.ablation.transformer_block:
                self.experts[name] = TransformerBlock(d_in, d, hidden, rng, init)
            else:
                self.experts[name] = MMoEPro(d_in, d, hidden, n_experts, rng, init, tokens=name in token_inputs)
        self.heads: Dict[str, CoarseHead] = {name: CoarseHead(d, rng, init) for name in HEAD_NAMES}
        self.styles = StyleBank(d, hidden, rng, init)
        logger.debug(f"built model with {self.parameter_count()} parameters")

    def parameter_count(self) -> int:
        return sum(param.size for param in self.parameters())

    @property
    def active_modules(self) -> List[str]:
        return list(self.cfg.ablation.module_subset)

    def forward(self, batch: Batch, train_mode: bool = False,
                rng: Optional[np.random.Generator] = None, vote: bool = True) -> ForwardOutputs:
        """Run every stage on one batch.

        Args:
            batch: Collated records
            train_mode: Apply image-semantic augmentation (when enabled in the config)
            rng: Generator driving the augmentation choice
            vote: Run the veto vote per sample

        Returns:
            Logits, refined and adjusted representations, mixture output and votes
        """
        cfg, ablation = self.cfg, self.cfg.ablation
        classic = ablation.classic_mmoe_gating
        augment = train_mode and cfg.train.augment

        f_t = self.text_encoder(batch.tokens)
        f_is = self.semantic_encoder(batch.images, augment=augment, rng=rng)
        f_ip = self.pattern_encoder(batch.images)
        r_ip = self.ip_projection(f_ip)

        out_is = self.experts["is"](f_is, classic)
        out_t = self.experts["t"](f_t, classic)
        r_is0, r_is1 = out_is.outputs[:2]
        r_t0, r_t1 = out_t.outputs[:2]
        f_mm = f_t + f_is if cfg.model.fusion_input == "raw" else r_is1 + r_t1
        out_mm = self.experts["mm"](f_mm, classic)
        r_mm0, r_mm1 = out_mm.outputs[:2]

        logits = {
            "ip": self.heads["ip"](r_ip),
            "is": self.heads["is"](r_is0),
            "t": self.heads["t"](r_t0),
            "mm": self.heads["mm"](r_mm0),
            "cons": self.heads["cons"](r_mm0),
        }
        adjusted = adjust_all(r_ip, r_is0, r_t0, r_mm0, r_mm1,
                              logits["ip"], logits["is"], logits["t"], logits["cons"],
                              self.styles, ablation, o_mm=logits["mm"])

        e_mix = concat(self._mix_slots(adjusted, len(batch)), axis=-1)
        out_mix = self.experts["mix"](e_mix, classic)
        r_mix = out_mix.outputs[0]
        logits["mix"] = self.heads["mix"](r_mix)

        outputs = ForwardOutputs(
            logits=logits,
            refined={"ip": r_ip, "is0": r_is0, "is1": r_is1, "t0": r_t0, "t1": r_t1,
                     "mm0": r_mm0, "mm1": r_mm1},
            adjusted=adjusted,
            e_mix=e_mix,
            r_mix=r_mix,
            expert_diagnostics={"is": out_is, "t": out_t, "mm": out_mm, "mix": out_mix},
        )
        if vote:
            self._check_finite(outputs)
            outputs.votes = self.vote(outputs)
        return outputs

    def _mix_slots(self, adjusted: AdjustedSet, batch_size: int) -> List[Tensor]:
        zero = Tensor(np.zeros((batch_size, self.cfg.encoder.d)))
        active = self.cfg.ablation.active
        owners = ("ip", "is", "t", "mm", "mm")
        return [slot if active(owner) else zero for slot, owner in zip(adjusted.slots(), owners)]

    def _check_finite(self, outputs: ForwardOutputs) -> None:
        for name, tensor in outputs.logits.items():
            if not np.all(np.isfinite(tensor.values)):
                raise NumericDivergenceError(f"non-finite {name} logits")

    def vote(self, outputs: ForwardOutputs) -> List[VoteResult]:
        """Veto vote per sample over the active modules."""
        veto = self.cfg.veto
        modules = tuple(m for m in MODULE_IDS if m in self.active_modules)
        per_module = {m: outputs.logit_array(m) for m in modules}
        mix = outputs.logit_array("mix")
        results = []
        for index in range(len(mix)):
            vote_input = VoteInput(
                module_logits=tuple((m, float(per_module[m][index])) for m in modules),
                mix_logit=float(mix[index]),
                theta_high=veto.theta_high,
                theta_low=veto.theta_low,
                rule3_reading=veto.rule3_reading,
                modules=modules,
            )
            results.append(veto_vote(vote_input))
        return results

    def constrain(self) -> None:
        """Re-project the image-pattern kernels after a parameter update."""
        self.pattern_encoder.constrain()


def forward(record: NewsRecord, model: GamedModel, train_mode: bool = False,
            rng: Optional[np.random.Generator] = None) -> ForwardOutputs:
    """Forward pass for a single record (a batch of one)."""
    return model.forward(collate([record], model.cfg.encoder.text_len), train_mode=train_mode, rng=rng)
