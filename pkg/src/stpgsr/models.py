"""Super-resolution models: dual-graph edge learner and the two baselines.

All models map a low-resolution connectome (n_s nodes) to a high-resolution
one (n_t nodes) and guarantee structurally valid predictions (symmetric, zero
diagonal, nonnegative) for any parameter values:

* ``StpGsrModel`` initializes target edge features from a Gram product of
  learned source-node embeddings, then refines them as node features on the
  dual of the complete target graph before folding back to a matrix.
* ``DirectSrModel`` stacks two node-space blocks and reads the prediction off
  a min-max scaled Gram product of the final embeddings.
* ``AutoencoderModel`` extends DirectSR with a mirrored decoder that
  down-resolves the prediction back to source resolution; its loss adds the
  reconstruction term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ShapeError, ValidationError
from .graphs import (
    DualTopology,
    build_dual_complete,
    devectorize,
    upper_flat_indices,
    upper_tri_vectorize,
    validate_connectome,
)
from .layers import GtbParams, gtb_forward, init_gtb

NODE_SPACE_HEADS = 4
NODE_SPACE_DROPOUT = 0.2

_dual_cache: dict[int, DualTopology] = {}


def shared_dual_topology(n: int) -> DualTopology:
    """Duals are data-independent; build once per size and share read-only."""
    if n not in _dual_cache:
        _dual_cache[n] = build_dual_complete(n)
    return _dual_cache[n]


def complete_arcs(n: int):
    """All ordered pairs (src, dst) with src != dst, row-major order.

    Dense connectomes are treated as complete weighted digraphs so every node
    attends over every other node, zero-weight pairs included.
    """
    src, dst = np.where(~np.eye(n, dtype=bool))
    return src, dst


def _arc_weights(x0: Tensor, src, dst) -> Tensor:
    # gathered from the (possibly taped) matrix so input gradients are exact
    n = x0.shape[0]
    return ad.take_flat(x0, src * n + dst)


@dataclass
class ModelOutput:
    """One forward pass: the assembled prediction plus taped tensors."""

    matrix: np.ndarray
    upper: Tensor
    tape: Tape | None
    recon_matrix: np.ndarray | None = None
    recon_upper: Tensor | None = None


def _gram_minmax(z: Tensor, n: int):
    """Min-max scaled Gram matrix of column embeddings, and its upper vector."""
    gram = ad.matmul(ad.transpose(z), z)
    scaled = ad.minmax_scale(gram)
    upper = ad.take_flat(scaled, upper_flat_indices(n))
    return scaled, upper


class _ModelBase:
    kind = "base"

    def __init__(self, n_s: int, n_t: int, seed: int):
        if n_s < 2 or n_t < 2:
            raise ShapeError(f"need at least 2 nodes per resolution, got {n_s}, {n_t}")
        self.n_s = n_s
        self.n_t = n_t
        self.seed = seed
        self._blocks: list[GtbParams] = []

    def _add_block(self, block: GtbParams) -> GtbParams:
        self._blocks.append(block)
        return block

    def parameters(self):
        out = []
        for block in self._blocks:
            out.extend(block.parameters())
        return out

    def parameter_count(self) -> int:
        return sum(p.values.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def _input_leaf(self, a_s, tape: Tape | None) -> tuple[Tensor, Tape | None]:
        """Source matrix as node features; a Tensor input bypasses connectome
        validation (raw-feature path used by the gradient checks)."""
        if isinstance(a_s, Tensor):
            x0 = a_s
        else:
            a_s = validate_connectome(a_s, "source connectome")
            if tape is None:
                tape = Tape()
            x0 = tape.leaf(a_s)
        if x0.values.ndim != 2 or x0.shape != (self.n_s, self.n_s):
            raise ShapeError(f"expected {self.n_s} source nodes, got {x0.shape}")
        return x0, x0.tape

    def loss(self, output: ModelOutput, a_t: np.ndarray, a_s: np.ndarray) -> Tensor:
        """L1 on the upper triangle; equals the off-diagonal full-matrix mean."""
        target = upper_tri_vectorize(a_t)
        return ad.l1_loss(output.upper, Tensor(target))


class StpGsrModel(_ModelBase):
    """Two-stage edge learner: target edge initializer + dual-graph refiner."""

    kind = "stp_gsr"

    def __init__(self, n_s: int, n_t: int, seed: int = 0):
        super().__init__(n_s, n_t, seed)
        rng = np.random.default_rng(seed)
        self.node_gtb = self._add_block(
            init_gtb(
                "node_gtb",
                d_in=n_s,
                d_out=n_t,
                num_heads=NODE_SPACE_HEADS,
                rng=rng,
                dropout_p=NODE_SPACE_DROPOUT,
            )
        )
        # edge-space block: single head on scalar dual-node features
        self.dual_gtb = self._add_block(
            init_gtb("dual_gtb", d_in=1, d_out=1, num_heads=1, rng=rng, d_head=1)
        )
        self.dual_topology = shared_dual_topology(n_t)
        self.last_dual_stats: dict[str, int] = {}

    def target_edge_init(
        self,
        a_s,
        tape: Tape | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Initial target edge features in [0, 1]: min-max scaled Gram matrix
        of block-updated source node embeddings."""
        x0, _ = self._input_leaf(a_s, tape)
        src, dst = complete_arcs(self.n_s)
        w = _arc_weights(x0, src, dst)
        x1 = gtb_forward(self.node_gtb, x0, src, dst, w, training, rng)  # n_s x n_t
        scaled, _ = _gram_minmax(x1, self.n_t)
        return scaled

    def forward(
        self,
        a_s,
        training: bool = False,
        rng: np.random.Generator | None = None,
        tape: Tape | None = None,
    ) -> ModelOutput:
        x0, tape = self._input_leaf(a_s, tape)
        edge_init = self.target_edge_init(x0, tape, training, rng)
        features = ad.reshape(
            ad.take_flat(edge_init, upper_flat_indices(self.n_t)),
            (self.dual_topology.m, 1),
        )
        src, dst = self.dual_topology.directed_arcs()
        weights = np.ones(src.size)
        refined = gtb_forward(self.dual_gtb, features, src, dst, weights, training, rng)
        upper = ad.reshape(refined, (self.dual_topology.m,))
        self.last_dual_stats = {
            "dual_feature_rows": int(features.shape[0]),
            "dual_directed_arcs": int(src.size),
        }
        return ModelOutput(
            matrix=devectorize(upper.values, self.n_t), upper=upper, tape=tape
        )


class DirectSrModel(_ModelBase):
    """Two stacked node-space blocks; prediction via Gram product + min-max."""

    kind = "direct_sr"

    def __init__(self, n_s: int, n_t: int, seed: int = 0):
        super().__init__(n_s, n_t, seed)
        rng = np.random.default_rng(seed)
        self.gtb1 = self._add_block(
            init_gtb("gtb1", n_s, n_t, NODE_SPACE_HEADS, rng, dropout_p=NODE_SPACE_DROPOUT)
        )
        self.gtb2 = self._add_block(
            init_gtb("gtb2", n_t, n_t, NODE_SPACE_HEADS, rng, dropout_p=NODE_SPACE_DROPOUT)
        )

    def forward(
        self,
        a_s,
        training: bool = False,
        rng: np.random.Generator | None = None,
        tape: Tape | None = None,
    ) -> ModelOutput:
        x0, tape = self._input_leaf(a_s, tape)
        src, dst = complete_arcs(self.n_s)
        w = _arc_weights(x0, src, dst)
        hidden = gtb_forward(self.gtb1, x0, src, dst, w, training, rng)
        z = gtb_forward(self.gtb2, hidden, src, dst, w, training, rng)  # n_s x n_t
        _, upper = _gram_minmax(z, self.n_t)
        return ModelOutput(
            matrix=devectorize(upper.values, self.n_t), upper=upper, tape=tape
        )


class AutoencoderModel(_ModelBase):
    """DirectSR-style encoder plus a mirrored decoder back to source size."""

    kind = "autoencoder"
    recon_weight = 1.0

    def __init__(self, n_s: int, n_t: int, seed: int = 0):
        super().__init__(n_s, n_t, seed)
        rng = np.random.default_rng(seed)
        self.enc1 = self._add_block(
            init_gtb("enc1", n_s, n_t, NODE_SPACE_HEADS, rng, dropout_p=NODE_SPACE_DROPOUT)
        )
        self.enc2 = self._add_block(
            init_gtb("enc2", n_t, n_t, NODE_SPACE_HEADS, rng, dropout_p=NODE_SPACE_DROPOUT)
        )
        self.dec1 = self._add_block(
            init_gtb("dec1", n_t, n_s, NODE_SPACE_HEADS, rng, dropout_p=NODE_SPACE_DROPOUT)
        )
        self.dec2 = self._add_block(
            init_gtb("dec2", n_s, n_s, NODE_SPACE_HEADS, rng, dropout_p=NODE_SPACE_DROPOUT)
        )

    def forward(
        self,
        a_s,
        training: bool = False,
        rng: np.random.Generator | None = None,
        tape: Tape | None = None,
    ) -> ModelOutput:
        x0, tape = self._input_leaf(a_s, tape)
        src, dst = complete_arcs(self.n_s)
        w = _arc_weights(x0, src, dst)
        hidden = gtb_forward(self.enc1, x0, src, dst, w, training, rng)
        z_enc = gtb_forward(self.enc2, hidden, src, dst, w, training, rng)
        _, pred_upper = _gram_minmax(z_enc, self.n_t)

        # decoder sees the prediction as both node features and edge weights;
        # keeping it on the tape lets the reconstruction loss reach the encoder
        pred_sym = ad.symmetric_from_upper(pred_upper, self.n_t)
        dsrc, ddst = complete_arcs(self.n_t)
        dweights = _arc_weights(pred_sym, dsrc, ddst)
        dec_hidden = gtb_forward(self.dec1, pred_sym, dsrc, ddst, dweights, training, rng)
        z_dec = gtb_forward(self.dec2, dec_hidden, dsrc, ddst, dweights, training, rng)
        _, recon_upper = _gram_minmax(z_dec, self.n_s)

        return ModelOutput(
            matrix=devectorize(pred_upper.values, self.n_t),
            upper=pred_upper,
            tape=tape,
            recon_matrix=devectorize(recon_upper.values, self.n_s),
            recon_upper=recon_upper,
        )

    def loss(self, output: ModelOutput, a_t: np.ndarray, a_s: np.ndarray) -> Tensor:
        pred_term = ad.l1_loss(output.upper, Tensor(upper_tri_vectorize(a_t)))
        recon_term = ad.l1_loss(output.recon_upper, Tensor(upper_tri_vectorize(a_s)))
        return ad.add(pred_term, ad.scale(recon_term, self.recon_weight))


MODEL_KINDS = {
    "stp_gsr": StpGsrModel,
    "direct_sr": DirectSrModel,
    "autoencoder": AutoencoderModel,
}


def build_model(kind: str, n_s: int, n_t: int, seed: int = 0) -> _ModelBase:
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValidationError(
            f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}"
        ) from None
    return cls(n_s, n_t, seed)
