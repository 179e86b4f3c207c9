"""Auxiliary objectives sharing the representation trunk.

Every task owns its heads and returns, besides its unweighted loss, the weighted
gradient with respect to each block of trunk features it asked for. Block 0 is always
the features of the replay batch used by the TD update; ``prepare`` may request extra
observation blocks (NAS asks for the next observations, ATC for augmented anchors).
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from agents.replay import Batch, ReplayBuffer
from models.configs import AuxConfig, AuxKind
from tensor_nn import ops
from tensor_nn.layers import Linear
from tensor_nn.network import Sequential, build_decoder, build_mlp
from utils.errors import UsageError

logger = logging.getLogger(__name__)


@dataclass
class AuxContext:
    phi_next_target: np.ndarray  # target-trunk features of the batch's next observations


def total_loss(td_loss: float, aux_loss: float, weight: float) -> float:
    return td_loss + weight * aux_loss


def select_by_action(out: np.ndarray, actions: np.ndarray, width: int) -> np.ndarray:
    """(B, A*width) -> (B, width) slice of each row's action"""
    return out.reshape(len(out), -1, width)[np.arange(len(out)), actions]


def scatter_by_action(grad: np.ndarray, actions: np.ndarray, n_actions: int) -> np.ndarray:
    b, width = grad.shape
    full = np.zeros((b, n_actions, width), dtype=grad.dtype)
    full[np.arange(b), actions] = grad
    return full.reshape(b, n_actions * width)


def momentum_update(target: Dict[str, np.ndarray], online: Dict[str, np.ndarray], tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, in place"""
    if set(target) != set(online):
        raise UsageError(f"Momentum parameter names differ: {sorted(set(target) ^ set(online))}")
    for name, value in target.items():
        if value.shape != online[name].shape:
            raise UsageError(f"Momentum shape mismatch for {name}: {value.shape} vs {online[name].shape}")
        value *= (1.0 - tau)
        value += tau * online[name]


def shift_batch(obs: np.ndarray, pad: int, prob: float, rng: np.random.Generator) -> np.ndarray:
    return np.stack([ops.random_shift(o, pad, prob, rng) for o in obs])


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of range(n) with no fixed points; identity when n < 2"""
    if n < 2:
        return np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def info_nce(logits: np.ndarray) -> Tuple[float, np.ndarray]:
    """Cross-entropy with the diagonal as positives; returns (loss, d loss / d logits)"""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    log_z = np.log(exp.sum(axis=1))
    b = len(logits)
    loss = float(np.mean(log_z - np.diag(shifted)))
    grad = exp / exp.sum(axis=1, keepdims=True)
    grad[np.arange(b), np.arange(b)] -= 1.0
    return loss, grad / b


def sf_target(phi_next: np.ndarray, psi_next: np.ndarray, nonterminal: np.ndarray, lam: float) -> np.ndarray:
    """(1 - lambda) phi' + lambda psi'(phi', a'), the bootstrap dropped at the goal"""
    return (1.0 - lam) * phi_next + lam * nonterminal[:, None] * psi_next


class AuxTask(ABC):
    kind: AuxKind

    def __init__(self, cfg: AuxConfig, feature_width: int, n_actions: int):
        self.cfg = cfg
        self.weight = cfg.weight
        self.feature_width = feature_width
        self.n_actions = n_actions

    def __repr__(self):
        return f'<{type(self).__name__} weight={self.weight}>'

    @abstractmethod
    def modules(self) -> Dict[str, Sequential]:
        """Trainable heads, keyed by their parameter-set prefix"""

    def prepare(self, batch: Batch, replay: Optional[ReplayBuffer], rng: np.random.Generator) -> List[np.ndarray]:
        return []

    @abstractmethod
    def loss_and_backward(self, phis: List[np.ndarray], batch: Batch,
                          context: AuxContext) -> Tuple[float, List[np.ndarray]]:
        pass

    def bind(self, trunk: Sequential) -> None:
        pass

    def after_update(self, trunk: Sequential) -> None:
        pass

    def sync_target(self) -> None:
        pass


class ReconstructionTask(AuxTask):
    """IR: decode the input image from the features"""
    kind = AuxKind.IR

    def __init__(self, cfg, feature_width, n_actions, rng, dtype=ops.real_type):
        super().__init__(cfg, feature_width, n_actions)
        self.decoder = build_decoder(feature_width, rng, dtype=dtype)

    def modules(self):
        return {'aux_decoder': self.decoder}

    def loss_and_backward(self, phis, batch, context):
        recon = self.decoder(phis[0])
        loss = ops.mse(recon, batch.obs)
        dphi = self.decoder.backward(self.weight * ops.mse_grad(recon, batch.obs))
        return loss, [dphi]


class NextStateTask(AuxTask):
    """NAS: predict phi_{t+1} - phi_t from (phi_t, a_t), hinge away from another transition"""
    kind = AuxKind.NAS

    def __init__(self, cfg, feature_width, n_actions, rng, dtype=ops.real_type):
        super().__init__(cfg, feature_width, n_actions)
        self.head = build_mlp('nas', feature_width, (cfg.hidden,), n_actions * feature_width, rng, dtype)
        self._partners: Optional[np.ndarray] = None

    def modules(self):
        return {'aux_nas': self.head}

    def prepare(self, batch, replay, rng):
        self._partners = derangement(len(batch), rng)
        return [batch.next_obs]

    def loss_and_backward(self, phis, batch, context):
        phi, phi_next = phis[0], phis[1]
        b, d = phi.shape
        if self._partners is None or len(self._partners) != b:
            raise UsageError("NAS negatives must be drawn by prepare() for this batch first")
        delta = phi_next - phi
        pred = select_by_action(self.head(phi), batch.actions, d)

        positive = ops.mse(pred, delta)
        d_pred = ops.mse_grad(pred, delta)
        d_delta = -d_pred

        # negative: the prediction made for a random other transition in the batch
        partners = self._partners
        diff = pred[partners] - delta
        dist2 = np.sum(np.square(diff), axis=1)
        active = (dist2 < 1.0).astype(phi.dtype)
        hinge = float(np.mean(np.maximum(0.0, 1.0 - dist2)))
        d_diff = (-2.0 / b) * active[:, None] * diff
        np.add.at(d_pred, partners, d_diff)
        d_delta = d_delta - d_diff

        d_pred *= self.weight
        d_delta *= self.weight
        dphi = self.head.backward(scatter_by_action(d_pred, batch.actions, self.n_actions)) - d_delta
        return positive + hinge, [dphi, d_delta]


class SuccessorFeatureTask(AuxTask):
    kind = AuxKind.SF

    def __init__(self, cfg, feature_width, n_actions, rng, dtype=ops.real_type):
        super().__init__(cfg, feature_width, n_actions)
        self.psi = build_mlp('sf', feature_width, (cfg.hidden,), n_actions * feature_width, rng, dtype)
        self.reward = Sequential('sf_reward', [Linear('out', feature_width, 1, rng, dtype)])
        self.psi_target = self.psi.clone()

    def modules(self):
        return {'aux_sf': self.psi, 'aux_sf_reward': self.reward}

    def loss_and_backward(self, phis, batch, context):
        phi = phis[0]
        d = phi.shape[1]
        psi_next = select_by_action(self.psi_target(context.phi_next_target), batch.next_actions, d)
        target = sf_target(context.phi_next_target, psi_next, batch.nonterminal, self.cfg.sf_lambda)
        pred = select_by_action(self.psi(phi), batch.actions, d)
        sf_loss = ops.mse(pred, target)
        d_pred = self.weight * ops.mse_grad(pred, target)
        dphi = self.psi.backward(scatter_by_action(d_pred, batch.actions, self.n_actions))

        r_pred = self.reward(phi)[:, 0]
        r_loss = ops.mse(r_pred, batch.rewards)
        dphi = dphi + self.reward.backward(self.weight * ops.mse_grad(r_pred, batch.rewards)[:, None])
        return sf_loss + r_loss, [dphi]

    def sync_target(self):
        self.psi_target.load_state_dict(self.psi.state_dict())


class RewardTask(AuxTask):
    kind = AuxKind.REWARD

    def __init__(self, cfg, feature_width, n_actions, rng, dtype=ops.real_type):
        super().__init__(cfg, feature_width, n_actions)
        self.head = build_mlp('reward', feature_width, (cfg.hidden,), n_actions, rng, dtype)

    def modules(self):
        return {'aux_reward': self.head}

    def loss_and_backward(self, phis, batch, context):
        out = self.head(phis[0])
        pred = out[np.arange(len(out)), batch.actions]
        loss = ops.mse(pred, batch.rewards)
        d_out = np.zeros_like(out)
        d_out[np.arange(len(out)), batch.actions] = self.weight * ops.mse_grad(pred, batch.rewards)
        return loss, [self.head.backward(d_out)]


class PositionTask(AuxTask):
    """XY: regress the agent's (row, col) cell"""
    kind = AuxKind.XY

    def __init__(self, cfg, feature_width, n_actions, rng, dtype=ops.real_type):
        super().__init__(cfg, feature_width, n_actions)
        self.head = build_mlp('xy', feature_width, (cfg.hidden,), 2, rng, dtype)

    def modules(self):
        return {'aux_xy': self.head}

    def loss_and_backward(self, phis, batch, context):
        pred = self.head(phis[0])
        target = batch.positions.astype(pred.dtype)
        loss = ops.mse(pred, target)
        return loss, [self.head.backward(self.weight * ops.mse_grad(pred, target))]


class VirtualValueTask(AuxTask):
    """Action values for fixed virtual goals, learned by TD with their own target head"""

    def __init__(self, cfg, feature_width, n_actions, rng, dtype=ops.real_type):
        super().__init__(cfg, feature_width, n_actions)
        self.kind = cfg.kind
        self.goals = np.asarray(cfg.virtual_goals, dtype=np.int64)
        hidden = (cfg.hidden, cfg.hidden)
        self.head = build_mlp('vvf', feature_width, hidden, len(self.goals) * n_actions, rng, dtype)
        self.head_target = self.head.clone()

    def modules(self):
        return {'aux_vvf': self.head}

    def loss_and_backward(self, phis, batch, context):
        b, g, a = len(batch), len(self.goals), self.n_actions
        q = self.head(phis[0]).reshape(b, g, a)
        q_next = self.head_target(context.phi_next_target).reshape(b, g, a).max(axis=2)

        entered = np.all(batch.next_positions[:, None, :] == self.goals[None, :, :], axis=2).astype(q.dtype)
        target = entered + self.cfg.aux_gamma * (1.0 - entered) * q_next

        rows, cols = np.arange(b)[:, None], np.arange(g)[None, :]
        q_sa = q[rows, cols, batch.actions[:, None]]
        loss = float(np.sum(np.mean(np.square(q_sa - target), axis=0)))
        d_q = np.zeros_like(q)
        d_q[rows, cols, batch.actions[:, None]] = self.weight * (2.0 / b) * (q_sa - target)
        return loss, [self.head.backward(d_q.reshape(b, g * a))]

    def sync_target(self):
        self.head_target.load_state_dict(self.head.state_dict())


class ContrastiveTask(AuxTask):
    """ATC: bilinear InfoNCE between online predictions and momentum-encoded future observations"""
    kind = AuxKind.ATC

    def __init__(self, cfg, feature_width, n_actions, rng, dtype=ops.real_type):
        super().__init__(cfg, feature_width, n_actions)
        atc = cfg.atc
        self.projection = Sequential('atc_proj', [Linear('fc', feature_width, atc.embed_dim, rng, dtype)])
        self.predictor = build_mlp('atc_pred', atc.embed_dim, (atc.predictor_hidden,), atc.embed_dim, rng, dtype)
        self.bilinear = Sequential('atc_bilinear', [Linear('W', atc.embed_dim, atc.embed_dim, rng, dtype, bias=False)])
        self.momentum_projection = self.projection.clone()
        self.momentum_trunk: Optional[Sequential] = None
        self._future: Optional[np.ndarray] = None

    def modules(self):
        return {'aux_atc_proj': self.projection, 'aux_atc_pred': self.predictor, 'aux_atc_bilinear': self.bilinear}

    def bind(self, trunk):
        self.momentum_trunk = trunk.clone()

    def prepare(self, batch, replay, rng):
        atc = self.cfg.atc
        pairs = replay.sample_offset_pairs(len(batch), atc.temporal_offset, rng) if replay is not None else None
        if pairs is None:
            self._future = None
            return []
        anchors, future = pairs
        self._future = shift_batch(future, atc.shift_pad, atc.shift_prob, rng)
        return [shift_batch(anchors, atc.shift_pad, atc.shift_prob, rng)]

    def loss_and_backward(self, phis, batch, context):
        if self._future is None:
            return 0.0, [np.zeros_like(phis[0])]
        u = self.projection(phis[1])
        p = u + self.predictor(u)
        c = self.momentum_projection(self.momentum_trunk(self._future))
        logits = self.bilinear(p) @ c.T
        loss, d_logits = info_nce(logits)

        d_pw = (self.weight * d_logits) @ c
        d_p = self.bilinear.backward(d_pw.astype(p.dtype))
        d_u = d_p + self.predictor.backward(d_p)
        return loss, [np.zeros_like(phis[0]), self.projection.backward(d_u)]

    def after_update(self, trunk):
        tau = self.cfg.atc.tau
        momentum_update(self.momentum_trunk.parameters(), trunk.parameters(), tau)
        momentum_update(self.momentum_projection.parameters(), self.projection.parameters(), tau)


_TASKS = {
    AuxKind.IR: ReconstructionTask,
    AuxKind.NAS: NextStateTask,
    AuxKind.SF: SuccessorFeatureTask,
    AuxKind.REWARD: RewardTask,
    AuxKind.XY: PositionTask,
    AuxKind.VIRTUAL_VF1: VirtualValueTask,
    AuxKind.VIRTUAL_VF5: VirtualValueTask,
    AuxKind.ATC: ContrastiveTask,
}


def build_aux_task(cfg: AuxConfig, feature_width: int, n_actions: int, rng: np.random.Generator,
                   dtype=ops.real_type) -> Optional[AuxTask]:
    """None for kind=none: no heads, zero auxiliary loss"""
    if not cfg.enabled:
        return None
    task = _TASKS[cfg.kind](cfg, feature_width, n_actions, rng, dtype)
    logger.debug(f"Built auxiliary task {task!r}")
    return task
