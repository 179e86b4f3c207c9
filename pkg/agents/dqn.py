"""DQN agent and the two training stages.

Stage 1 learns a representation on the training task (optionally with an auxiliary
loss) and freezes it the first time 100 consecutive episodes reach the goal within 100
steps. Stage 2 trains a fresh value head on a transfer task on top of a frozen trunk
(or one of the baselines).
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from agents.aux_losses import AuxContext, build_aux_task, shift_batch, total_loss
from agents.replay import Batch, ReplayBuffer
from analysis.properties import InterferenceTracker, measure_representation
from envs.gridworld import NUM_ACTIONS, MazeEnv
from models.configs import AgentConfig, AuxConfig, Baseline
from models.maze import EnvConfig, MazeMap
from models.records import InterferenceRecord, ProbeSet, PropertyReport, ReturnRecord, TrainingTrace
from tensor_nn import ops
from tensor_nn.network import (
    OBS_SHAPE, ParameterSet, Sequential, build_input_trunk, build_trunk, build_value_head,
)
from tensor_nn.optim import Adam
from utils.errors import NumericalError, UsageError

logger = logging.getLogger(__name__)

# shift used by the augmentation-only agent
AUGMENT_PROB = 0.1
AUGMENT_PAD = 4


def select_action(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """epsilon-greedy; argmax ties go to the lowest action index"""
    if not np.all(np.isfinite(q_values)):
        raise NumericalError(f"Non-finite action values {q_values}")
    explore = rng.random() < epsilon
    if explore:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def td_targets(rewards: np.ndarray, discounts: np.ndarray, q_next_target: np.ndarray) -> np.ndarray:
    return rewards + discounts * q_next_target.max(axis=1)


class EarlySaver:
    """Fires once, at the first run of ``window`` consecutive goal-reaching episodes"""

    def __init__(self, window: int = 100, max_length: int = 100):
        self.window = window
        self.max_length = max_length
        self.streak = 0
        self.triggered_at: Optional[int] = None
        self.episodes = 0

    def observe(self, episode_length: int, reached_goal: bool) -> bool:
        self.episodes += 1
        if reached_goal and episode_length <= self.max_length:
            self.streak += 1
        else:
            self.streak = 0
        if self.triggered_at is None and self.streak >= self.window:
            self.triggered_at = self.episodes
            return True
        return False


class DQNAgent:
    def __init__(self, cfg: AgentConfig, init_rng: np.random.Generator, aux_rng: np.random.Generator,
                 trunk: Optional[Sequential] = None, train_trunk: bool = True, n_actions: int = NUM_ACTIONS,
                 obs_shape: Tuple[int, int, int] = OBS_SHAPE, dtype=ops.real_type):
        self.cfg = cfg
        self.aux_rng = aux_rng
        self.train_trunk = train_trunk
        self.trunk = trunk if trunk is not None else build_trunk(cfg.activation, cfg.fta, init_rng, obs_shape, dtype)
        self.feature_width = int(np.prod(self.trunk(np.zeros((1,) + tuple(obs_shape), dtype=dtype)).shape[1:]))
        self.value = build_value_head(cfg.value_head, self.feature_width, init_rng, cfg.value_hidden, n_actions, dtype)
        self.target_trunk = self.trunk.clone() if train_trunk else self.trunk
        self.target_value = self.value.clone()

        self.aux = build_aux_task(cfg.aux, self.feature_width, n_actions, init_rng, dtype)
        self.params = ParameterSet()
        if train_trunk:
            self.params.add('trunk', self.trunk)
        self.params.add('value', self.value)
        if self.aux is not None:
            self.aux.bind(self.trunk)
            for name, module in self.aux.modules().items():
                self.params.add(name, module)

        self.optimizer = Adam(cfg.learning_rate)
        self.updates = 0
        self.syncs = 0

    def __repr__(self):
        aux = self.aux.kind.value if self.aux else 'none'
        return (f'<DQNAgent {self.cfg.activation.value} d={self.feature_width} aux={aux} '
                f'train_trunk={self.train_trunk} updates={self.updates}>')

    def features(self, obs: np.ndarray) -> np.ndarray:
        return self.trunk(obs)

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return self.value(self.trunk(obs))

    def act(self, obs: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
        return select_action(self.q_values(obs[None])[0], epsilon, rng)

    def augment(self, batch: Batch) -> Batch:
        return replace(
            batch,
            obs=shift_batch(batch.obs, AUGMENT_PAD, AUGMENT_PROB, self.aux_rng),
            next_obs=shift_batch(batch.next_obs, AUGMENT_PAD, AUGMENT_PROB, self.aux_rng),
        )

    def compute_gradients(self, batch: Batch, replay: Optional[ReplayBuffer] = None, use_td: bool = True,
                          use_aux: bool = True) -> Dict[str, float]:
        """Forward the trunk once over every requested block, then backpropagate TD and auxiliary losses"""
        blocks = [batch.obs]
        if use_aux and self.aux is not None:
            blocks += self.aux.prepare(batch, replay, self.aux_rng)
        sizes = np.cumsum([len(block) for block in blocks])[:-1]
        phis = np.split(self.trunk(np.concatenate(blocks)), sizes)

        phi_next_target = self.target_trunk(batch.next_obs)
        targets = td_targets(batch.rewards, batch.discounts, self.target_value(phi_next_target))

        rows = np.arange(len(batch))
        q = self.value(phis[0])
        q_sa = q[rows, batch.actions]
        td_loss = ops.mse(q_sa, targets)

        self.params.zero_grad()
        d_phis = [np.zeros_like(phi) for phi in phis]
        if use_td:
            d_q = np.zeros_like(q)
            d_q[rows, batch.actions] = ops.mse_grad(q_sa, targets)
            d_phis[0] += self.value.backward(d_q)

        aux_loss, weight = 0.0, 0.0
        if use_aux and self.aux is not None:
            weight = self.aux.weight
            aux_loss, aux_grads = self.aux.loss_and_backward(phis, batch, AuxContext(phi_next_target))
            for i, grad in enumerate(aux_grads):
                d_phis[i] += grad

        if self.train_trunk:
            self.trunk.backward(np.concatenate(d_phis))
        return {'td_loss': td_loss, 'aux_loss': aux_loss, 'loss': total_loss(td_loss, aux_loss, weight)}

    def update(self, batch: Batch, replay: Optional[ReplayBuffer] = None) -> Dict[str, float]:
        """One Adam step on trunk (if trainable), value head and auxiliary heads"""
        if self.cfg.augment:
            batch = self.augment(batch)
        losses = self.compute_gradients(batch, replay)
        ops.check_finite(np.asarray(losses['loss']), 'total loss')
        self.optimizer.step(self.params.parameters(), self.params.gradients())
        if self.aux is not None:
            self.aux.after_update(self.trunk)
        self.updates += 1
        return losses

    def sync_target(self) -> None:
        if self.train_trunk:
            self.target_trunk.load_state_dict(self.trunk.state_dict())
        self.target_value.load_state_dict(self.value.state_dict())
        if self.aux is not None:
            self.aux.sync_target()
        self.syncs += 1


@dataclass
class RunOutcome:
    trace: TrainingTrace
    trunk_state: Dict[str, np.ndarray]
    value_state: Dict[str, np.ndarray]
    converged: bool
    reports: List[PropertyReport] = field(default_factory=list)


def episode_return(length: int, reached: bool, cfg: EnvConfig) -> float:
    return cfg.reward_goal * cfg.gamma ** (length - 1) if reached else 0.0


def _run(agent: DQNAgent, env: MazeEnv, cfg: AgentConfig, steps: int, streams, label: str,
         probe: Optional[ProbeSet] = None, saver: Optional[EarlySaver] = None,
         percentile: float = 0.9) -> RunOutcome:
    eps_rng, replay_rng = streams.get('epsilon'), streams.get('replay')
    replay = ReplayBuffer(cfg.buffer_capacity)
    trace = TrainingTrace()
    tracker = InterferenceTracker(probe, agent.q_values) if probe is not None else None
    outcome = RunOutcome(trace=trace, trunk_state={}, value_state={}, converged=False,
                         reports=trace.property_snapshots)

    def snapshot(step: int, frozen: bool) -> None:
        if probe is None:
            return
        outcome.reports.append(measure_representation(
            probe, agent.features, agent.value, label, step,
            interference_values=trace.interference_values(), percentile=percentile, frozen=frozen,
        ))

    obs, _ = env.reset()
    pending, episode, length = None, 0, 0
    for t in range(1, steps + 1):
        action = agent.act(obs, cfg.epsilon_at(t - 1), eps_rng)
        if pending is not None:
            replay.add(pending, next_action=action, episode=episode)
            pending = None

        obs_next, _, terminated, truncated, info = env.step(action)
        transition = info['transition']
        length += 1
        if terminated or truncated:
            if terminated:
                replay.add(transition, next_action=0, episode=episode)
            trace.episode_lengths.append(length)
            trace.episode_returns.append(episode_return(length, terminated, env.cfg))
            froze = saver is not None and saver.observe(length, terminated)
            episode, length = episode + 1, 0
            obs = env.reset()[0] if terminated else obs_next
            if froze:
                trace.freeze_step = t
                outcome.converged = True
                outcome.trunk_state = agent.trunk.state_dict()
                outcome.value_state = agent.value.state_dict()
                logger.info(f"{label}: early-saving criterion met at step {t} (episode {episode})")
                snapshot(t, frozen=True)
        else:
            pending = transition
            obs = obs_next

        if len(replay) >= cfg.batch_size:
            agent.update(replay.sample(cfg.batch_size, replay_rng), replay)
            if agent.updates % cfg.target_sync_period == 0:
                if tracker is not None:
                    trace.interference.append(InterferenceRecord(agent.syncs, t, tracker.measure()))
                agent.sync_target()

        if t % cfg.record_interval == 0:
            recent = trace.episode_returns[-cfg.return_window:]
            mean_return = float(np.mean(recent)) if recent else 0.0
            trace.returns.append(ReturnRecord(step=t, mean_return=mean_return, episodes=len(trace.episode_returns)))
            logger.info(f"{label}: step {t} mean return {mean_return:.4f} over {len(recent)} episodes")
        if probe is not None and t % cfg.property_interval == 0:
            snapshot(t, frozen=False)

        trace.steps = t
        if outcome.converged and saver is not None and not cfg.continue_after_freeze:
            break

    return outcome


def train_stage1(maze: MazeMap, env_cfg: EnvConfig, cfg: AgentConfig, streams, probe: Optional[ProbeSet] = None,
                 label: str = 'stage1', percentile: float = 0.9) -> RunOutcome:
    """Learn a representation on the training task and return it frozen at the early-saving point"""
    agent = DQNAgent(cfg, streams.get('init'), streams.get('aux'))
    env = MazeEnv(maze, env_cfg, rng=streams.get('env'))
    saver = EarlySaver(cfg.early_save_window, cfg.early_save_max_length)
    logger.info(f"{label}: training {agent!r} for {cfg.train_steps} steps at lr={cfg.learning_rate}")

    outcome = _run(agent, env, cfg, cfg.train_steps, streams, label, probe, saver, percentile)
    if not outcome.converged:
        logger.warning(f"{label}: early-saving criterion never met; keeping the final-step representation")
        outcome.trunk_state = agent.trunk.state_dict()
        outcome.value_state = agent.value.state_dict()
        if probe is not None:
            outcome.reports.append(measure_representation(
                probe, agent.features, agent.value, label, outcome.trace.steps,
                interference_values=outcome.trace.interference_values(), percentile=percentile, frozen=True,
            ))
    outcome.trace.converged = outcome.converged
    return outcome


def transfer_trunk(cfg: AgentConfig, init_rng: np.random.Generator, baseline: Optional[Baseline] = None,
                   trunk_state: Optional[Dict[str, np.ndarray]] = None) -> Tuple[Optional[Sequential], bool]:
    """(trunk, trainable) for a stage-2 run; (None, True) asks the agent for a fresh trainable trunk"""
    if baseline is Baseline.SCRATCH:
        return None, True
    if baseline is Baseline.RANDOM:
        return build_trunk(cfg.activation, cfg.fta, init_rng), False
    if baseline is Baseline.INPUT:
        return build_input_trunk(), False
    if trunk_state is None:
        raise UsageError("Stage 2 needs either a baseline or a frozen representation")
    trunk = build_trunk(cfg.activation, cfg.fta, init_rng)
    trunk.load_state_dict(trunk_state)
    return trunk, False


def train_stage2(maze: MazeMap, env_cfg: EnvConfig, cfg: AgentConfig, streams,
                 trunk_state: Optional[Dict[str, np.ndarray]] = None, baseline: Optional[Baseline] = None,
                 label: str = 'stage2') -> RunOutcome:
    """Fresh value head, no auxiliary loss, on top of a frozen trunk or a baseline"""
    cfg = replace(cfg, aux=AuxConfig())
    init_rng = streams.get('init')
    trunk, trainable = transfer_trunk(cfg, init_rng, baseline, trunk_state)
    agent = DQNAgent(cfg, init_rng, streams.get('aux'), trunk=trunk, train_trunk=trainable)
    env = MazeEnv(maze, env_cfg, rng=streams.get('env'))
    logger.info(f"{label}: transfer to goal {env_cfg.goal} with {agent!r}, lr={cfg.learning_rate}")

    outcome = _run(agent, env, cfg, cfg.transfer_steps, streams, label)
    outcome.trunk_state = agent.trunk.state_dict()
    outcome.value_state = agent.value.state_dict()
    outcome.converged = True
    return outcome
