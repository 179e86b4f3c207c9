# DQN agent, replay buffer and auxiliary losses
