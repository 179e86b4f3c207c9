# Experiment orchestration: config, seeding, checkpoints, sweeps, campaign, report
