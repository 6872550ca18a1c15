"""Noise-injected deep offline RL (TD3-AN, IQL-AN) on small numpy networks."""
