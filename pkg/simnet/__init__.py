"""Deterministisches Gossip-Netz mit Zensor-Adversaries."""
