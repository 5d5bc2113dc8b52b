"""Deterministic seed derivation for independent named RNG streams.

Every source of randomness in a run draws from its own numpy Generator whose
seed is a pure function of (master_seed, role, index), so runs replay exactly
and adding streams never perturbs existing ones.
"""

import hashlib

import numpy as np

ROLES = ("env", "policy_init", "critic_init", "objective_init", "sampler", "noise")


def seed_derivation(master_seed, role, index=0):
    """Derive a 64-bit stream seed; distinct (role, index) never collide."""
    if role not in ROLES:
        raise ValueError(f"unknown rng role {role!r}; choices: {ROLES}")
    payload = f"{int(master_seed)}:{role}:{int(index)}".encode()
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(master_seed, role, index=0):
    """numpy Generator for the derived stream."""
    return np.random.Generator(np.random.PCG64(seed_derivation(master_seed, role, index)))
